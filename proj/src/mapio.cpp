#include "raydet/mapio.hpp"

#include <cstdint>
#include <cstring>
#include <fstream>
#include <stdexcept>

#include "raydet/errors.hpp"

namespace raydet {

namespace {
constexpr char kMagic[8] = {'R', 'D', 'M', 'A', 'P', '0', '0', '1'};
constexpr char kDtype[4] = {'f', '6', '4', ' '};

void put_u32(std::ostream& os, std::uint32_t v) {
  unsigned char b[4];
  for (int i = 0; i < 4; ++i) b[i] = (unsigned char)((v >> (8 * i)) & 0xff);
  os.write(reinterpret_cast<char*>(b), 4);
}
std::uint32_t get_u32(std::istream& is) {
  unsigned char b[4];
  is.read(reinterpret_cast<char*>(b), 4);
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= std::uint32_t(b[i]) << (8 * i);
  return v;
}
}  // namespace

MapFile MapFile::wrap(int height, int width, int channels, std::vector<double> data) {
  if (data.size() != std::size_t(height) * width * channels)
    throw std::invalid_argument("MapFile: payload length != H*W*C");
  MapFile m;
  m.height = height;
  m.width = width;
  m.channels = channels;
  m.data = std::move(data);
  return m;
}

void MapFile::save(const std::string& path) const {
  if (data.size() != std::size_t(height) * width * channels)
    throw std::invalid_argument("MapFile: payload length != H*W*C");
  std::ofstream os(path, std::ios::binary);
  if (!os) throw io_error("cannot write map: " + path);
  os.write(kMagic, 8);
  os.write(kDtype, 4);
  put_u32(os, std::uint32_t(height));
  put_u32(os, std::uint32_t(width));
  put_u32(os, std::uint32_t(channels));
  for (double d : data) {
    std::uint64_t bits;
    std::memcpy(&bits, &d, 8);
    unsigned char b[8];
    for (int i = 0; i < 8; ++i) b[i] = (unsigned char)((bits >> (8 * i)) & 0xff);
    os.write(reinterpret_cast<char*>(b), 8);
  }
  if (!os) throw io_error("map write failed: " + path);
}

MapFile MapFile::load(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw io_error("cannot read map: " + path);
  char magic[8], dtype[4];
  is.read(magic, 8);
  is.read(dtype, 4);
  if (!is || std::memcmp(magic, kMagic, 8) != 0)
    throw io_error("bad map magic: " + path);
  if (std::memcmp(dtype, kDtype, 4) != 0) throw io_error("bad map dtype: " + path);
  MapFile m;
  m.height = int(get_u32(is));
  m.width = int(get_u32(is));
  m.channels = int(get_u32(is));
  m.data.resize(std::size_t(m.height) * m.width * m.channels);
  for (double& d : m.data) {
    unsigned char b[8];
    is.read(reinterpret_cast<char*>(b), 8);
    std::uint64_t bits = 0;
    for (int i = 0; i < 8; ++i) bits |= std::uint64_t(b[i]) << (8 * i);
    std::memcpy(&d, &bits, 8);
  }
  if (!is) throw io_error("truncated map: " + path);
  return m;
}

}  // namespace raydet
