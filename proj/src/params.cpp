#include "raydet/params.hpp"

#include <cmath>
#include <cstring>
#include <fstream>
#include <stdexcept>

#include "raydet/errors.hpp"
#include "raydet/rng.hpp"

namespace raydet::nn {

Tensor& ParamStore::create_weight(const std::string& name, int fan_in, int fan_out) {
  if (params_.count(name)) throw std::invalid_argument("duplicate parameter: " + name);
  Tensor t(fan_in, fan_out);
  double bound = std::sqrt(6.0 / double(fan_in + fan_out));
  Rng rng(seed_, Rng::hash_name(name));
  for (double& v : t.data) v = rng.uniform(-bound, bound);
  grads_[name] = Tensor(fan_in, fan_out);
  return params_[name] = std::move(t);
}

Tensor& ParamStore::create_zeros(const std::string& name, int rows, int cols) {
  if (params_.count(name)) throw std::invalid_argument("duplicate parameter: " + name);
  grads_[name] = Tensor(rows, cols);
  return params_[name] = Tensor(rows, cols);
}

Tensor& ParamStore::value(const std::string& name) {
  auto it = params_.find(name);
  if (it == params_.end()) throw std::invalid_argument("unknown parameter: " + name);
  return it->second;
}

const Tensor& ParamStore::value(const std::string& name) const {
  auto it = params_.find(name);
  if (it == params_.end()) throw std::invalid_argument("unknown parameter: " + name);
  return it->second;
}

Tensor& ParamStore::grad(const std::string& name) {
  auto it = grads_.find(name);
  if (it == grads_.end()) throw std::invalid_argument("unknown parameter: " + name);
  return it->second;
}

void ParamStore::zero_grads() {
  for (auto& [name, g] : grads_) g.fill(0.0);
}

void SgdOptimizer::step(ParamStore& store) {
  for (auto& [name, p] : store.all_mutable()) {
    Tensor& g = store.grad(name);
    Tensor& v = velocity_[name];
    if (v.empty()) v = Tensor(p.rows, p.cols);
    for (std::size_t k = 0; k < p.size(); ++k) {
      v.data[k] = mu_ * v.data[k] - lr_ * g.data[k];
      p.data[k] += v.data[k];
    }
  }
}

namespace {

constexpr char kMagic[8] = {'R', 'D', 'C', 'K', 'P', 'T', '0', '1'};

void write_u16(std::ostream& os, std::uint16_t v) {
  unsigned char b[2] = {(unsigned char)(v & 0xff), (unsigned char)(v >> 8)};
  os.write(reinterpret_cast<char*>(b), 2);
}
void write_u32(std::ostream& os, std::uint32_t v) {
  unsigned char b[4];
  for (int i = 0; i < 4; ++i) b[i] = (unsigned char)((v >> (8 * i)) & 0xff);
  os.write(reinterpret_cast<char*>(b), 4);
}
std::uint16_t read_u16(std::istream& is) {
  unsigned char b[2];
  is.read(reinterpret_cast<char*>(b), 2);
  return std::uint16_t(b[0]) | (std::uint16_t(b[1]) << 8);
}
std::uint32_t read_u32(std::istream& is) {
  unsigned char b[4];
  is.read(reinterpret_cast<char*>(b), 4);
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= std::uint32_t(b[i]) << (8 * i);
  return v;
}

void write_doubles_le(std::ostream& os, const double* d, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) {
    std::uint64_t bits;
    std::memcpy(&bits, d + i, 8);
    unsigned char b[8];
    for (int j = 0; j < 8; ++j) b[j] = (unsigned char)((bits >> (8 * j)) & 0xff);
    os.write(reinterpret_cast<char*>(b), 8);
  }
}
void read_doubles_le(std::istream& is, double* d, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) {
    unsigned char b[8];
    is.read(reinterpret_cast<char*>(b), 8);
    std::uint64_t bits = 0;
    for (int j = 0; j < 8; ++j) bits |= std::uint64_t(b[j]) << (8 * j);
    std::memcpy(d + i, &bits, 8);
  }
}
void write_u64s_le(std::ostream& os, const std::uint64_t* d, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) {
    unsigned char b[8];
    for (int j = 0; j < 8; ++j) b[j] = (unsigned char)((d[i] >> (8 * j)) & 0xff);
    os.write(reinterpret_cast<char*>(b), 8);
  }
}
void read_u64s_le(std::istream& is, std::uint64_t* d, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) {
    unsigned char b[8];
    is.read(reinterpret_cast<char*>(b), 8);
    std::uint64_t v = 0;
    for (int j = 0; j < 8; ++j) v |= std::uint64_t(b[j]) << (8 * j);
    d[i] = v;
  }
}

}  // namespace

void Checkpoint::save(const std::string& path) const {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw io_error("cannot write checkpoint: " + path);
  os.write(kMagic, 8);
  write_u32(os, std::uint32_t(f64.size() + u64.size()));
  for (const auto& [name, t] : f64) {
    write_u16(os, std::uint16_t(name.size()));
    os.write(name.data(), std::streamsize(name.size()));
    os.put(0);
    write_u32(os, std::uint32_t(t.rows));
    write_u32(os, std::uint32_t(t.cols));
    write_doubles_le(os, t.data.data(), t.size());
  }
  for (const auto& [name, v] : u64) {
    write_u16(os, std::uint16_t(name.size()));
    os.write(name.data(), std::streamsize(name.size()));
    os.put(1);
    write_u32(os, std::uint32_t(v.size()));
    write_u32(os, 1);
    write_u64s_le(os, v.data(), v.size());
  }
  if (!os) throw io_error("checkpoint write failed: " + path);
}

Checkpoint Checkpoint::load(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw io_error("cannot read checkpoint: " + path);
  char magic[8];
  is.read(magic, 8);
  if (!is || std::memcmp(magic, kMagic, 8) != 0)
    throw io_error("bad checkpoint magic: " + path);
  Checkpoint ck;
  std::uint32_t count = read_u32(is);
  for (std::uint32_t i = 0; i < count; ++i) {
    std::uint16_t len = read_u16(is);
    std::string name(len, '\0');
    is.read(name.data(), len);
    int dtype = is.get();
    std::uint32_t rows = read_u32(is);
    std::uint32_t cols = read_u32(is);
    if (!is) throw io_error("truncated checkpoint: " + path);
    if (dtype == 0) {
      Tensor t{int(rows), int(cols)};
      read_doubles_le(is, t.data.data(), t.size());
      ck.f64[name] = std::move(t);
    } else if (dtype == 1) {
      std::vector<std::uint64_t> v(std::size_t(rows) * cols);
      read_u64s_le(is, v.data(), v.size());
      ck.u64[name] = std::move(v);
    } else {
      throw io_error("unknown checkpoint dtype in " + path);
    }
  }
  if (!is) throw io_error("truncated checkpoint: " + path);
  return ck;
}

}  // namespace raydet::nn
