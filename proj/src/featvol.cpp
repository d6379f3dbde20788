#include "raydet/featvol.hpp"

#include <cmath>
#include <cstring>
#include <fstream>
#include <stdexcept>

#include "raydet/errors.hpp"

namespace raydet {

void Extractor::ensure_params(nn::ParamStore& store) const {
  if (store.has(prefix + ".conv0")) return;
  store.create_weight(prefix + ".conv0", in_channels * 16, out_channels);
  store.create_zeros(prefix + ".bias0", out_channels, 1);
  store.create_weight(prefix + ".conv1", out_channels, out_channels);
  store.create_zeros(prefix + ".bias1", out_channels, 1);
}

Tensor Extractor::patches(const Image& img) const {
  if (img.width % 4 != 0 || img.height % 4 != 0)
    throw std::invalid_argument("extract_features: image dimensions not divisible by 4");
  if (img.channels != in_channels)
    throw std::invalid_argument("extract_features: channel mismatch");
  const int fw = img.width / 4, fh = img.height / 4;
  Tensor out(in_channels * 16, fw * fh);
  for (int fy = 0; fy < fh; ++fy)
    for (int fx = 0; fx < fw; ++fx) {
      double* col = out.col(fy * fw + fx);
      int k = 0;
      for (int dy = 0; dy < 4; ++dy)
        for (int dx = 0; dx < 4; ++dx)
          for (int c = 0; c < in_channels; ++c)
            col[k++] = img.at(fx * 4 + dx, fy * 4 + dy, c);
    }
  return out;
}

nn::NodeId Extractor::apply(nn::Tape& tape, nn::ParamStore& store,
                            const Image& img) const {
  nn::NodeId p = tape.input(patches(img));
  nn::NodeId w0 = tape.param(store.value(prefix + ".conv0"), &store.grad(prefix + ".conv0"));
  nn::NodeId b0 = tape.param(store.value(prefix + ".bias0"), &store.grad(prefix + ".bias0"));
  nn::NodeId w1 = tape.param(store.value(prefix + ".conv1"), &store.grad(prefix + ".conv1"));
  nn::NodeId b1 = tape.param(store.value(prefix + ".bias1"), &store.grad(prefix + ".bias1"));
  nn::NodeId h = tape.relu(tape.add_bias(tape.linear(w0, p), b0));
  return tape.add_bias(tape.linear(w1, h), b1);
}

FeatureMap extract_features(const Image& img, const Extractor& ext,
                            nn::ParamStore& store) {
  nn::Tape tape;
  nn::NodeId out = ext.apply(tape, store, img);
  FeatureMap fm;
  fm.channels = ext.out_channels;
  fm.width = img.width / 4;
  fm.height = img.height / 4;
  fm.data = tape.value(out);
  return fm;
}

BackprojectTable make_backproject_table(const std::vector<CameraIntrinsics>& cams,
                                        const std::vector<Pose>& poses,
                                        const GridSpec& grid, int feat_width,
                                        int feat_height) {
  if (cams.size() != poses.size())
    throw std::invalid_argument("backproject: one pose per camera required");
  const int nv = grid.n_voxels();
  BackprojectTable table;
  table.taps.resize(nv);
  table.hits.assign(nv, 0);
  for (int v = 0; v < nv; ++v) {
    Vec3 center = grid.center(v);
    auto& vt = table.taps[v];
    for (std::size_t i = 0; i < cams.size(); ++i) {
      auto pd = world_to_pixel(cams[i], poses[i], center);
      if (!pd) continue;
      if (pd->u < 0.0 || pd->u > cams[i].width - 1.0 || pd->v < 0.0 ||
          pd->v > cams[i].height - 1.0)
        continue;
      // image pixel -> stride-4 feature-grid coordinate (aligned centers)
      double uf = (pd->u + 0.5) / 4.0 - 0.5;
      double vf = (pd->v + 0.5) / 4.0 - 0.5;
      uf = std::min(std::max(uf, 0.0), double(feat_width - 1));
      vf = std::min(std::max(vf, 0.0), double(feat_height - 1));
      int x0 = std::min(int(uf), feat_width - 2 >= 0 ? feat_width - 2 : 0);
      int y0 = std::min(int(vf), feat_height - 2 >= 0 ? feat_height - 2 : 0);
      double fx = uf - x0, fy = vf - y0;
      nn::Tape::ViewTap tap;
      tap.map = int(i);
      tap.col[0] = y0 * feat_width + x0;
      tap.col[1] = y0 * feat_width + std::min(x0 + 1, feat_width - 1);
      tap.col[2] = std::min(y0 + 1, feat_height - 1) * feat_width + x0;
      tap.col[3] =
          std::min(y0 + 1, feat_height - 1) * feat_width + std::min(x0 + 1, feat_width - 1);
      tap.w[0] = (1 - fx) * (1 - fy);
      tap.w[1] = fx * (1 - fy);
      tap.w[2] = (1 - fx) * fy;
      tap.w[3] = fx * fy;
      vt.push_back(tap);
    }
    table.hits[v] = int(vt.size());
    if (!vt.empty()) {
      double inv = 1.0 / double(vt.size());
      for (auto& tap : vt)
        for (double& w : tap.w) w *= inv;
    }
  }
  return table;
}

FeatureVolume backproject(const std::vector<FeatureMap>& maps,
                          const std::vector<CameraIntrinsics>& cams,
                          const std::vector<Pose>& poses, const GridSpec& grid) {
  if (maps.empty()) throw std::invalid_argument("backproject: no feature maps");
  if (maps.size() != cams.size())
    throw std::invalid_argument("backproject: one camera per map required");
  BackprojectTable table =
      make_backproject_table(cams, poses, grid, maps[0].width, maps[0].height);
  nn::Tape tape;
  std::vector<nn::NodeId> mapIds;
  for (const FeatureMap& m : maps) mapIds.push_back(tape.input(m.data));
  nn::NodeId out = tape.backproject_taps(mapIds, table.taps, grid.n_voxels());
  FeatureVolume vol;
  vol.grid = grid;
  vol.channels = maps[0].channels;
  vol.features = tape.value(out);
  vol.hits = table.hits;
  return vol;
}

FeatureVolume opacity_gate(const FeatureVolume& volume,
                           const std::function<double(const Vec3&)>& sigma_at) {
  FeatureVolume out = volume;
  for (int v = 0; v < volume.grid.n_voxels(); ++v) {
    double alpha = -std::expm1(-sigma_at(volume.grid.center(v)) * volume.grid.edge);
    double* col = out.features.col(v);
    for (int c = 0; c < volume.channels; ++c) col[c] *= alpha;
  }
  return out;
}

std::array<nn::Tape::Tap, 8> trilinear_taps(const GridSpec& grid, const Vec3& p) {
  std::array<nn::Tape::Tap, 8> taps;
  taps.fill({0, 0.0});
  Vec3 rel = (p - grid.origin) / grid.edge;
  if (rel.x < 0.0 || rel.y < 0.0 || rel.z < 0.0 || rel.x > grid.nx || rel.y > grid.ny ||
      rel.z > grid.nz)
    return taps;  // outside the volume extent: zero feature
  double gx = rel.x - 0.5, gy = rel.y - 0.5, gz = rel.z - 0.5;
  int x0 = int(std::floor(gx)), y0 = int(std::floor(gy)), z0 = int(std::floor(gz));
  double fx = gx - x0, fy = gy - y0, fz = gz - z0;
  int k = 0;
  for (int dz = 0; dz < 2; ++dz)
    for (int dy = 0; dy < 2; ++dy)
      for (int dx = 0; dx < 2; ++dx) {
        int x = x0 + dx, y = y0 + dy, z = z0 + dz;
        double w = (dx ? fx : 1 - fx) * (dy ? fy : 1 - fy) * (dz ? fz : 1 - fz);
        if (x < 0 || y < 0 || z < 0 || x >= grid.nx || y >= grid.ny || z >= grid.nz ||
            w == 0.0) {
          taps[k++] = {0, 0.0};
        } else {
          taps[k++] = {grid.index(x, y, z), w};
        }
      }
  return taps;
}

std::vector<double> trilinear_sample(const FeatureVolume& volume, const Vec3& p) {
  std::vector<double> out(volume.channels, 0.0);
  for (const auto& tap : trilinear_taps(volume.grid, p)) {
    if (tap.weight == 0.0) continue;
    const double* col = volume.features.col(tap.voxel);
    for (int c = 0; c < volume.channels; ++c) out[c] += tap.weight * col[c];
  }
  return out;
}

namespace {
constexpr char kVolMagic[8] = {'R', 'D', 'V', 'O', 'L', '0', '0', '1'};

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
void put_f64(std::ostream& os, double d) {
  std::uint64_t bits;
  std::memcpy(&bits, &d, 8);
  unsigned char b[8];
  for (int i = 0; i < 8; ++i) b[i] = (unsigned char)((bits >> (8 * i)) & 0xff);
  os.write(reinterpret_cast<char*>(b), 8);
}
double get_f64(std::istream& is) {
  unsigned char b[8];
  is.read(reinterpret_cast<char*>(b), 8);
  std::uint64_t bits = 0;
  for (int i = 0; i < 8; ++i) bits |= std::uint64_t(b[i]) << (8 * i);
  double d;
  std::memcpy(&d, &bits, 8);
  return d;
}
}  // namespace

void save_volume(const FeatureVolume& volume, const std::string& path) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw io_error("cannot write volume: " + path);
  os.write(kVolMagic, 8);
  put_u32(os, std::uint32_t(volume.grid.nx));
  put_u32(os, std::uint32_t(volume.grid.ny));
  put_u32(os, std::uint32_t(volume.grid.nz));
  put_u32(os, std::uint32_t(volume.channels));
  put_f64(os, volume.grid.edge);
  put_f64(os, volume.grid.origin.x);
  put_f64(os, volume.grid.origin.y);
  put_f64(os, volume.grid.origin.z);
  for (double v : volume.features.data) put_f64(os, v);
  for (int h : volume.hits) put_f64(os, double(h));
  if (!os) throw io_error("volume write failed: " + path);
}

FeatureVolume load_volume(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw io_error("cannot read volume: " + path);
  char magic[8];
  is.read(magic, 8);
  if (!is || std::memcmp(magic, kVolMagic, 8) != 0)
    throw io_error("bad volume magic: " + path);
  FeatureVolume vol;
  vol.grid.nx = int(get_u32(is));
  vol.grid.ny = int(get_u32(is));
  vol.grid.nz = int(get_u32(is));
  vol.channels = int(get_u32(is));
  vol.grid.edge = get_f64(is);
  vol.grid.origin.x = get_f64(is);
  vol.grid.origin.y = get_f64(is);
  vol.grid.origin.z = get_f64(is);
  vol.features = Tensor(vol.channels, vol.grid.n_voxels());
  for (double& v : vol.features.data) v = get_f64(is);
  vol.hits.resize(vol.grid.n_voxels());
  for (int& h : vol.hits) h = int(get_f64(is));
  if (!is) throw io_error("truncated volume: " + path);
  return vol;
}

}  // namespace raydet
