#pragma once

#include <array>
#include <functional>
#include <string>
#include <vector>

#include "raydet/geometry.hpp"
#include "raydet/params.hpp"
#include "raydet/tape.hpp"
#include "raydet/tensor.hpp"

namespace raydet {

// Row-major H*W*C image, values in [0,1] for renders.
struct Image {
  int width = 0, height = 0, channels = 0;
  std::vector<double> data;

  Image() = default;
  Image(int w, int h, int c) : width(w), height(h), channels(c),
                               data(std::size_t(w) * h * c, 0.0) {}
  double& at(int x, int y, int c) {
    return data[(std::size_t(y) * width + x) * channels + c];
  }
  double at(int x, int y, int c) const {
    return data[(std::size_t(y) * width + x) * channels + c];
  }
};

// Quarter-resolution feature map; columns of `data` index feature pixels
// row-major (y * width + x).
struct FeatureMap {
  int view = 0;
  int channels = 0;
  int width = 0, height = 0;  // H/4, W/4 of the source image
  Tensor data;                // [C, width*height]
};

struct GridSpec {
  int nx = 0, ny = 0, nz = 0;
  double edge = 0.0;  // voxel edge length, meters
  Vec3 origin{};      // min corner of voxel (0,0,0)

  int n_voxels() const { return nx * ny * nz; }
  int index(int x, int y, int z) const { return (z * ny + y) * nx + x; }
  Vec3 center(int x, int y, int z) const {
    return origin + Vec3{(x + 0.5) * edge, (y + 0.5) * edge, (z + 0.5) * edge};
  }
  Vec3 center(int vidx) const {
    int x = vidx % nx, y = (vidx / nx) % ny, z = vidx / (nx * ny);
    return center(x, y, z);
  }
};

struct FeatureVolume {
  GridSpec grid;
  int channels = 0;
  Tensor features;        // [C, n_voxels]
  std::vector<int> hits;  // contributing views per voxel
};

// The tiny stride-4 extractor: 4x4/stride-4 convolution, relu, then a 1x1
// mixing layer. Parameters live under "<prefix>.conv0/bias0/conv1/bias1".
struct Extractor {
  std::string prefix = "ext";
  int in_channels = 3;
  int out_channels = 8;

  void ensure_params(nn::ParamStore& store) const;
  // im2col of the stride-4 patches; the convolution itself is a linear op.
  Tensor patches(const Image& img) const;
  nn::NodeId apply(nn::Tape& tape, nn::ParamStore& store, const Image& img) const;
};

// Plain forward convenience (builds a throwaway tape).
FeatureMap extract_features(const Image& img, const Extractor& ext,
                            nn::ParamStore& store);

// Per-voxel bilinear footprints into each visible view's feature map,
// weights pre-divided by the number of contributing views.
struct BackprojectTable {
  std::vector<std::vector<nn::Tape::ViewTap>> taps;  // per voxel
  std::vector<int> hits;
};

BackprojectTable make_backproject_table(const std::vector<CameraIntrinsics>& cams,
                                        const std::vector<Pose>& poses,
                                        const GridSpec& grid, int feat_width,
                                        int feat_height);

FeatureVolume backproject(const std::vector<FeatureMap>& maps,
                          const std::vector<CameraIntrinsics>& cams,
                          const std::vector<Pose>& poses, const GridSpec& grid);

// Scales every voxel feature by alpha = 1 - exp(-sigma(center) * edge).
FeatureVolume opacity_gate(const FeatureVolume& volume,
                           const std::function<double(const Vec3&)>& sigma_at);

// 8-corner footprint of a point; corners outside the grid are dropped
// (zero feature). Points outside the volume extent get an all-zero
// footprint.
std::array<nn::Tape::Tap, 8> trilinear_taps(const GridSpec& grid, const Vec3& p);

std::vector<double> trilinear_sample(const FeatureVolume& volume, const Vec3& p);

// Debug dump: "RDVOL001", u32 nx/ny/nz/C, f64 edge + origin, then features
// voxel-major and hit counts as f64, all little-endian.
void save_volume(const FeatureVolume& volume, const std::string& path);
FeatureVolume load_volume(const std::string& path);

}  // namespace raydet
