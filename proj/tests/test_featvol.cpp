#include <doctest.h>

#include <cmath>
#include <stdexcept>
#include <filesystem>

#include "raydet/featvol.hpp"
#include "support.hpp"

using namespace raydet;
using raydet::nn::ParamStore;
using raydet::nn::Tape;

namespace {

Image random_image(int w, int h, Rng& rng) {
  Image img(w, h, 3);
  for (double& v : img.data) v = rng.next_double();
  return img;
}

GridSpec small_grid() {
  GridSpec g;
  g.nx = 6;
  g.ny = 5;
  g.nz = 4;
  g.edge = 0.5;
  g.origin = {-1.5, -1.25, -1.0};
  return g;
}

CameraIntrinsics cam_16() {
  CameraIntrinsics cam;
  cam.fx = cam.fy = 12.0;
  cam.cx = cam.cy = 8.0;
  cam.width = cam.height = 16;
  return cam;
}

}  // namespace

TEST_SUITE("featvol") {

TEST_CASE("extractor rejects bad dimensions and zero maps zero") {
  Extractor ext{"ext", 3, 4};
  ParamStore store(1);
  ext.ensure_params(store);
  Image bad(14, 16, 3);
  CHECK_THROWS_AS(extract_features(bad, ext, store), std::invalid_argument);

  Image zero(16, 16, 3);
  for (auto& [name, t] : store.all_mutable()) t.fill(0.0);
  FeatureMap fm = extract_features(zero, ext, store);
  CHECK(fm.width == 4);
  CHECK(fm.height == 4);
  for (double v : fm.data.data) CHECK(v == 0.0);
}

TEST_CASE("stride-4 extractor shifts outputs with 4-pixel input shifts") {
  Extractor ext{"ext", 3, 6};
  ParamStore store(2);
  ext.ensure_params(store);
  Rng rng(50, streams::kTestData);
  Image img = random_image(32, 16, rng);
  Image shifted(32, 16, 3);
  for (int y = 0; y < 16; ++y)
    for (int x = 0; x < 32; ++x)
      for (int c = 0; c < 3; ++c)
        shifted.at(x, y, c) = x >= 4 ? img.at(x - 4, y, c) : 0.0;

  FeatureMap a = extract_features(img, ext, store);
  FeatureMap b = extract_features(shifted, ext, store);
  for (int fy = 0; fy < a.height; ++fy)
    for (int fx = 1; fx < a.width; ++fx)
      for (int c = 0; c < 6; ++c)
        CHECK(b.data.at(c, fy * b.width + fx) ==
              doctest::Approx(a.data.at(c, fy * a.width + fx - 1)).epsilon(1e-12));
}

TEST_CASE("extractor parameters pass the finite-difference check") {
  Extractor ext{"ext", 3, 4};
  ParamStore store(3);
  ext.ensure_params(store);
  Rng rng(51, streams::kTestData);
  Image img = random_image(16, 16, rng);
  Tensor target(4, 16);
  for (double& v : target.data) v = rng.uniform(-1, 1);

  auto loss = [&](ParamStore& s) {
    Tape tape;
    nn::NodeId y = ext.apply(tape, s, img);
    return tape.value(tape.mse_loss(y, target)).data[0];
  };
  auto grads = [&](ParamStore& s) {
    Tape tape;
    nn::NodeId y = ext.apply(tape, s, img);
    tape.backward(tape.mse_loss(y, target));
  };
  auto res = test::finite_diff_check(store, loss, grads);
  CHECK_MESSAGE(res.worst_rel <= 1e-4, res.worst_name);
}

TEST_CASE("voxels behind every camera stay empty") {
  GridSpec grid = small_grid();
  CameraIntrinsics cam = cam_16();
  Pose pose;  // camera at origin looking +z; voxels with z < 0 sit behind it
  FeatureMap fm;
  fm.channels = 2;
  fm.width = fm.height = 4;
  fm.data = Tensor(2, 16);
  fm.data.fill(1.0);
  FeatureVolume vol = backproject({fm}, {cam}, {pose}, grid);
  bool found_behind = false;
  for (int v = 0; v < grid.n_voxels(); ++v) {
    if (grid.center(v).z < 0.0) {
      found_behind = true;
      CHECK(vol.hits[v] == 0);
      for (int c = 0; c < 2; ++c) CHECK(vol.features.at(c, v) == 0.0);
    }
  }
  CHECK(found_behind);
}

TEST_CASE("a constant feature map paints every visible voxel") {
  GridSpec grid = small_grid();
  CameraIntrinsics cam = cam_16();
  Pose pose;
  FeatureMap fm;
  fm.channels = 2;
  fm.width = fm.height = 4;
  fm.data = Tensor(2, 16);
  for (int p = 0; p < 16; ++p) {
    fm.data.at(0, p) = 0.7;
    fm.data.at(1, p) = -0.2;
  }
  FeatureVolume vol = backproject({fm}, {cam}, {pose}, grid);
  int visible = 0;
  for (int v = 0; v < grid.n_voxels(); ++v) {
    if (vol.hits[v] == 0) continue;
    ++visible;
    CHECK(vol.features.at(0, v) == doctest::Approx(0.7).epsilon(1e-12));
    CHECK(vol.features.at(1, v) == doctest::Approx(-0.2).epsilon(1e-12));
  }
  CHECK(visible > 0);
}

TEST_CASE("two constant views average per voxel") {
  GridSpec grid = small_grid();
  CameraIntrinsics cam = cam_16();
  Pose front;                           // at origin looking +z
  Pose back;                            // flipped, looking -z from z=+3
  back.rotation = Mat3::rotation_y(M_PI);
  back.translation = {0, 0, 3.0};
  FeatureMap fa, fb;
  fa.channels = fb.channels = 1;
  fa.width = fa.height = fb.width = fb.height = 4;
  fa.data = Tensor(1, 16);
  fb.data = Tensor(1, 16);
  fa.data.fill(1.0);
  fb.data.fill(3.0);
  FeatureVolume vol = backproject({fa, fb}, {cam, cam}, {front, back}, grid);
  for (int v = 0; v < grid.n_voxels(); ++v) {
    if (vol.hits[v] == 2)
      CHECK(vol.features.at(0, v) == doctest::Approx(2.0).epsilon(1e-12));
  }
}

TEST_CASE("backprojection is linear in the feature maps") {
  GridSpec grid = small_grid();
  CameraIntrinsics cam = cam_16();
  Pose pose;
  Rng rng(52, streams::kTestData);
  FeatureMap a, b, sum;
  a.channels = b.channels = sum.channels = 3;
  a.width = a.height = b.width = b.height = sum.width = sum.height = 4;
  a.data = Tensor(3, 16);
  b.data = Tensor(3, 16);
  for (double& v : a.data.data) v = rng.uniform(-1, 1);
  for (double& v : b.data.data) v = rng.uniform(-1, 1);
  sum.data = a.data;
  for (std::size_t k = 0; k < sum.data.size(); ++k) sum.data.data[k] += b.data.data[k];

  FeatureVolume va = backproject({a}, {cam}, {pose}, grid);
  FeatureVolume vb = backproject({b}, {cam}, {pose}, grid);
  FeatureVolume vs = backproject({sum}, {cam}, {pose}, grid);
  for (std::size_t k = 0; k < vs.features.size(); ++k)
    CHECK(vs.features.data[k] ==
          doctest::Approx(va.features.data[k] + vb.features.data[k]).epsilon(1e-12));
}

TEST_CASE("duplicating a view leaves the average unchanged") {
  GridSpec grid = small_grid();
  CameraIntrinsics cam = cam_16();
  Pose pose;
  Rng rng(53, streams::kTestData);
  FeatureMap a;
  a.channels = 2;
  a.width = a.height = 4;
  a.data = Tensor(2, 16);
  for (double& v : a.data.data) v = rng.uniform(-1, 1);
  FeatureVolume once = backproject({a}, {cam}, {pose}, grid);
  FeatureVolume twice = backproject({a, a}, {cam, cam}, {pose, pose}, grid);
  for (std::size_t k = 0; k < once.features.size(); ++k)
    CHECK(twice.features.data[k] == doctest::Approx(once.features.data[k]).epsilon(1e-12));
}

TEST_CASE("opacity gate scales features by the local opacity") {
  GridSpec grid = small_grid();
  FeatureVolume vol;
  vol.grid = grid;
  vol.channels = 2;
  vol.features = Tensor(2, grid.n_voxels());
  vol.features.fill(1.0);
  vol.hits.assign(grid.n_voxels(), 1);

  FeatureVolume zeroed = opacity_gate(vol, [](const Vec3&) { return 0.0; });
  for (double v : zeroed.features.data) CHECK(v == 0.0);

  FeatureVolume kept = opacity_gate(vol, [](const Vec3&) { return 1e9; });
  for (double v : kept.features.data) CHECK(v == doctest::Approx(1.0).epsilon(1e-12));

  double sigma = 3.7;
  FeatureVolume scaled = opacity_gate(vol, [&](const Vec3&) { return sigma; });
  double expect = 1.0 - std::exp(-sigma * grid.edge);
  for (double v : scaled.features.data) CHECK(v == doctest::Approx(expect).epsilon(1e-12));
}

TEST_CASE("trilinear sampling hits voxel centers exactly") {
  GridSpec grid = small_grid();
  FeatureVolume vol;
  vol.grid = grid;
  vol.channels = 1;
  vol.features = Tensor(1, grid.n_voxels());
  Rng rng(54, streams::kTestData);
  for (double& v : vol.features.data) v = rng.uniform(-1, 1);
  vol.hits.assign(grid.n_voxels(), 1);

  for (int v = 0; v < grid.n_voxels(); v += 3)
    CHECK(trilinear_sample(vol, grid.center(v))[0] ==
          doctest::Approx(vol.features.at(0, v)).epsilon(1e-12));

  // the midpoint of two neighbouring centers averages them
  Vec3 a = grid.center(grid.index(1, 2, 1));
  Vec3 b = grid.center(grid.index(2, 2, 1));
  double mid = trilinear_sample(vol, (a + b) * 0.5)[0];
  CHECK(mid == doctest::Approx(0.5 * (vol.features.at(0, grid.index(1, 2, 1)) +
                                      vol.features.at(0, grid.index(2, 2, 1))))
                   .epsilon(1e-12));
}

TEST_CASE("trilinear sampling matches a brute-force weighted sum") {
  GridSpec grid = small_grid();
  FeatureVolume vol;
  vol.grid = grid;
  vol.channels = 2;
  vol.features = Tensor(2, grid.n_voxels());
  Rng rng(55, streams::kTestData);
  for (double& v : vol.features.data) v = rng.uniform(-1, 1);
  vol.hits.assign(grid.n_voxels(), 1);

  for (int rep = 0; rep < 200; ++rep) {
    Vec3 p{rng.uniform(-1.5, 1.5), rng.uniform(-1.25, 1.25), rng.uniform(-1.0, 1.0)};
    std::vector<double> got = trilinear_sample(vol, p);
    // direct 8-corner interpolation
    Vec3 g = (p - grid.origin) / grid.edge - Vec3{0.5, 0.5, 0.5};
    int x0 = int(std::floor(g.x)), y0 = int(std::floor(g.y)), z0 = int(std::floor(g.z));
    for (int c = 0; c < 2; ++c) {
      double acc = 0.0;
      for (int dz = 0; dz < 2; ++dz)
        for (int dy = 0; dy < 2; ++dy)
          for (int dx = 0; dx < 2; ++dx) {
            int x = x0 + dx, y = y0 + dy, z = z0 + dz;
            if (x < 0 || y < 0 || z < 0 || x >= grid.nx || y >= grid.ny ||
                z >= grid.nz)
              continue;
            double w = (dx ? g.x - x0 : 1 - (g.x - x0)) *
                       (dy ? g.y - y0 : 1 - (g.y - y0)) *
                       (dz ? g.z - z0 : 1 - (g.z - z0));
            acc += w * vol.features.at(c, grid.index(x, y, z));
          }
      CHECK(got[c] == doctest::Approx(acc).epsilon(1e-12));
    }
  }
}

TEST_CASE("trilinear sampling is continuous across voxel boundaries") {
  GridSpec grid = small_grid();
  FeatureVolume vol;
  vol.grid = grid;
  vol.channels = 1;
  vol.features = Tensor(1, grid.n_voxels());
  Rng rng(56, streams::kTestData);
  for (double& v : vol.features.data) v = rng.uniform(-1, 1);
  vol.hits.assign(grid.n_voxels(), 1);

  // boundary plane between voxel centers along x at grid coordinate 2.0
  for (int rep = 0; rep < 50; ++rep) {
    double bx = grid.origin.x + grid.edge * (2.0 + 0.5);
    Vec3 p{bx, rng.uniform(-1.0, 1.0), rng.uniform(-0.8, 0.8)};
    double lo = trilinear_sample(vol, p - Vec3{1e-9, 0, 0})[0];
    double hi = trilinear_sample(vol, p + Vec3{1e-9, 0, 0})[0];
    CHECK(std::abs(hi - lo) <= 1e-7);
  }
  // outside the volume extent reads zero
  CHECK(trilinear_sample(vol, {100, 0, 0})[0] == 0.0);
}

TEST_CASE("volume dump round trips") {
  GridSpec grid = small_grid();
  FeatureVolume vol;
  vol.grid = grid;
  vol.channels = 3;
  vol.features = Tensor(3, grid.n_voxels());
  Rng rng(57, streams::kTestData);
  for (double& v : vol.features.data) v = rng.uniform(-1, 1);
  vol.hits.assign(grid.n_voxels(), 0);
  for (int& h : vol.hits) h = int(rng.next_below(4));

  std::string path = std::filesystem::temp_directory_path() / "raydet_vol_test.bin";
  save_volume(vol, path);
  FeatureVolume back = load_volume(path);
  CHECK(back.grid.nx == grid.nx);
  CHECK(back.grid.edge == grid.edge);
  for (std::size_t k = 0; k < vol.features.size(); ++k)
    CHECK(back.features.data[k] == vol.features.data[k]);
  CHECK(back.hits == vol.hits);
}

}  // TEST_SUITE
