#include <doctest.h>

#include <cmath>
#include <stdexcept>

#include "raydet/model.hpp"
#include "raydet/renderer.hpp"
#include "raydet/scenes.hpp"

using namespace raydet;

namespace {

RaySamples constant_sigma_samples(double sigma, int count, double t0, double t1,
                                  double far, int classes = 3) {
  Ray ray{{0, 0, 0}, {0, 0, 1}};
  std::vector<double> t(count);
  for (int i = 0; i < count; ++i)
    t[i] = t0 + (t1 - t0) * (double(i) + 0.5) / double(count);
  RaySamples rs = make_ray_samples(ray, std::move(t), far);
  rs.outputs.resize(count);
  for (auto& o : rs.outputs) {
    o.sigma = sigma;
    o.color = {0.2, 0.4, 0.6};
    o.semantic_logits.assign(std::size_t(classes), 0.0);
  }
  return rs;
}

}  // namespace

TEST_SUITE("renderer") {

TEST_CASE("empty medium renders black with the far-depth fallback") {
  RaySamples rs = constant_sigma_samples(0.0, 16, 0.5, 4.5, 5.0);
  RenderResult r = composite(rs);
  CHECK(r.weight_sum == 0.0);
  CHECK(r.color.x == 0.0);
  CHECK(r.color.y == 0.0);
  CHECK(r.color.z == 0.0);
  CHECK(r.depth == 5.0);
  for (double p : r.semantic) CHECK(p == doctest::Approx(1.0 / 3).epsilon(1e-12));
}

TEST_CASE("an opaque first sample absorbs the whole ray") {
  RaySamples rs = constant_sigma_samples(0.0, 8, 1.0, 4.0, 5.0);
  rs.outputs[0].sigma = 1e6;
  rs.outputs[0].color = {0.9, 0.1, 0.3};
  RenderResult r = composite(rs);
  CHECK(r.weights[0] == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(r.weight_sum == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(r.color.x == doctest::Approx(0.9).epsilon(1e-9));
  CHECK(r.depth == doctest::Approx(rs.t[0]).epsilon(1e-9));
}

TEST_CASE("constant density matches the closed-form transmittance") {
  const double sigma = 0.8, t0 = 0.5, t1 = 4.5;
  RaySamples rs = constant_sigma_samples(sigma, 256, t0, t1, t1);
  RenderResult r = composite(rs);
  // the sampled span covers [t0 + gap/2, t1]; integrate over that length
  double covered = t1 - rs.t[0];
  double expected = 1.0 - std::exp(-sigma * covered);
  CHECK(std::abs(r.weight_sum - expected) / expected <= 0.01);
}

TEST_CASE("empty sample list is a usage error") {
  RaySamples rs;
  rs.far = 1.0;
  CHECK_THROWS_AS(composite(rs), std::invalid_argument);
}

TEST_CASE("weights stay within the unit simplex") {
  Rng rng(30, streams::kTestData);
  for (int rep = 0; rep < 10000; ++rep) {
    int count = 2 + int(rng.next_below(14));
    RaySamples rs = constant_sigma_samples(0.0, count, 0.3, 4.0, 5.0);
    for (auto& o : rs.outputs) o.sigma = rng.uniform(0.0, 30.0);
    RenderResult r = composite(rs);
    double sum = 0.0;
    for (double w : r.weights) {
      CHECK(w >= 0.0);
      sum += w;
    }
    CHECK(sum <= 1.0 + 1e-12);
    CHECK(r.weight_sum == doctest::Approx(sum).epsilon(1e-12));
  }
}

TEST_CASE("splitting a constant segment preserves the composite") {
  // exponential semigroup: one segment of length L equals two of L/2
  Ray ray{{0, 0, 0}, {0, 0, 1}};
  double sigma = 1.7;
  RaySamples one = make_ray_samples(ray, {1.0, 3.0}, 3.5);
  one.outputs.resize(2);
  one.outputs[0].sigma = sigma;
  one.outputs[1].sigma = 0.9;
  one.outputs[0].semantic_logits = one.outputs[1].semantic_logits = {0.0};

  RaySamples two = make_ray_samples(ray, {1.0, 2.0, 3.0}, 3.5);
  two.outputs.resize(3);
  two.outputs[0].sigma = sigma;
  two.outputs[1].sigma = sigma;
  two.outputs[2].sigma = 0.9;
  for (auto& o : two.outputs) o.semantic_logits = {0.0};

  RenderResult a = composite(one), b = composite(two);
  CHECK(std::abs((a.weights[0]) - (b.weights[0] + b.weights[1])) <= 1e-9);
  CHECK(std::abs(a.weight_sum - b.weight_sum) <= 1e-9);
}

TEST_CASE("opacity helper endpoints") {
  CHECK(opacity_from_sigma(0.0, 0.16) == 0.0);
  CHECK(opacity_from_sigma(1e9, 0.16) == doctest::Approx(1.0).epsilon(1e-12));
  double delta_ref = 0.16;
  CHECK(opacity_from_sigma(1.0 / delta_ref, delta_ref) ==
        doctest::Approx(1.0 - std::exp(-1.0)).epsilon(1e-12));
}

TEST_CASE("fine resampling concentrates in the hot segment") {
  DepthSpace ds(0.5, 5.0, 16, Strategy::US);
  RaySamples rs = constant_sigma_samples(0.0, 8, 0.5, 5.0, 5.0);
  rs.outputs[3].sigma = 50.0;  // only segment 3 carries weight
  std::vector<double> fine = fine_resample(rs, 32, ds);
  for (double t : fine) {
    CHECK(t >= rs.t[3]);
    CHECK(t <= rs.t[4]);
  }
}

TEST_CASE("uniform weights resample approximately uniformly") {
  DepthSpace ds(0.5, 5.0, 16, Strategy::US);
  RaySamples rs = constant_sigma_samples(0.2, 9, 0.5, 5.0, 5.0);
  std::vector<double> fine = fine_resample(rs, 64, ds);
  CHECK(std::is_sorted(fine.begin(), fine.end()));
  CHECK(fine.front() >= rs.t.front());
  CHECK(fine.back() <= rs.t.back());
}

TEST_CASE("two-spike weights split draws binomially") {
  DepthSpace ds(0.5, 5.0, 16, Strategy::US);
  Rng rng(31, streams::kTestData);
  // craft sigma so segment masses are ~0.25 / ~0.75 and everything else 0
  Ray ray{{0, 0, 0}, {0, 0, 1}};
  RaySamples rs = make_ray_samples(ray, {1.0, 2.0, 3.0, 4.0}, 4.0);
  rs.outputs.resize(4);
  // w0 = 1 - exp(-s0): choose s0 for w0 = 0.25; w2 gets nearly all the rest
  rs.outputs[0].sigma = -std::log(0.75);  // delta = 1
  rs.outputs[1].sigma = 0.0;
  rs.outputs[2].sigma = 40.0;
  rs.outputs[3].sigma = 0.0;

  const int draws = 10000;
  int in_first = 0, total = 0;
  // one stratified batch per repeat keeps draws independent across repeats
  for (int rep = 0; rep < draws / 10; ++rep) {
    std::vector<double> fine = fine_resample(rs, 10, ds, &rng);
    for (double t : fine) {
      ++total;
      if (t < 2.0) ++in_first;
    }
  }
  double p = 0.25;
  double sd = std::sqrt(p * (1 - p) * double(total));
  CHECK(std::abs(double(in_first) - p * double(total)) <= 3.0 * sd);
}

TEST_CASE("all-zero weights fall back to strategy sampling") {
  DepthSpace ds(0.5, 5.0, 16, Strategy::LgIS);
  RaySamples rs = constant_sigma_samples(0.0, 8, 0.5, 5.0, 5.0);
  std::vector<double> fine = fine_resample(rs, 12, ds);
  std::vector<double> expected = ds.sample_depths(12);
  REQUIRE(fine.size() == expected.size());
  for (std::size_t i = 0; i < fine.size(); ++i)
    CHECK(fine[i] == doctest::Approx(expected[i]).epsilon(1e-12));
}

TEST_CASE("zero-density field renders pure background") {
  SceneSpec spec;
  spec.box_count = 0;
  spec.view_count = 1;
  spec.image_width = spec.image_height = 16;
  spec.seed = 5;
  Scene scene = generate_scene(spec);
  AnalyticBoxField field(scene, 200.0);
  DepthSpace ds(0.5, scene.room.diagonal(), 16, Strategy::US);
  RenderConfig rc;
  rc.coarse_samples = 16;
  rc.background = scene.background;
  rc.background_class = scene.background_label();
  ViewMaps maps = render_view(field, nullptr, scene.views[0].cam, scene.views[0].pose,
                              ds, rc);
  for (int p = 0; p < 16 * 16; ++p) {
    CHECK(maps.color[p * 3 + 0] == doctest::Approx(scene.background.x).epsilon(1e-12));
    CHECK(maps.depth[p] == doctest::Approx(ds.z_max()).epsilon(1e-12));
    CHECK(maps.label[p] == scene.background_label());
  }
}

TEST_CASE("analytic density renders depth near box entries") {
  // tolerance per pixel: the local sampling-stratum width plus two mean
  // free paths of the sigma=200 medium (entry offset + expectation tail)
  const double sigma = 200.0;
  SceneSpec spec;
  spec.box_count = 3;
  spec.view_count = 1;
  spec.image_width = spec.image_height = 48;
  spec.box_min_size = 0.8;
  spec.box_max_size = 1.5;
  spec.seed = 9;
  Scene scene = generate_scene(spec);
  AnalyticBoxField field(scene, sigma);
  const int count = 320;
  DepthSpace ds = scene.depth_space(count, Strategy::LnIS);
  RenderConfig rc;
  rc.coarse_samples = count;
  rc.background = scene.background;
  rc.background_class = scene.background_label();
  ViewMaps maps = render_view(field, nullptr, scene.views[0].cam, scene.views[0].pose,
                              ds, rc);
  std::vector<double> gt = gt_depth_map(scene, 0, ds.z_max());

  int covered = 0, within = 0;
  const double stratum = double(ds.n_bins() - 1) / double(count);
  auto local_width = [&](double z) {
    double l = ds.bin_coordinate(std::min(std::max(z, ds.z_min()), ds.z_max()));
    int k = std::min(int(l / stratum), count - 1);
    double lo = ds.bin_edge_depth(double(k) * stratum);
    return ds.bin_edge_depth(std::min(double(k + 1) * stratum,
                                      double(ds.n_bins() - 1))) - lo;
  };
  for (int p = 0; p < 48 * 48; ++p) {
    if (gt[p] >= ds.z_max()) continue;
    ++covered;
    double tol = std::max(local_width(gt[p]), local_width(maps.depth[p])) + 2.0 / sigma;
    if (std::abs(maps.depth[p] - gt[p]) <= tol) ++within;
  }
  REQUIRE(covered > 200);
  CHECK(double(within) / double(covered) >= 0.99);
}

TEST_CASE("doubling resolution keeps the principal ray") {
  CameraIntrinsics cam;
  cam.fx = cam.fy = 50.0;
  cam.cx = 32.0;
  cam.cy = 24.0;
  cam.width = 64;
  cam.height = 48;
  CameraIntrinsics cam2 = cam;
  cam2.fx *= 2;
  cam2.fy *= 2;
  cam2.cx *= 2;
  cam2.cy *= 2;
  cam2.width *= 2;
  cam2.height *= 2;
  Pose identity;
  Ray a = pixel_to_ray(cam, identity, cam.cx - 0.5, cam.cy - 0.5);
  Ray b = pixel_to_ray(cam2, identity, cam2.cx - 0.5, cam2.cy - 0.5);
  CHECK(norm(a.direction - b.direction) <= 1e-12);
  // a neighbouring pixel subtends half the angle at double resolution
  Ray a1 = pixel_to_ray(cam, identity, cam.cx + 0.5, cam.cy - 0.5);
  Ray b1 = pixel_to_ray(cam2, identity, cam2.cx + 0.5, cam2.cy - 0.5);
  double ang_a = std::acos(dot(a.direction, a1.direction));
  double ang_b = std::acos(dot(b.direction, b1.direction));
  CHECK(ang_b == doctest::Approx(ang_a / 2.0).epsilon(1e-3));
}

}  // TEST_SUITE
