#include "raydet/renderer.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace raydet {

RaySamples make_ray_samples(const Ray& ray, std::vector<double> depths, double far) {
  RaySamples s;
  s.ray = ray;
  s.far = far;
  s.t = std::move(depths);
  const int n = int(s.t.size());
  s.delta.resize(n);
  for (int i = 0; i + 1 < n; ++i) {
    s.delta[i] = s.t[i + 1] - s.t[i];
    if (s.delta[i] <= 0.0)
      throw std::invalid_argument("make_ray_samples: depths not strictly increasing");
  }
  if (n > 0) s.delta[n - 1] = std::max(far - s.t[n - 1], 1e-12);
  return s;
}

void composite_core(const double* sigma, const double* delta, int n, double* weights) {
  double acc = 0.0;
  for (int i = 0; i < n; ++i) {
    double sd = sigma[i] * delta[i];
    weights[i] = std::exp(-acc) * (-std::expm1(-sd));
    acc += sd;
  }
}

RenderResult composite(const RaySamples& samples) {
  const int n = samples.size();
  if (n == 0) throw std::invalid_argument("composite: empty sample list");
  if (int(samples.outputs.size()) != n)
    throw std::invalid_argument("composite: outputs/depths length mismatch");

  std::vector<double> sigma(n), delta(n);
  for (int i = 0; i < n; ++i) {
    sigma[i] = samples.outputs[i].sigma;
    delta[i] = samples.delta[i];
  }
  RenderResult r;
  r.weights.resize(n);
  composite_core(sigma.data(), delta.data(), n, r.weights.data());

  const int k = int(samples.outputs[0].semantic_logits.size());
  std::vector<double> sem(std::max(k, 1), 0.0);
  double wsum = 0.0, depth_num = 0.0;
  Vec3 color{};
  std::vector<double> probs(std::max(k, 1));
  for (int i = 0; i < n; ++i) {
    double w = r.weights[i];
    wsum += w;
    depth_num += w * samples.t[i];
    color += samples.outputs[i].color * w;
    if (k > 0) {
      const auto& lg = samples.outputs[i].semantic_logits;
      double mx = lg[0];
      for (int j = 1; j < k; ++j) mx = std::max(mx, lg[j]);
      double sum = 0.0;
      for (int j = 0; j < k; ++j) {
        probs[j] = std::exp(lg[j] - mx);
        sum += probs[j];
      }
      for (int j = 0; j < k; ++j) sem[j] += w * probs[j] / sum;
    }
  }
  r.weight_sum = wsum;
  r.color = color;
  r.depth = wsum > kWeightEps ? depth_num / wsum : samples.far;
  if (k > 0) {
    if (wsum > kWeightEps) {
      for (double& v : sem) v /= wsum;
    } else {
      std::fill(sem.begin(), sem.end(), 1.0 / k);
    }
    r.semantic = std::move(sem);
  }
  return r;
}

double opacity_from_sigma(double sigma, double delta_ref) {
  return -std::expm1(-sigma * delta_ref);
}

std::vector<double> fine_resample(const RaySamples& coarse, int fine_count,
                                  const DepthSpace& fallback, Rng* rng) {
  const int n = coarse.size();
  if (n < 2) throw std::invalid_argument("fine_resample: need at least 2 samples");
  if (int(coarse.outputs.size()) != n)
    throw std::invalid_argument("fine_resample: coarse weights not computed");

  std::vector<double> sigma(n), delta(n), w(n);
  for (int i = 0; i < n; ++i) {
    sigma[i] = coarse.outputs[i].sigma;
    delta[i] = coarse.delta[i];
  }
  composite_core(sigma.data(), delta.data(), n, w.data());

  // segment masses over [t_i, t_{i+1}], fold the trailing weight into the
  // last segment so nothing escapes [t_0, t_last]
  std::vector<double> mass(n - 1);
  double total = 0.0;
  for (int i = 0; i < n - 1; ++i) {
    mass[i] = w[i];
    total += w[i];
  }
  mass[n - 2] += w[n - 1];
  total += w[n - 1];

  if (total <= 0.0) return fallback.sample_depths(fine_count, rng);

  std::vector<double> cdf(n);
  cdf[0] = 0.0;
  for (int i = 0; i < n - 1; ++i) cdf[i + 1] = cdf[i] + mass[i] / total;
  cdf[n - 1] = 1.0;

  std::vector<double> out(fine_count);
  int seg = 0;
  for (int j = 0; j < fine_count; ++j) {
    double u = (double(j) + (rng ? rng->next_double() : 0.5)) / double(fine_count);
    while (seg < n - 2 && cdf[seg + 1] <= u) ++seg;
    double lo = cdf[seg], hi = cdf[seg + 1];
    double f = hi > lo ? (u - lo) / (hi - lo) : 0.5;
    out[j] = coarse.t[seg] + f * (coarse.t[seg + 1] - coarse.t[seg]);
  }
  std::sort(out.begin(), out.end());
  return out;
}

namespace {

// composite + background blend for one ray's samples
void shade_pixel(const RaySamples& rs, const RenderConfig& cfg, int n_classes,
                 double* color_out, double* depth_out, int* label_out,
                 double* probs_out, double* wsum_out) {
  RenderResult r = composite(rs);
  double leftover = 1.0 - r.weight_sum;
  for (int c = 0; c < 3; ++c) color_out[c] = r.color[c] + leftover * cfg.background[c];
  *depth_out = r.depth;
  *wsum_out = r.weight_sum;
  // blended class distribution: composited mass + leftover on background
  double best = -1.0;
  int best_j = cfg.background_class;
  for (int j = 0; j < n_classes; ++j) {
    double p = r.semantic[j] * r.weight_sum + (j == cfg.background_class ? leftover : 0.0);
    probs_out[j] = p;
    if (p > best) {
      best = p;
      best_j = j;
    }
  }
  *label_out = best_j;
}

}  // namespace

ViewMaps render_view(const SampleField& coarse_field, const SampleField* fine_field,
                     const CameraIntrinsics& cam, const Pose& pose,
                     const DepthSpace& ds, const RenderConfig& cfg) {
  if (cfg.coarse_samples < 2)
    throw std::invalid_argument("render_view: need at least 2 coarse samples");
  const int W = cam.width, H = cam.height;
  const int K = coarse_field.n_classes();
  ViewMaps maps;
  maps.width = W;
  maps.height = H;
  maps.n_classes = K;
  maps.color.resize(std::size_t(W) * H * 3);
  maps.depth.resize(std::size_t(W) * H);
  maps.label.resize(std::size_t(W) * H);
  maps.sem_probs.resize(std::size_t(W) * H * K);
  maps.weight_sum.resize(std::size_t(W) * H);

  const SampleField& ff = fine_field ? *fine_field : coarse_field;
  const int S = cfg.coarse_samples;

  std::vector<double> pts, dirs;
  std::vector<SampleOutput> outs;
  for (int y = 0; y < H; ++y) {
    for (int x = 0; x < W; ++x) {
      Ray ray = pixel_to_ray(cam, pose, double(x), double(y));
      std::vector<double> td = ds.sample_depths(S, cfg.jitter);
      RaySamples rs = make_ray_samples(ray, std::move(td), ds.z_max());

      pts.resize(std::size_t(S) * 3);
      dirs.resize(std::size_t(S) * 3);
      for (int i = 0; i < S; ++i) {
        Vec3 p = ray.at(rs.t[i]);
        pts[i * 3 + 0] = p.x;
        pts[i * 3 + 1] = p.y;
        pts[i * 3 + 2] = p.z;
        dirs[i * 3 + 0] = ray.direction.x;
        dirs[i * 3 + 1] = ray.direction.y;
        dirs[i * 3 + 2] = ray.direction.z;
      }
      outs.assign(S, SampleOutput{});
      coarse_field.evaluate(pts.data(), dirs.data(), S, outs.data());
      rs.outputs = outs;

      RaySamples* final_rs = &rs;
      RaySamples merged;
      if (cfg.fine_samples > 0) {
        std::vector<double> ft = fine_resample(rs, cfg.fine_samples, ds, cfg.jitter);
        std::vector<double> all = rs.t;
        all.insert(all.end(), ft.begin(), ft.end());
        std::sort(all.begin(), all.end());
        all.erase(std::unique(all.begin(), all.end()), all.end());
        merged = make_ray_samples(ray, std::move(all), ds.z_max());
        const int M = merged.size();
        pts.resize(std::size_t(M) * 3);
        dirs.resize(std::size_t(M) * 3);
        for (int i = 0; i < M; ++i) {
          Vec3 p = ray.at(merged.t[i]);
          pts[i * 3 + 0] = p.x;
          pts[i * 3 + 1] = p.y;
          pts[i * 3 + 2] = p.z;
          dirs[i * 3 + 0] = ray.direction.x;
          dirs[i * 3 + 1] = ray.direction.y;
          dirs[i * 3 + 2] = ray.direction.z;
        }
        outs.assign(M, SampleOutput{});
        ff.evaluate(pts.data(), dirs.data(), M, outs.data());
        merged.outputs = outs;
        final_rs = &merged;
      }

      std::size_t px = std::size_t(y) * W + x;
      shade_pixel(*final_rs, cfg, K, &maps.color[px * 3], &maps.depth[px],
                  &maps.label[px], &maps.sem_probs[px * K], &maps.weight_sum[px]);
    }
  }
  return maps;
}

}  // namespace raydet
