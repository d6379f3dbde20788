#include "raydet/losses.hpp"

#include <cmath>
#include <stdexcept>

#include "raydet/errors.hpp"

namespace raydet {

double rgb_loss(const std::vector<Vec3>& rendered, const std::vector<Vec3>& truth) {
  if (rendered.size() != truth.size() || rendered.empty())
    throw std::invalid_argument("rgb_loss: pixel count mismatch");
  double acc = 0.0;
  for (std::size_t i = 0; i < rendered.size(); ++i)
    for (int c = 0; c < 3; ++c) {
      double e = rendered[i][c] - truth[i][c];
      acc += e * e;
    }
  return acc / (3.0 * double(rendered.size()));
}

double seg_loss(const std::vector<std::vector<double>>& probs,
                const std::vector<int>& labels, int n_classes) {
  if (probs.size() != labels.size())
    throw std::invalid_argument("seg_loss: pixel count mismatch");
  double acc = 0.0;
  int count = 0;
  for (std::size_t i = 0; i < probs.size(); ++i) {
    int lb = labels[i];
    if (lb == kIgnoreLabel) continue;
    if (lb < 0 || lb >= n_classes)
      throw std::invalid_argument("seg_loss: label outside [0, K-1]");
    acc += -std::log(std::max(probs[i][lb], 1e-12));
    ++count;
  }
  return count > 0 ? acc / count : 0.0;
}

double depth_loss_ordinal(const DepthSpace& ds,
                          const std::vector<std::vector<double>>& bin_logits,
                          const std::vector<double>& residual_pred,
                          const std::vector<double>& depth_truth,
                          const std::vector<bool>& mask, double gamma,
                          bool relative_residual) {
  const std::size_t n = depth_truth.size();
  if (bin_logits.size() != n || residual_pred.size() != n || mask.size() != n)
    throw std::invalid_argument("depth_loss_ordinal: shape mismatch");
  double acc_ce = 0.0, acc_l1 = 0.0;
  int count = 0;
  for (std::size_t i = 0; i < n; ++i) {
    if (!mask[i]) continue;
    const auto& lg = bin_logits[i];
    if (int(lg.size()) != ds.n_bins())
      throw std::invalid_argument("depth_loss_ordinal: logits width != N");
    OrdinalDepthCode code = ds.encode(depth_truth[i]);
    double mx = lg[0];
    for (double v : lg) mx = std::max(mx, v);
    double lse = 0.0;
    for (double v : lg) lse += std::exp(v - mx);
    acc_ce += mx + std::log(lse) - lg[code.l_int];
    double target_res = relative_residual ? code.z_res / ds.z_max() : code.z_res;
    acc_l1 += std::abs(residual_pred[i] - target_res);
    ++count;
  }
  if (count == 0) return 0.0;
  return (acc_ce + gamma * acc_l1) / count;
}

namespace {
double masked_mean_loss(const std::vector<double>& pred, const std::vector<double>& truth,
                        const std::vector<bool>& mask,
                        double (*rho)(double, double), double delta) {
  if (pred.size() != truth.size() || pred.size() != mask.size())
    throw std::invalid_argument("depth loss: shape mismatch");
  double acc = 0.0;
  int count = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    if (!mask[i]) continue;
    acc += rho(pred[i] - truth[i], delta);
    ++count;
  }
  return count > 0 ? acc / count : 0.0;
}
}  // namespace

double depth_loss_l1(const std::vector<double>& pred, const std::vector<double>& truth,
                     const std::vector<bool>& mask) {
  return masked_mean_loss(pred, truth, mask,
                          [](double e, double) { return std::abs(e); }, 0.0);
}

double depth_loss_huber(const std::vector<double>& pred,
                        const std::vector<double>& truth,
                        const std::vector<bool>& mask, double delta) {
  return masked_mean_loss(
      pred, truth, mask,
      [](double e, double d) {
        double a = std::abs(e);
        return a <= d ? 0.5 * e * e : d * (a - 0.5 * d);
      },
      delta);
}

double geo_loss(const std::vector<double>& opacity,
                const std::vector<double>& occupancy) {
  if (opacity.size() != occupancy.size() || opacity.empty())
    throw std::invalid_argument("geo_loss: shape mismatch");
  double acc = 0.0;
  for (std::size_t i = 0; i < opacity.size(); ++i) {
    double p = std::min(std::max(opacity[i], 1e-12), 1.0 - 1e-12);
    acc += -(occupancy[i] * std::log(p) + (1.0 - occupancy[i]) * std::log(1.0 - p));
  }
  return acc / double(opacity.size());
}

LossReport total_loss(double det, double rgb, double geo, double seg, double depth,
                      const LossWeights& w) {
  LossReport r;
  r.det = det;
  r.rgb = rgb;
  r.geo = geo;
  r.seg = seg;
  r.depth = depth;
  const char* names[5] = {"det", "rgb", "geo", "seg", "depth"};
  double values[5] = {det, rgb, geo, seg, depth};
  double weights[5] = {w.det, w.rgb, w.geo, w.seg, w.depth};
  double total = 0.0;
  for (int i = 0; i < 5; ++i) {
    if (!std::isfinite(values[i])) throw divergence_error(names[i]);
    total += weights[i] * values[i];
  }
  r.total = total;
  return r;
}

}  // namespace raydet
