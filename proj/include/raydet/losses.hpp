#pragma once

#include <string>
#include <vector>

#include "raydet/depthspace.hpp"
#include "raydet/vecmath.hpp"

namespace raydet {

// Per-term coefficients of the total objective plus the residual-depth
// weight gamma. Defaults are all one.
struct LossWeights {
  double det = 1.0;
  double rgb = 1.0;
  double geo = 1.0;
  double seg = 1.0;
  double depth = 1.0;
  double gamma = 1.0;  // residual term inside the ordinal depth loss
};

struct LossReport {
  double det = 0.0;
  double rgb = 0.0;
  double geo = 0.0;
  double seg = 0.0;
  double depth = 0.0;
  double total = 0.0;
  bool depth_relative = false;  // residual targets in relative units
  int depth_excluded = 0;       // pixels masked out of the depth loss
};

constexpr int kIgnoreLabel = -1;

// Mean squared error over pixels and channels.
double rgb_loss(const std::vector<Vec3>& rendered, const std::vector<Vec3>& truth);

// Mean cross-entropy -log p[label] over non-ignored pixels; probabilities
// clamped to >= 1e-12 before the log. Labels must be < n_classes or
// kIgnoreLabel.
double seg_loss(const std::vector<std::vector<double>>& probs,
                const std::vector<int>& labels, int n_classes);

// CE over bin logits plus gamma * L1 on the residual, averaged over masked
// pixels. Ground-truth codes come from DepthSpace::encode; out-of-range
// depths must already be masked off by the caller.
double depth_loss_ordinal(const DepthSpace& ds,
                          const std::vector<std::vector<double>>& bin_logits,
                          const std::vector<double>& residual_pred,
                          const std::vector<double>& depth_truth,
                          const std::vector<bool>& mask, double gamma,
                          bool relative_residual = false);

double depth_loss_l1(const std::vector<double>& pred, const std::vector<double>& truth,
                     const std::vector<bool>& mask);
double depth_loss_huber(const std::vector<double>& pred,
                        const std::vector<double>& truth,
                        const std::vector<bool>& mask, double delta);

// Mean binary cross-entropy between per-sample opacity and ground-truth
// occupancy in {0, 1}.
double geo_loss(const std::vector<double>& opacity, const std::vector<double>& occupancy);

// Weighted sum per LossWeights; throws divergence_error naming the first
// non-finite term.
LossReport total_loss(double det, double rgb, double geo, double seg, double depth,
                      const LossWeights& weights);

}  // namespace raydet
