#pragma once

#include <vector>

#include "raydet/depthspace.hpp"
#include "raydet/geometry.hpp"
#include "raydet/vecmath.hpp"

namespace raydet {

// Per-sample field outputs: density, color, raw semantic logits and the
// geometry-head hidden feature.
struct SampleOutput {
  double sigma = 0.0;
  Vec3 color{};
  std::vector<double> semantic_logits;
  std::vector<double> hidden;
};

// Ordered samples along one ray. delta_i = t_{i+1} - t_i with the last
// segment capped at `far` (the depth-range end).
struct RaySamples {
  Ray ray;
  std::vector<double> t;
  std::vector<double> delta;
  std::vector<SampleOutput> outputs;
  double far = 0.0;

  int size() const { return int(t.size()); }
};

// Builds deltas from strictly increasing depths; outputs stay empty for the
// caller to fill.
RaySamples make_ray_samples(const Ray& ray, std::vector<double> depths, double far);

struct RenderResult {
  Vec3 color{};        // composited, black for empty medium
  double depth = 0.0;  // expectation over weights, `far` fallback when empty
  std::vector<double> semantic;  // probability vector, sums to 1
  double weight_sum = 0.0;
  std::vector<double> weights;
};

// Near-empty-ray threshold for the depth fallback and semantic renorm.
constexpr double kWeightEps = 1e-6;

// Shared compositing core: w_i = T_i * (1 - exp(-sigma_i delta_i)) with
// T_i = exp(-sum_{j<i} sigma_j delta_j). Also used by the tape op so both
// paths agree bit-for-bit.
void composite_core(const double* sigma, const double* delta, int n, double* weights);

// Volume rendering of one ray. Semantic probabilities are softmaxed per
// sample, composited, and renormalized by the weight sum (uniform when the
// ray is empty). Throws on an empty sample list.
RenderResult composite(const RaySamples& samples);

// alpha = 1 - exp(-sigma * delta_ref)
double opacity_from_sigma(double sigma, double delta_ref);

// Inverse-CDF resampling proportional to coarse weights over the segments
// [t_i, t_{i+1}] (the final weight folds into the last segment). Stratified;
// uniform within strata when rng is null. Falls back to strategy sampling
// when every weight is zero.
std::vector<double> fine_resample(const RaySamples& coarse, int fine_count,
                                  const DepthSpace& fallback, Rng* rng = nullptr);

// Batched field interface implemented by trained heads and by analytic
// oracles. points/dirs hold `count` xyz triples.
class SampleField {
 public:
  virtual ~SampleField() = default;
  virtual int n_classes() const = 0;
  virtual void evaluate(const double* points, const double* dirs, int count,
                        SampleOutput* out) const = 0;
};

struct ViewMaps {
  int width = 0, height = 0;
  int n_classes = 0;
  std::vector<double> color;      // H*W*3, row-major
  std::vector<double> depth;      // H*W
  std::vector<int> label;         // H*W argmax semantic
  std::vector<double> sem_probs;  // H*W*K
  std::vector<double> weight_sum; // H*W
};

struct RenderConfig {
  int coarse_samples = 32;
  int fine_samples = 0;  // 0 disables the fine pass
  Vec3 background{};
  int background_class = 0;
  Rng* jitter = nullptr;
};

// Per-pixel sample_depths -> field -> composite, then the optional fine
// merge (union of coarse and fine depths through the fine field). Rendered
// color/semantics blend the background in with the leftover transmittance
// 1 - W, so a zero-density field renders pure background.
ViewMaps render_view(const SampleField& coarse_field, const SampleField* fine_field,
                     const CameraIntrinsics& cam, const Pose& pose,
                     const DepthSpace& ds, const RenderConfig& config);

}  // namespace raydet
