#pragma once

#include <string>
#include <vector>

#include "raydet/rng.hpp"

namespace raydet {

// Depth-range parameterizations. Each strategy maps depth z in
// [z_min, z_max] to a continuous bin coordinate l in [0, N-1]:
//
//   US    l = (N-1) (z - z_min) / (z_max - z_min)
//   UIS   l = (N-1) (1/z - 1/z_min) / (1/z_max - 1/z_min)
//   LgIS  l = (N-1) (log z - log z_min) / (log z_max - log z_min)
//   LnIS  l = -0.5 + 0.5 sqrt(1 + 4 d),  d = N (N-1) (z - z_min) / (z_max - z_min)
//
// US bins have constant width, LgIS widths form a geometric progression,
// LnIS widths an arithmetic progression, and UIS widths grow with z^2.
// The three non-uniform strategies place narrow bins near the camera.
enum class Strategy { US, UIS, LgIS, LnIS };

const char* strategy_name(Strategy s);
Strategy strategy_from_name(const std::string& name);

// Integer-bin/residual decomposition of a depth: z = edge(l_int) + z_res,
// with l_int = floor(l). Exactly z_max lands in the otherwise empty top
// class l_int = N-1 with residual 0.
struct OrdinalDepthCode {
  double l = 0;      // continuous bin coordinate in [0, N-1]
  int l_int = 0;     // floor(l), clamped to [0, N-1]
  double z_res = 0;  // z - edge(l_int), meters
};

class DepthSpace {
 public:
  DepthSpace(double z_min, double z_max, int n_bins, Strategy strategy);

  double z_min() const { return z_min_; }
  double z_max() const { return z_max_; }
  int n_bins() const { return n_; }
  Strategy strategy() const { return strategy_; }

  // z -> l. Strictly increasing with l(z_min) = 0 and l(z_max) = N-1.
  // Throws std::out_of_range when z is outside [z_min, z_max].
  double bin_coordinate(double z) const;

  // l -> z, the exact closed-form inverse of bin_coordinate.
  double bin_edge_depth(double l) const;

  double bin_width(int k) const;  // edge(k+1) - edge(k)

  OrdinalDepthCode encode(double z) const;
  double decode(const OrdinalDepthCode& code) const;  // validates the code

  // `count` depths, strictly increasing, one per stratum of the active
  // parameterization. Without jitter sample k sits at the stratum midpoint
  // l = (k + 0.5)(N-1)/count; with jitter it is uniform within the stratum
  // in l-space.
  std::vector<double> sample_depths(int count, Rng* jitter = nullptr) const;

  // Relative depth z / z_max in (0, 1] and its exact inverse.
  double normalize_depth(double z) const;
  double denormalize_depth(double z_rel) const;

 private:
  void check_range(double z) const;

  double z_min_, z_max_;
  int n_;
  Strategy strategy_;
};

}  // namespace raydet
