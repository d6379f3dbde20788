#include "raydet/depthspace.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace raydet {

const char* strategy_name(Strategy s) {
  switch (s) {
    case Strategy::US: return "us";
    case Strategy::UIS: return "uis";
    case Strategy::LgIS: return "lgis";
    case Strategy::LnIS: return "lnis";
  }
  return "?";
}

Strategy strategy_from_name(const std::string& name) {
  if (name == "us") return Strategy::US;
  if (name == "uis") return Strategy::UIS;
  if (name == "lgis") return Strategy::LgIS;
  if (name == "lnis") return Strategy::LnIS;
  throw std::invalid_argument("unknown sampling strategy: " + name);
}

DepthSpace::DepthSpace(double z_min, double z_max, int n_bins, Strategy strategy)
    : z_min_(z_min), z_max_(z_max), n_(n_bins), strategy_(strategy) {
  if (!(z_min > 0.0) || !(z_min < z_max))
    throw std::invalid_argument("DepthSpace: requires 0 < z_min < z_max");
  if (n_bins < 2) throw std::invalid_argument("DepthSpace: requires n_bins >= 2");
}

void DepthSpace::check_range(double z) const {
  if (!(z >= z_min_ && z <= z_max_))
    throw std::out_of_range("depth outside [z_min, z_max]");
}

double DepthSpace::bin_coordinate(double z) const {
  check_range(z);
  const double nm1 = double(n_ - 1);
  switch (strategy_) {
    case Strategy::US:
      return nm1 * (z - z_min_) / (z_max_ - z_min_);
    case Strategy::UIS:
      return nm1 * (1.0 / z - 1.0 / z_min_) / (1.0 / z_max_ - 1.0 / z_min_);
    case Strategy::LgIS:
      return nm1 * (std::log(z) - std::log(z_min_)) /
             (std::log(z_max_) - std::log(z_min_));
    case Strategy::LnIS: {
      double d = double(n_) * nm1 * (z - z_min_) / (z_max_ - z_min_);
      return -0.5 + 0.5 * std::sqrt(1.0 + 4.0 * d);
    }
  }
  return 0;
}

double DepthSpace::bin_edge_depth(double l) const {
  if (!(l >= 0.0 && l <= double(n_ - 1)))
    throw std::out_of_range("bin coordinate outside [0, N-1]");
  const double nm1 = double(n_ - 1);
  const double span = z_max_ - z_min_;
  switch (strategy_) {
    case Strategy::US:
      return z_min_ + span * l / nm1;
    case Strategy::UIS: {
      double inv = 1.0 / z_min_ + (l / nm1) * (1.0 / z_max_ - 1.0 / z_min_);
      return 1.0 / inv;
    }
    case Strategy::LgIS:
      return z_min_ * std::pow(z_max_ / z_min_, l / nm1);
    case Strategy::LnIS:
      return z_min_ + span * l * (l + 1.0) / (double(n_) * nm1);
  }
  return 0;
}

double DepthSpace::bin_width(int k) const {
  if (k < 0 || k >= n_) throw std::out_of_range("bin index outside [0, N-1]");
  if (k == n_ - 1) return 0.0;  // the z_max singleton class
  return bin_edge_depth(double(k + 1)) - bin_edge_depth(double(k));
}

OrdinalDepthCode DepthSpace::encode(double z) const {
  check_range(z);
  OrdinalDepthCode code;
  code.l = bin_coordinate(z);
  // snap float noise at bin edges so an exact edge depth encodes as
  // (k, 0) rather than (k-1, full width)
  double snapped = std::round(code.l);
  if (std::abs(code.l - snapped) <= 1e-12 * double(n_ - 1)) code.l = snapped;
  code.l_int = std::min(int(std::floor(code.l)), n_ - 1);
  code.z_res = z - bin_edge_depth(double(code.l_int));
  if (code.z_res < -1e-9 * z_max_ && code.l_int > 0) {
    code.l_int -= 1;
    code.z_res = z - bin_edge_depth(double(code.l_int));
  }
  code.z_res = std::max(code.z_res, 0.0);
  return code;
}

double DepthSpace::decode(const OrdinalDepthCode& code) const {
  if (code.l_int < 0 || code.l_int > n_ - 1)
    throw std::invalid_argument("OrdinalDepthCode: bin index outside [0, N-1]");
  if (code.z_res < 0.0)
    throw std::invalid_argument("OrdinalDepthCode: negative residual");
  const double slack = 1e-9 * z_max_;
  if (code.l_int < n_ - 1) {
    if (code.z_res >= bin_width(code.l_int) + slack)
      throw std::invalid_argument("OrdinalDepthCode: residual exceeds bin width");
  } else if (code.z_res > slack) {
    throw std::invalid_argument("OrdinalDepthCode: nonzero residual in top class");
  }
  return bin_edge_depth(double(code.l_int)) + code.z_res;
}

std::vector<double> DepthSpace::sample_depths(int count, Rng* jitter) const {
  if (count < 1) throw std::invalid_argument("sample_depths: count >= 1 required");
  std::vector<double> out(count);
  const double stratum = double(n_ - 1) / double(count);
  for (int k = 0; k < count; ++k) {
    double u = jitter ? jitter->next_double() : 0.5;
    out[k] = bin_edge_depth((double(k) + u) * stratum);
  }
  return out;
}

double DepthSpace::normalize_depth(double z) const {
  check_range(z);
  return z / z_max_;
}

double DepthSpace::denormalize_depth(double z_rel) const {
  double z = z_rel * z_max_;
  check_range(z);
  return z;
}

}  // namespace raydet
