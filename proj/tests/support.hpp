#pragma once

#include <cfloat>
#include <cmath>
#include <functional>
#include <map>
#include <string>
#include <vector>

#include "raydet/params.hpp"
#include "raydet/rng.hpp"

namespace raydet::test {

// Central finite differences against analytically computed gradients for
// every element of every parameter. loss(store) must be a pure function of
// the parameter values.
//
// Central differences evaluate (L+ - L-) / 2h, so cancellation noise of
// order eps*|L|/2h is unavoidable; gradient elements whose analytic/FD gap
// sits below that measurement floor count as resolved. Everything above it
// must meet the relative tolerance.
struct GradCheckResult {
  double worst_rel = 0.0;
  std::string worst_name;
  int checked = 0;
};

inline GradCheckResult finite_diff_check(
    nn::ParamStore& store, const std::function<double(nn::ParamStore&)>& loss,
    const std::function<void(nn::ParamStore&)>& compute_grads, double step = 1e-5) {
  store.zero_grads();
  compute_grads(store);
  std::map<std::string, Tensor> analytic;
  for (const auto& [name, g] : store.all()) analytic[name] = store.grad(name);

  const double base = loss(store);
  const double noise_floor = 32.0 * DBL_EPSILON * std::max(1.0, std::abs(base)) /
                             (2.0 * step);

  GradCheckResult res;
  for (auto& [name, p] : store.all_mutable()) {
    const Tensor& g = analytic[name];
    for (std::size_t k = 0; k < p.size(); ++k) {
      double orig = p.data[k];
      p.data[k] = orig + step;
      double up = loss(store);
      p.data[k] = orig - step;
      double down = loss(store);
      p.data[k] = orig;
      double fd = (up - down) / (2.0 * step);
      double an = g.data[k];
      double diff = std::abs(fd - an);
      double rel = diff <= noise_floor
                       ? 0.0
                       : diff / std::max(std::max(std::abs(fd), std::abs(an)), 1e-12);
      ++res.checked;
      if (rel > res.worst_rel) {
        res.worst_rel = rel;
        res.worst_name = name + "[" + std::to_string(k) + "]";
      }
    }
  }
  return res;
}

}  // namespace raydet::test
