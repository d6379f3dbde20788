#pragma once

#include <string>
#include <vector>

#include "raydet/params.hpp"
#include "raydet/tape.hpp"

namespace raydet::nn {

enum class OutputActivation { None, Sigmoid, Softplus, Softmax };

OutputActivation output_activation_from_name(const std::string& name);

// Fully-connected stack with relu between hidden layers. Hidden widths may
// be empty (a single affine map).
struct MlpConfig {
  int input_width = 0;
  std::vector<int> hidden_widths;
  int output_width = 0;
  OutputActivation output = OutputActivation::None;

  void validate() const;
};

// Owns nothing: parameters live in a ParamStore under "<prefix>.w<i>" /
// "<prefix>.b<i>". ensure_params is idempotent per store.
class Mlp {
 public:
  Mlp(std::string prefix, MlpConfig config) : prefix_(std::move(prefix)), cfg_(config) {
    cfg_.validate();
  }

  void ensure_params(ParamStore& store) const;

  // Appends the forward pass to the tape; x is [input_width, B].
  NodeId apply(Tape& tape, ParamStore& store, NodeId x) const;

  const MlpConfig& config() const { return cfg_; }
  const std::string& prefix() const { return prefix_; }
  std::vector<std::string> param_names() const;

 private:
  std::string prefix_;
  MlpConfig cfg_;
};

// sin/cos features: [x, sin(2^0 pi x), cos(2^0 pi x), ..., sin(2^{F-1} pi x),
// cos(2^{F-1} pi x)] per input dimension, width d*(1 + 2F). Inputs are
// sample positions/directions (never parameters), so this is a plain
// function rather than a tape op.
std::vector<double> positional_encode(const std::vector<double>& x, int frequencies);
int positional_width(int input_width, int frequencies);

// Batched variant writing into a column-major tensor [width, n].
Tensor positional_encode_cols(const double* xs, int dim, int count, int frequencies);

}  // namespace raydet::nn
