#include "raydet/mlp.hpp"

#include <cmath>
#include <stdexcept>

namespace raydet::nn {

OutputActivation output_activation_from_name(const std::string& name) {
  if (name == "none") return OutputActivation::None;
  if (name == "sigmoid") return OutputActivation::Sigmoid;
  if (name == "softplus") return OutputActivation::Softplus;
  if (name == "softmax") return OutputActivation::Softmax;
  throw std::invalid_argument("unknown output activation: " + name);
}

void MlpConfig::validate() const {
  if (input_width < 1 || output_width < 1)
    throw std::invalid_argument("MlpConfig: widths must be >= 1");
  for (int w : hidden_widths)
    if (w < 1) throw std::invalid_argument("MlpConfig: widths must be >= 1");
}

void Mlp::ensure_params(ParamStore& store) const {
  int in = cfg_.input_width;
  for (std::size_t i = 0; i <= cfg_.hidden_widths.size(); ++i) {
    int out = i < cfg_.hidden_widths.size() ? cfg_.hidden_widths[i] : cfg_.output_width;
    std::string w = prefix_ + ".w" + std::to_string(i);
    std::string b = prefix_ + ".b" + std::to_string(i);
    if (!store.has(w)) {
      store.create_weight(w, in, out);
      store.create_zeros(b, out, 1);
    }
    in = out;
  }
}

NodeId Mlp::apply(Tape& tape, ParamStore& store, NodeId x) const {
  if (tape.value(x).rows != cfg_.input_width)
    throw std::invalid_argument("Mlp " + prefix_ + ": input width mismatch");
  NodeId h = x;
  for (std::size_t i = 0; i <= cfg_.hidden_widths.size(); ++i) {
    std::string w = prefix_ + ".w" + std::to_string(i);
    std::string b = prefix_ + ".b" + std::to_string(i);
    NodeId wp = tape.param(store.value(w), &store.grad(w));
    NodeId bp = tape.param(store.value(b), &store.grad(b));
    h = tape.add_bias(tape.linear(wp, h), bp);
    if (i < cfg_.hidden_widths.size()) h = tape.relu(h);
  }
  switch (cfg_.output) {
    case OutputActivation::None: return h;
    case OutputActivation::Sigmoid: return tape.sigmoid(h);
    case OutputActivation::Softplus: return tape.softplus(h);
    case OutputActivation::Softmax: return tape.softmax_cols(h);
  }
  return h;
}

std::vector<std::string> Mlp::param_names() const {
  std::vector<std::string> names;
  for (std::size_t i = 0; i <= cfg_.hidden_widths.size(); ++i) {
    names.push_back(prefix_ + ".w" + std::to_string(i));
    names.push_back(prefix_ + ".b" + std::to_string(i));
  }
  return names;
}

int positional_width(int input_width, int frequencies) {
  return input_width * (1 + 2 * frequencies);
}

std::vector<double> positional_encode(const std::vector<double>& x, int frequencies) {
  if (frequencies < 0) throw std::invalid_argument("positional_encode: frequencies < 0");
  std::vector<double> out;
  out.reserve(positional_width(int(x.size()), frequencies));
  for (double v : x) out.push_back(v);
  for (int f = 0; f < frequencies; ++f) {
    double scale = std::pow(2.0, f) * M_PI;
    for (double v : x) {
      out.push_back(std::sin(scale * v));
      out.push_back(std::cos(scale * v));
    }
  }
  return out;
}

Tensor positional_encode_cols(const double* xs, int dim, int count, int frequencies) {
  Tensor out(positional_width(dim, frequencies), count);
  for (int c = 0; c < count; ++c) {
    double* yv = out.col(c);
    const double* xv = xs + std::size_t(c) * dim;
    int k = 0;
    for (int i = 0; i < dim; ++i) yv[k++] = xv[i];
    for (int f = 0; f < frequencies; ++f) {
      double scale = std::pow(2.0, f) * M_PI;
      for (int i = 0; i < dim; ++i) {
        yv[k++] = std::sin(scale * xv[i]);
        yv[k++] = std::cos(scale * xv[i]);
      }
    }
  }
  return out;
}

}  // namespace raydet::nn
