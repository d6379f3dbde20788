#pragma once

#include <array>
#include <functional>
#include <string>
#include <vector>

#include "raydet/tensor.hpp"

namespace raydet::nn {

using NodeId = int;

// Reverse-mode tape over dense tensors. A fresh tape is built per training
// step; ops append nodes that only reference earlier nodes, so the reverse
// creation order is a valid topological order for backward().
//
// Ops that mix a differentiable input with constants take the constants as
// plain Tensors; only node inputs receive gradients.
class Tape {
 public:
  // Leaf holding a constant; no gradient flows into it.
  NodeId input(Tensor value);
  // Leaf bound to an external parameter. After backward(), the accumulated
  // gradient is added into *grad_sink (shape must match).
  NodeId param(const Tensor& value, Tensor* grad_sink);

  // out[o,b] = sum_k P[k,o] X[k,b]  (linear layer; P is stored input-major)
  NodeId linear(NodeId p, NodeId x);
  NodeId add_bias(NodeId x, NodeId b);  // b is [m,1], broadcast over columns

  NodeId relu(NodeId x);
  NodeId softplus(NodeId x);  // log(1+e^x), stable for large |x|
  NodeId sigmoid(NodeId x);
  NodeId softmax_cols(NodeId x);

  NodeId concat_rows(const std::vector<NodeId>& xs);
  NodeId slice_rows(NodeId x, int row0, int count);
  NodeId axpb(NodeId x, double a, double b);  // a*x + b elementwise
  NodeId add(NodeId x, NodeId y);
  NodeId mul(NodeId x, NodeId y);
  NodeId mul_cols(NodeId x, NodeId v);  // scale column b of x by v[0,b]
  NodeId div_cols(NodeId x, NodeId v);  // divide column b of x by v[0,b]
  NodeId clamp_min(NodeId x, double floor);
  // x + u * v  with constant column vector u [m] and node row v [1,B]
  NodeId add_rank1(NodeId x, const std::vector<double>& u, NodeId v);

  // alpha = 1 - exp(-sigma*delta), computed via expm1 for stability
  NodeId alpha_from_sigma(NodeId sigma, Tensor delta);

  // Volume-rendering weights for rays of `samples_per_ray` consecutive
  // columns: w_i = T_i * alpha_i with T_i = exp(-sum_{j<i} sigma_j delta_j).
  NodeId composite_weights(NodeId sigma, Tensor delta, int samples_per_ray);

  // out[m, R] with out[:,r] = sum_s w[0, r*S+s] * X[:, r*S+s]
  NodeId weighted_reduce(NodeId w, NodeId x, int samples_per_ray);
  NodeId weighted_reduce_const(NodeId w, Tensor x, int samples_per_ray);

  // Per-ray bin-mass distribution: every sample's weight splits linearly
  // between the two bins bracketing its bin coordinate l_of_col (a linear
  // hat of unit width). Output is [n_bins, R].
  NodeId soft_bin_mass(NodeId w, std::vector<double> l_of_col, int n_bins,
                       int samples_per_ray);

  // Trilinear reads from a voxel volume [C, n_voxels]; each output column p
  // is a weighted sum of voxel columns. Positions are baked into the tap
  // table, so gradients flow to the volume only.
  struct Tap {
    int voxel;
    double weight;
  };
  NodeId gather_taps(NodeId volume, std::vector<std::array<Tap, 8>> taps);
  NodeId gather_cols(NodeId x, std::vector<int> idx);

  // Multi-view aggregation of bilinear feature-map reads per voxel. taps[v]
  // lists per-view footprints; view averaging is already folded into the
  // tap weights. Output is [C, n_voxels].
  struct ViewTap {
    int map;     // which feature map
    int col[4];  // bilinear footprint columns in that map
    double w[4];
  };
  NodeId backproject_taps(const std::vector<NodeId>& maps,
                          std::vector<std::vector<ViewTap>> taps, int n_voxels);

  // Losses (scalar outputs). Masks are 0/1 per column; an all-zero mask
  // yields loss 0. Means run over unmasked columns times rows.
  NodeId mse_loss(NodeId x, Tensor target);  // mean over all elements
  NodeId softmax_ce(NodeId logits, std::vector<int> labels, std::vector<double> mask);
  NodeId nll_probs(NodeId probs, std::vector<int> labels, std::vector<double> mask,
                   double floor = 1e-12);
  NodeId l1_loss(NodeId x, Tensor target, std::vector<double> mask);
  NodeId huber_loss(NodeId x, Tensor target, std::vector<double> mask, double delta);
  NodeId bce_loss(NodeId p, Tensor target);  // mean binary cross-entropy

  NodeId weighted_sum_scalars(const std::vector<NodeId>& xs,
                              const std::vector<double>& weights);

  const Tensor& value(NodeId id) const { return nodes_[id].value; }
  Tensor& grad(NodeId id);

  // Seeds d(root)/d(root) = 1, runs the tape in reverse and flushes
  // parameter gradients into their sinks. Root must be a scalar.
  void backward(NodeId root);

  std::size_t node_count() const { return nodes_.size(); }

 private:
  struct Node {
    Tensor value;
    Tensor grad;  // allocated lazily
    std::function<void(Tape&)> back;
    bool needs_grad = false;
    Tensor* sink = nullptr;
  };

  NodeId push(Tensor value, bool needs_grad, std::function<void(Tape&)> back);

  std::vector<Node> nodes_;
};

}  // namespace raydet::nn
