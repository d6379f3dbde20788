#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "raydet/tensor.hpp"

namespace raydet::nn {

// Named dense parameters with matching gradient buffers. Weight tensors are
// stored input-major [fan_in, fan_out]; initialization is uniform in
// +-sqrt(6 / (fan_in + fan_out)), drawn from a stream keyed by the tensor
// name so creation order never matters.
class ParamStore {
 public:
  explicit ParamStore(std::uint64_t seed = 0) : seed_(seed) {}

  Tensor& create_weight(const std::string& name, int fan_in, int fan_out);
  Tensor& create_zeros(const std::string& name, int rows, int cols);

  Tensor& value(const std::string& name);
  const Tensor& value(const std::string& name) const;
  Tensor& grad(const std::string& name);
  bool has(const std::string& name) const { return params_.count(name) > 0; }

  void zero_grads();
  std::uint64_t seed() const { return seed_; }
  const std::map<std::string, Tensor>& all() const { return params_; }
  std::map<std::string, Tensor>& all_mutable() { return params_; }
  std::map<std::string, Tensor>& grads_mutable() { return grads_; }

 private:
  std::uint64_t seed_;
  std::map<std::string, Tensor> params_;
  std::map<std::string, Tensor> grads_;
};

// Plain SGD with momentum: v = mu*v - lr*g; p += v.
class SgdOptimizer {
 public:
  SgdOptimizer(double learning_rate, double momentum)
      : lr_(learning_rate), mu_(momentum) {}

  void step(ParamStore& store);

  std::map<std::string, Tensor>& velocities() { return velocity_; }
  const std::map<std::string, Tensor>& velocities() const { return velocity_; }

 private:
  double lr_, mu_;
  std::map<std::string, Tensor> velocity_;
};

// Checkpoint container: named tensors, either f64 or opaque u64 payloads
// (used for RNG counters and iteration indices). Byte layout, everything
// little-endian:
//   magic "RDCKPT01" (8 bytes)
//   u32 tensor count
//   per tensor, sorted by name:
//     u16 name length, name bytes
//     u8 dtype (0 = f64, 1 = u64)
//     u32 rows, u32 cols
//     rows*cols*8 payload bytes
struct Checkpoint {
  std::map<std::string, Tensor> f64;
  std::map<std::string, std::vector<std::uint64_t>> u64;

  void save(const std::string& path) const;
  static Checkpoint load(const std::string& path);
};

}  // namespace raydet::nn
