#pragma once

#include <cstddef>
#include <vector>

namespace raydet {

// Dense 2-D array of 64-bit reals, column-major: element (r, c) lives at
// data[c * rows + r]. Columns are the batch dimension throughout, so a
// batch of feature vectors keeps each vector contiguous. Scalars are 1x1,
// vectors are n x 1.
struct Tensor {
  int rows = 0;
  int cols = 0;
  std::vector<double> data;

  Tensor() = default;
  Tensor(int r, int c) : rows(r), cols(c), data(std::size_t(r) * c, 0.0) {}
  Tensor(int r, int c, std::vector<double> d) : rows(r), cols(c), data(std::move(d)) {}

  static Tensor scalar(double v) {
    Tensor t(1, 1);
    t.data[0] = v;
    return t;
  }

  double& at(int r, int c) { return data[std::size_t(c) * rows + r]; }
  double at(int r, int c) const { return data[std::size_t(c) * rows + r]; }
  double* col(int c) { return data.data() + std::size_t(c) * rows; }
  const double* col(int c) const { return data.data() + std::size_t(c) * rows; }

  std::size_t size() const { return data.size(); }
  bool empty() const { return data.empty(); }
  bool same_shape(const Tensor& o) const { return rows == o.rows && cols == o.cols; }

  void fill(double v) { std::fill(data.begin(), data.end(), v); }
};

}  // namespace raydet
