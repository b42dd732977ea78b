/* Copyright 2026 The iCaps Authors. All Rights Reserved.

Licensed under the Apache License, Version 2.0 (the "License");
you may not use this file except in compliance with the License.
You may obtain a copy of the License at

    http://www.apache.org/licenses/LICENSE-2.0

Unless required by applicable law or agreed to in writing, software
distributed under the License is distributed on an "AS IS" BASIS,
WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
See the License for the specific language governing permissions and
limitations under the License.
==============================================================================*/

#ifndef ICAPS_TENSOR_HPP_
#define ICAPS_TENSOR_HPP_

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <initializer_list>
#include <span>
#include <string>
#include <vector>

namespace icaps {

// Per-position activity flags. 1 = real content, 0 = padding.
using Mask = std::vector<std::uint8_t>;

// Shape-tagged, row-major array of doubles. A tensor with a zero-sized
// dimension is a legal "absent" slot (e.g. no frozen embedding part).
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(std::vector<std::size_t> shape, double fill = 0.0);
  Tensor(std::vector<std::size_t> shape, std::vector<double> values);

  static Tensor vector(std::initializer_list<double> values);

  const std::vector<std::size_t>& shape() const { return shape_; }
  std::size_t rank() const { return shape_.size(); }
  std::size_t dim(std::size_t axis) const { return shape_.at(axis); }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  std::span<double> data() { return data_; }
  std::span<const double> data() const { return data_; }

  double& operator[](std::size_t i) { return data_[i]; }
  double operator[](std::size_t i) const { return data_[i]; }

  double& at(std::size_t i, std::size_t j) { return data_[i * shape_[1] + j]; }
  double at(std::size_t i, std::size_t j) const { return data_[i * shape_[1] + j]; }
  double& at(std::size_t i, std::size_t j, std::size_t k) {
    return data_[(i * shape_[1] + j) * shape_[2] + k];
  }
  double at(std::size_t i, std::size_t j, std::size_t k) const {
    return data_[(i * shape_[1] + j) * shape_[2] + k];
  }

  // Contiguous slab for leading index i (a row of a matrix, a matrix of a
  // rank-3 tensor).
  std::span<double> slab(std::size_t i);
  std::span<const double> slab(std::size_t i) const;
  // Slab for leading indices (i, j) of a rank >= 3 tensor.
  std::span<double> slab(std::size_t i, std::size_t j);
  std::span<const double> slab(std::size_t i, std::size_t j) const;

  void fill(double value);
  bool all_finite() const;
  bool same_shape(const Tensor& other) const { return shape_ == other.shape_; }
  std::string shape_string() const;

  // Bitwise equality of shape and values.
  friend bool operator==(const Tensor& a, const Tensor& b);

 private:
  std::vector<std::size_t> shape_;
  std::vector<double> data_;
};

// splitmix64 stream. Identical seeds give identical sequences everywhere.
class Rng {
 public:
  explicit Rng(std::uint64_t seed = 0) : state_(seed) {}

  std::uint64_t next_u64();
  // Uniform in [0, 1) with 53 bits of resolution.
  double uniform();
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
  // Uniform integer in [0, n).
  std::size_t below(std::size_t n);

  std::uint64_t state() const { return state_; }

 private:
  std::uint64_t state_;
};

// Softmax over `logits`, restricted to positions where mask is nonzero.
// Masked-out outputs are exactly zero. Throws when nothing is active.
Tensor stable_softmax(const Tensor& logits, std::span<const std::uint8_t> mask = {});
void stable_softmax(std::span<const double> logits, std::span<const std::uint8_t> mask,
                    std::span<double> out);

// Vector-Jacobian product of softmax: grad_logits = p * (grad_p - <p, grad_p>).
// Entries with p == 0 (masked) receive zero.
void softmax_backward(std::span<const double> probs, std::span<const double> grad_probs,
                      std::span<double> grad_logits);

// Capsule nonlinearity: scales x to norm |x|^2 / (1 + |x|^2).
Tensor squash(const Tensor& x);
void squash(std::span<const double> x, std::span<double> out);
// Vector-Jacobian product of squash at x.
void squash_backward(std::span<const double> x, std::span<const double> grad_out,
                     std::span<double> grad_in);

Tensor glorot_uniform(std::size_t rows, std::size_t cols, Rng& rng);

struct GradReport {
  std::string op_name;
  double max_rel_error = 0.0;
  std::size_t worst_index = 0;
  double max_abs_error = 0.0;
  double max_magnitude = 0.0;  // largest |analytic| + |numeric|

  // Tensor-wide relative error: max |a - n| over max (|a| + |n|).
  double normwise_error() const {
    return max_magnitude > 0.0 ? max_abs_error / max_magnitude : max_abs_error;
  }
};

inline constexpr double kGradCheckStep = 1e-5;

// Compares `analytic` against central differences of `f` around `point`.
// Elementwise relative error is |a - n| / max(1e-8, |a| + |n|).
GradReport grad_check(const std::string& op_name,
                      const std::function<double(const Tensor&)>& f,
                      const Tensor& point, const Tensor& analytic,
                      double step = kGradCheckStep);

namespace kernels {

inline double dot(std::span<const double> a, std::span<const double> b) {
  double acc = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) acc += a[i] * b[i];
  return acc;
}

// y += alpha * x
inline void axpy(double alpha, std::span<const double> x, std::span<double> y) {
  for (std::size_t i = 0; i < x.size(); ++i) y[i] += alpha * x[i];
}

// y = W x, W is rows x cols row-major.
inline void gemv(std::span<const double> w, std::size_t rows, std::size_t cols,
                 std::span<const double> x, std::span<double> y) {
  for (std::size_t r = 0; r < rows; ++r) y[r] = dot(w.subspan(r * cols, cols), x);
}

// y += W^T x, W is rows x cols row-major.
inline void gemv_t_acc(std::span<const double> w, std::size_t rows, std::size_t cols,
                       std::span<const double> x, std::span<double> y) {
  for (std::size_t r = 0; r < rows; ++r) axpy(x[r], w.subspan(r * cols, cols), y);
}

// G += a b^T, G is |a| x |b| row-major.
inline void outer_acc(std::span<const double> a, std::span<const double> b,
                      std::span<double> g) {
  for (std::size_t r = 0; r < a.size(); ++r) axpy(a[r], b, g.subspan(r * b.size(), b.size()));
}

inline double norm(std::span<const double> x) { return std::sqrt(dot(x, x)); }

}  // namespace kernels

}  // namespace icaps

#endif  // ICAPS_TENSOR_HPP_
