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

#include "icaps/tensor.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <limits>
#include <numeric>
#include <sstream>
#include <stdexcept>

namespace icaps {
namespace {

std::size_t product(const std::vector<std::size_t>& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1},
                         std::multiplies<std::size_t>());
}

constexpr double kSquashEps = 1e-12;

}  // namespace

Tensor::Tensor(std::vector<std::size_t> shape, double fill)
    : shape_(std::move(shape)), data_(product(shape_), fill) {}

Tensor::Tensor(std::vector<std::size_t> shape, std::vector<double> values)
    : shape_(std::move(shape)), data_(std::move(values)) {
  if (data_.size() != product(shape_)) {
    throw std::invalid_argument("tensor data length " + std::to_string(data_.size()) +
                                " does not match shape " + shape_string());
  }
}

Tensor Tensor::vector(std::initializer_list<double> values) {
  return Tensor({values.size()}, std::vector<double>(values));
}

std::span<double> Tensor::slab(std::size_t i) {
  const std::size_t stride = shape_[0] == 0 ? 0 : data_.size() / shape_[0];
  return std::span<double>(data_).subspan(i * stride, stride);
}

std::span<const double> Tensor::slab(std::size_t i) const {
  const std::size_t stride = shape_[0] == 0 ? 0 : data_.size() / shape_[0];
  return std::span<const double>(data_).subspan(i * stride, stride);
}

std::span<double> Tensor::slab(std::size_t i, std::size_t j) {
  const std::size_t outer = shape_[0] * shape_[1];
  const std::size_t stride = outer == 0 ? 0 : data_.size() / outer;
  return std::span<double>(data_).subspan((i * shape_[1] + j) * stride, stride);
}

std::span<const double> Tensor::slab(std::size_t i, std::size_t j) const {
  const std::size_t outer = shape_[0] * shape_[1];
  const std::size_t stride = outer == 0 ? 0 : data_.size() / outer;
  return std::span<const double>(data_).subspan((i * shape_[1] + j) * stride, stride);
}

void Tensor::fill(double value) { std::fill(data_.begin(), data_.end(), value); }

bool Tensor::all_finite() const {
  return std::all_of(data_.begin(), data_.end(), [](double v) { return std::isfinite(v); });
}

std::string Tensor::shape_string() const {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape_.size(); ++i) os << (i ? "x" : "") << shape_[i];
  os << ']';
  return os.str();
}

bool operator==(const Tensor& a, const Tensor& b) {
  if (a.shape_ != b.shape_) return false;
  for (std::size_t i = 0; i < a.data_.size(); ++i) {
    if (std::bit_cast<std::uint64_t>(a.data_[i]) != std::bit_cast<std::uint64_t>(b.data_[i])) {
      return false;
    }
  }
  return true;
}

std::uint64_t Rng::next_u64() {
  state_ += 0x9e3779b97f4a7c15ULL;
  std::uint64_t z = state_;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

double Rng::uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

std::size_t Rng::below(std::size_t n) {
  if (n == 0) throw std::invalid_argument("Rng::below: empty range");
  return static_cast<std::size_t>(uniform() * static_cast<double>(n)) % n;
}

void stable_softmax(std::span<const double> logits, std::span<const std::uint8_t> mask,
                    std::span<double> out) {
  const bool masked = !mask.empty();
  if (masked && mask.size() != logits.size()) {
    throw std::invalid_argument("softmax mask length does not match logits");
  }
  double peak = -std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < logits.size(); ++i) {
    if (!masked || mask[i]) peak = std::max(peak, logits[i]);
  }
  if (!std::isfinite(peak)) throw std::invalid_argument("no active positions");
  double total = 0.0;
  for (std::size_t i = 0; i < logits.size(); ++i) {
    out[i] = (!masked || mask[i]) ? std::exp(logits[i] - peak) : 0.0;
    total += out[i];
  }
  for (std::size_t i = 0; i < logits.size(); ++i) out[i] /= total;
}

Tensor stable_softmax(const Tensor& logits, std::span<const std::uint8_t> mask) {
  if (logits.size() == 0) throw std::invalid_argument("no active positions");
  Tensor out({logits.size()});
  stable_softmax(logits.data(), mask, out.data());
  return out;
}

void softmax_backward(std::span<const double> probs, std::span<const double> grad_probs,
                      std::span<double> grad_logits) {
  const double inner = kernels::dot(probs, grad_probs);
  for (std::size_t i = 0; i < probs.size(); ++i) {
    grad_logits[i] = probs[i] * (grad_probs[i] - inner);
  }
}

void squash(std::span<const double> x, std::span<double> out) {
  const double sq = kernels::dot(x, x);
  const double n = std::sqrt(sq);
  const double factor = sq / (1.0 + sq) / (n + kSquashEps);
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = factor * x[i];
}

Tensor squash(const Tensor& x) {
  Tensor out(x.shape());
  squash(x.data(), out.data());
  return out;
}

// squash(x) = c(n) x with c(n) = n^2 / ((1 + n^2)(n + eps)), n = |x|.
// d/dx = c I + (c'(n) / n) x x^T, and c'(n)/n = (2D - n D') / D^2 stays
// finite at n = 0.
void squash_backward(std::span<const double> x, std::span<const double> grad_out,
                     std::span<double> grad_in) {
  const double sq = kernels::dot(x, x);
  const double n = std::sqrt(sq);
  const double denom = (1.0 + sq) * (n + kSquashEps);
  const double c = sq / denom;
  const double denom_prime = 2.0 * n * (n + kSquashEps) + (1.0 + sq);
  const double c_prime_over_n = (2.0 * denom - n * denom_prime) / (denom * denom);
  const double proj = kernels::dot(x, grad_out);
  for (std::size_t i = 0; i < x.size(); ++i) {
    grad_in[i] = c * grad_out[i] + c_prime_over_n * proj * x[i];
  }
}

Tensor glorot_uniform(std::size_t rows, std::size_t cols, Rng& rng) {
  if (rows == 0 || cols == 0) throw std::invalid_argument("glorot_uniform: empty shape");
  const double limit = std::sqrt(6.0 / static_cast<double>(rows + cols));
  Tensor out({rows, cols});
  for (double& v : out.data()) v = rng.uniform(-limit, limit);
  return out;
}

GradReport grad_check(const std::string& op_name,
                      const std::function<double(const Tensor&)>& f, const Tensor& point,
                      const Tensor& analytic, double step) {
  if (!point.same_shape(analytic)) {
    throw std::invalid_argument(op_name + ": analytic gradient shape " + analytic.shape_string() +
                                " does not match point " + point.shape_string());
  }
  GradReport report{op_name};
  Tensor probe = point;
  for (std::size_t i = 0; i < point.size(); ++i) {
    const double original = probe[i];
    probe[i] = original + step;
    const double up = f(probe);
    probe[i] = original - step;
    const double down = f(probe);
    probe[i] = original;
    if (!std::isfinite(up) || !std::isfinite(down)) {
      throw std::runtime_error(op_name + ": non-finite function value during gradient check");
    }
    const double numeric = (up - down) / (2.0 * step);
    const double abs_error = std::abs(analytic[i] - numeric);
    const double magnitude = std::abs(analytic[i]) + std::abs(numeric);
    const double rel = abs_error / std::max(1e-8, magnitude);
    report.max_abs_error = std::max(report.max_abs_error, abs_error);
    report.max_magnitude = std::max(report.max_magnitude, magnitude);
    if (rel > report.max_rel_error) {
      report.max_rel_error = rel;
      report.worst_index = i;
    }
  }
  return report;
}

}  // namespace icaps
