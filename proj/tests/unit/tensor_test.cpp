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

#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <numeric>

#include "icaps/tensor.hpp"
#include "support/oracles.hpp"

namespace icaps {
namespace {

TEST(Rng, SplitMixReferenceStream) {
  // Published splitmix64 outputs for seed 0.
  Rng rng(0);
  EXPECT_EQ(rng.next_u64(), 0xe220a8397b1dcdafULL);
  EXPECT_EQ(rng.next_u64(), 0x6e789e6aa1b965f4ULL);
  EXPECT_EQ(rng.next_u64(), 0x06c45d188009454fULL);
}

TEST(Rng, UniformUsesTop53Bits) {
  Rng a(7), b(7);
  for (int k = 0; k < 100; ++k) {
    const double u = a.uniform();
    EXPECT_EQ(u, static_cast<double>(b.next_u64() >> 11) * 0x1.0p-53);
    EXPECT_GE(u, 0.0);
    EXPECT_LT(u, 1.0);
  }
}

TEST(Rng, BelowStaysInRange) {
  Rng rng(3);
  std::vector<int> hits(7, 0);
  for (int k = 0; k < 7000; ++k) hits[rng.below(7)] += 1;
  for (int h : hits) EXPECT_GT(h, 800);
}

TEST(Tensor, ShapeAndIndexing) {
  Tensor t({2, 3, 4});
  EXPECT_EQ(t.size(), 24u);
  t.at(1, 2, 3) = 5.0;
  EXPECT_EQ(t[23], 5.0);
  EXPECT_EQ(t.slab(1, 2).size(), 4u);
  EXPECT_EQ(t.slab(1)[11], 5.0);
  EXPECT_EQ(t.shape_string(), "[2x3x4]");
  EXPECT_THROW(Tensor({2, 2}, std::vector<double>{1, 2, 3}), std::invalid_argument);
}

TEST(Tensor, ZeroSizedDimensionIsEmpty) {
  Tensor t({4, 0});
  EXPECT_TRUE(t.empty());
  EXPECT_EQ(t.rank(), 2u);
}

TEST(Softmax, SumsToOneAndIsShiftInvariant) {
  Rng rng(1);
  for (int trial = 0; trial < 50; ++trial) {
    Tensor x({9});
    for (double& v : x.data()) v = rng.uniform(-30, 30);
    const Tensor p = stable_softmax(x);
    EXPECT_NEAR(std::accumulate(p.data().begin(), p.data().end(), 0.0), 1.0, 1e-12);
    Tensor shifted = x;
    for (double& v : shifted.data()) v += 500.0;
    const Tensor q = stable_softmax(shifted);
    for (std::size_t k = 0; k < 9; ++k) EXPECT_NEAR(p[k], q[k], 1e-12);
  }
}

TEST(Softmax, MaskedEntriesAreExactlyZero) {
  const Tensor x = Tensor::vector({1.0, 1000.0, 2.0, 3.0});
  const Mask mask{1, 0, 1, 0};
  const Tensor p = stable_softmax(x, mask);
  EXPECT_EQ(p[1], 0.0);
  EXPECT_EQ(p[3], 0.0);
  EXPECT_NEAR(p[0], 1.0 / (1.0 + std::exp(1.0)), 1e-15);
  EXPECT_NEAR(p[0] + p[2], 1.0, 1e-15);
}

TEST(Softmax, AllMaskedThrows) {
  const Mask mask{0, 0};
  EXPECT_THROW(stable_softmax(Tensor::vector({1.0, 2.0}), mask), std::invalid_argument);
}

TEST(Softmax, UniformForEqualLogits) {
  const Tensor p = stable_softmax(Tensor::vector({0.3, 0.3, 0.3, 0.3}));
  for (double v : p.data()) EXPECT_DOUBLE_EQ(v, 0.25);
}

TEST(Softmax, BackwardMatchesFiniteDifferences) {
  Rng rng(5);
  Tensor x({6});
  Tensor w({6});
  for (double& v : x.data()) v = rng.uniform(-2, 2);
  for (double& v : w.data()) v = rng.uniform(-1, 1);
  const Mask mask{1, 1, 0, 1, 1, 1};
  const auto f = [&](const Tensor& z) {
    const Tensor p = stable_softmax(z, mask);
    double acc = 0.0;
    for (std::size_t k = 0; k < 6; ++k) acc += w[k] * p[k] * p[k];
    return acc;
  };
  const Tensor p = stable_softmax(x, mask);
  Tensor gp({6});
  for (std::size_t k = 0; k < 6; ++k) gp[k] = 2.0 * w[k] * p[k];
  Tensor g({6});
  softmax_backward(p.data(), gp.data(), g.data());
  EXPECT_LT(grad_check("softmax", f, x, g).max_rel_error, 1e-7);
}

TEST(Squash, ClosedFormNorms) {
  const auto norm_of = [](const Tensor& t) { return kernels::norm(t.data()); };
  EXPECT_EQ(norm_of(squash(Tensor::vector({0.0, 0.0, 0.0}))), 0.0);
  EXPECT_NEAR(norm_of(squash(Tensor::vector({0.6, 0.8}))), 0.5, 1e-12);
  EXPECT_NEAR(norm_of(squash(Tensor::vector({3.0, 0.0}))), 0.9, 1e-12);
}

TEST(Squash, NormBelowOneAndDirectionPreserved) {
  Rng rng(9);
  for (int trial = 0; trial < 200; ++trial) {
    Tensor x({5});
    for (double& v : x.data()) v = rng.uniform(-50, 50);
    const Tensor y = squash(x);
    EXPECT_LT(kernels::norm(y.data()), 1.0);
    const double cos = kernels::dot(x.data(), y.data()) /
                       (kernels::norm(x.data()) * kernels::norm(y.data()));
    EXPECT_NEAR(cos, 1.0, 1e-12);
    const auto ref = oracle::squash({x.data().begin(), x.data().end()});
    for (std::size_t k = 0; k < 5; ++k) EXPECT_NEAR(y[k], ref[k], 1e-12);
  }
}

TEST(Squash, BackwardMatchesFiniteDifferences) {
  Rng rng(4);
  for (double scale : {1e-3, 0.5, 4.0}) {
    Tensor x({4});
    Tensor w({4});
    for (double& v : x.data()) v = scale * rng.uniform(-1, 1);
    for (double& v : w.data()) v = rng.uniform(-1, 1);
    const auto f = [&](const Tensor& z) { return kernels::dot(w.data(), squash(z).data()); };
    Tensor g({4});
    squash_backward(x.data(), w.data(), g.data());
    // The curvature of squash grows like 1/|x|, so the step shrinks with the input.
    const double step = std::min(kGradCheckStep, 1e-4 * scale);
    EXPECT_LT(grad_check("squash", f, x, g, step).max_rel_error, 1e-6) << "scale " << scale;
  }
}

TEST(Squash, ZeroInputHasFiniteGradient) {
  const Tensor x({3});
  const Tensor w = Tensor::vector({1.0, -1.0, 0.5});
  Tensor g({3});
  squash_backward(x.data(), w.data(), g.data());
  EXPECT_TRUE(g.all_finite());
}

TEST(Glorot, BoundsAndSeedReproducibility) {
  Rng a(11), b(11);
  const Tensor w = glorot_uniform(30, 50, a);
  const double limit = std::sqrt(6.0 / 80.0);
  for (double v : w.data()) {
    EXPECT_LE(std::abs(v), limit);
  }
  EXPECT_TRUE(w == glorot_uniform(30, 50, b));
}

TEST(GradCheck, DetectsWrongGradient) {
  const Tensor x = Tensor::vector({1.0, 2.0});
  const auto f = [](const Tensor& z) { return z[0] * z[0] + 3.0 * z[1]; };
  EXPECT_LT(grad_check("ok", f, x, Tensor::vector({2.0, 3.0})).max_rel_error, 1e-8);
  const GradReport bad = grad_check("bad", f, x, Tensor::vector({2.0, 3.3}));
  EXPECT_GT(bad.max_rel_error, 1e-2);
  EXPECT_EQ(bad.worst_index, 1u);
}

}  // namespace
}  // namespace icaps
