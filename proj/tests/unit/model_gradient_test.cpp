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

#include <array>

#include "icaps/model.hpp"
#include "support/fixtures.hpp"

namespace icaps {
namespace {

using testing::check_model_gradients;
using testing::random_long;
using testing::random_parameters;
using testing::random_short;
using testing::tiny_config;

void expect_all_pass(const std::vector<testing::TensorGradCheck>& checks) {
  for (const auto& c : checks) {
    EXPECT_LT(c.report.max_rel_error, 1e-4)
        << c.name << " worst index " << c.report.worst_index;
  }
}

TEST(ModelGradient, ShortEveryTensor) {
  const ModelConfig config = tiny_config(Variant::Short);
  for (std::uint64_t seed : {11u, 12u, 13u}) {
    const Parameters params = random_parameters(config, seed);
    Rng rng(seed * 7 + 1);
    const auto input = random_short(config, 4, rng);
    expect_all_pass(check_model_gradients(config, params, input, seed % 2));
  }
}

TEST(ModelGradient, LongEveryTensor) {
  const ModelConfig config = tiny_config(Variant::Long);
  for (std::uint64_t seed : {21u, 22u, 23u}) {
    const Parameters params = random_parameters(config, seed);
    Rng rng(seed * 7 + 1);
    const std::array<std::size_t, 2> lengths{5, 3};
    const auto input = random_long(config, lengths, rng);
    expect_all_pass(check_model_gradients(config, params, input, seed % 2));
  }
}

TEST(ModelGradient, LongWithMaskedSentence) {
  ModelConfig config = tiny_config(Variant::Long);
  config.sentences = 3;
  const Parameters params = random_parameters(config, 5);
  Rng rng(99);
  const std::array<std::size_t, 3> lengths{6, 2, 0};
  const auto input = random_long(config, lengths, rng);
  expect_all_pass(check_model_gradients(config, params, input, 1));
}

TEST(ModelGradient, LinearConvAndStopRouting) {
  ModelConfig config = tiny_config(Variant::Short);
  config.conv_activation = ConvActivation::Linear;
  config.routing_grad = RoutingGrad::Stop;
  const Parameters params = random_parameters(config, 31);
  Rng rng(3);
  const auto input = random_short(config, 6, rng);
  // Stop mode is not the true derivative of the loss; only the linear conv
  // part is compared against finite differences here.
  const ForwardTrace trace = forward(input, params, config);
  const Gradients g = backward(trace, 0, params, config);
  EXPECT_TRUE(g.conv_w.all_finite());

  config.routing_grad = RoutingGrad::Full;
  expect_all_pass(check_model_gradients(config, params, input, 0));
}

TEST(ModelGradient, FrozenPartReceivesNothing) {
  ModelConfig config = tiny_config(Variant::Short);
  config.embed_dim = 10;
  config.fixed_dim = 4;
  const Parameters params = random_parameters(config, 41);
  Rng rng(8);
  const auto input = random_short(config, 5, rng);
  const auto checks = check_model_gradients(config, params, input, 1);
  for (const auto& c : checks) EXPECT_NE(c.name, "embed_fixed");
  expect_all_pass(checks);
}

}  // namespace
}  // namespace icaps
