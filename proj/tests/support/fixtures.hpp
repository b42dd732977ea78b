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

#ifndef ICAPS_TESTS_SUPPORT_FIXTURES_HPP_
#define ICAPS_TESTS_SUPPORT_FIXTURES_HPP_

#include <string>
#include <vector>

#include "icaps/model.hpp"
#include "icaps/tensor.hpp"
#include "icaps/text.hpp"

namespace icaps::testing {

// V=20, d_e=8, d_fixed=0, K=3, d_w=8, d_p=d_q=4, I=2, d_c=4, J=2, N=6, r=3;
// Long adds M=2, d_s=4.
inline ModelConfig tiny_config(Variant variant = Variant::Short) {
  ModelConfig c;
  c.variant = variant;
  c.vocab_size = 20;
  c.min_freq = 0;
  c.embed_dim = 8;
  c.fixed_dim = 0;
  c.kernel_size = 3;
  c.region_dim = 8;
  c.query_dim = 4;
  c.primary_dim = 4;
  c.sentence_dim = variant == Variant::Long ? 4 : 0;
  c.class_dim = 4;
  c.num_primary = 2;
  c.num_classes = 2;
  c.words = 6;
  c.sentences = variant == Variant::Long ? 2 : 1;
  c.routing_iters = 3;
  return c;
}

inline Parameters random_parameters(const ModelConfig& config, std::uint64_t seed) {
  Rng rng(seed);
  Tensor fixed = config.fixed_dim ? random_embeddings(config.vocab_size, config.fixed_dim, rng)
                                  : Tensor();
  return Parameters::init(config, std::move(fixed), rng);
}

// Random real tokens (ids >= 2) filling a prefix of `length` slots.
inline EncodedShort random_short(const ModelConfig& config, std::size_t length, Rng& rng) {
  EncodedShort e{std::vector<std::int32_t>(config.words, kPadId), Mask(config.words, 0)};
  for (std::size_t n = 0; n < length; ++n) {
    e.ids[n] = static_cast<std::int32_t>(1 + rng.below(config.vocab_size - 1));
    e.mask[n] = 1;
  }
  return e;
}

inline EncodedLong random_long(const ModelConfig& config, std::span<const std::size_t> lengths,
                               Rng& rng) {
  EncodedLong e;
  e.sentences = config.sentences;
  e.words = config.words;
  e.ids.assign(e.sentences * e.words, kPadId);
  e.word_mask.assign(e.sentences * e.words, 0);
  e.sent_mask.assign(e.sentences, 0);
  for (std::size_t m = 0; m < lengths.size() && m < e.sentences; ++m) {
    if (lengths[m] == 0) continue;
    e.sent_mask[m] = 1;
    for (std::size_t n = 0; n < lengths[m]; ++n) {
      e.ids[m * e.words + n] = static_cast<std::int32_t>(1 + rng.below(config.vocab_size - 1));
      e.word_mask[m * e.words + n] = 1;
    }
  }
  return e;
}

struct TensorGradCheck {
  std::string name;
  GradReport report;
};

// Checks every trainable tensor of the model against central differences of
// margin_loss(forward(input), label).
template <typename Input>
std::vector<TensorGradCheck> check_model_gradients(const ModelConfig& config,
                                                   const Parameters& params, const Input& input,
                                                   std::size_t label) {
  const ForwardTrace trace = forward(input, params, config);
  const Gradients grads = backward(trace, label, params, config);
  Parameters dense = Parameters::zeros_like(params);
  grads.accumulate_into(dense, 1.0);

  std::vector<TensorGradCheck> out;
  const auto analytic = dense.trainable();
  Parameters probe = params;
  auto targets = probe.trainable();
  for (std::size_t k = 0; k < targets.size(); ++k) {
    Tensor* slot = targets[k].tensor;
    const Tensor original = *slot;
    const auto f = [&](const Tensor& x) {
      *slot = x;
      const ForwardTrace t = forward(input, probe, config);
      return margin_loss(t.class_norms.data(), label);
    };
    out.push_back({targets[k].name, grad_check(targets[k].name, f, original, *analytic[k].tensor)});
    *slot = original;
  }
  return out;
}

}  // namespace icaps::testing

#endif  // ICAPS_TESTS_SUPPORT_FIXTURES_HPP_
