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

#ifndef ICAPS_TRAINING_HPP_
#define ICAPS_TRAINING_HPP_

#include <cstddef>
#include <cstdint>
#include <limits>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include "json.hpp"

#include "icaps/model.hpp"
#include "icaps/parallel.hpp"
#include "icaps/text.hpp"

namespace icaps {

struct TrainConfig {
  double learning_rate = 1e-4;
  std::size_t batch_size = 32;
  std::size_t epochs = 1;
  std::uint64_t seed = 0;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  bool shuffle = true;

  void validate() const;
};

void to_json(nlohmann::json& j, const TrainConfig& c);
void from_json(const nlohmann::json& j, TrainConfig& c);

// First/second moment buffers aligned with Parameters::trainable().
struct AdamState {
  std::uint64_t step = 0;
  std::vector<std::string> names;
  std::vector<Tensor> first;
  std::vector<Tensor> second;

  static AdamState for_params(const Parameters& params);
};

// One bias-corrected Adam update of every trainable tensor except the PAD
// row of the embedding. `grads` has the shapes of `params`.
void adam_step(Parameters& params, const Parameters& grads, AdamState& state,
               const TrainConfig& config);

struct EncodedSample {
  std::size_t label = 0;
  std::variant<EncodedShort, EncodedLong> input;
};

// Throws EmptySampleError when the text has no tokens.
EncodedSample encode_sample(const Sample& sample, const Vocab& vocab, const ModelConfig& config);
// Samples without tokens are dropped and counted in `skipped`.
std::vector<EncodedSample> encode_corpus(std::span<const Sample> corpus, const Vocab& vocab,
                                         const ModelConfig& config, std::size_t* skipped = nullptr);

ForwardTrace forward(const EncodedSample& sample, const Parameters& params,
                     const ModelConfig& config);

struct EpochStats {
  double mean_loss = 0.0;
  double train_accuracy = 0.0;
  std::size_t samples = 0;
  std::size_t steps = 0;
  std::vector<double> batch_losses;
};

// One pass over `corpus` in a (seed, epoch)-determined order. Each batch
// loss is the mean over its samples of the summed margin loss; one Adam
// step per batch. Stops early once `state.step` reaches `step_limit`.
EpochStats train_epoch(std::span<const EncodedSample> corpus, Parameters& params,
                       AdamState& state, const ModelConfig& model_config,
                       const TrainConfig& train_config, std::size_t epoch,
                       std::size_t threads = default_threads(),
                       std::uint64_t step_limit = std::numeric_limits<std::uint64_t>::max());

std::vector<std::size_t> epoch_order(std::size_t count, std::uint64_t seed, std::size_t epoch,
                                     bool shuffle);

struct EvalResult {
  double accuracy = 0.0;
  std::size_t total = 0;
  std::size_t correct = 0;
  std::vector<std::vector<std::size_t>> confusion;  // [true][predicted]
  std::vector<std::size_t> predictions;
};

EvalResult evaluate(std::span<const EncodedSample> corpus, const Parameters& params,
                    const ModelConfig& config, std::size_t threads = default_threads());

nlohmann::json to_json(const EvalResult& result, const std::vector<std::string>& class_names);

}  // namespace icaps

#endif  // ICAPS_TRAINING_HPP_
