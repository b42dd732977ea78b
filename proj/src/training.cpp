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

#include "icaps/training.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

namespace icaps {
namespace {

[[noreturn]] void bad_field(const std::string& field, const std::string& why) {
  throw std::invalid_argument("invalid config field '" + field + "': " + why);
}

template <typename T>
void read_field(const nlohmann::json& j, const char* key, T& out) {
  if (!j.contains(key)) return;
  try {
    j.at(key).get_to(out);
  } catch (const nlohmann::json::exception& e) {
    bad_field(key, e.what());
  }
}

}  // namespace

void TrainConfig::validate() const {
  if (!(learning_rate >= 0.0) || !std::isfinite(learning_rate)) {
    bad_field("learning_rate", "must be a finite nonnegative number");
  }
  if (batch_size == 0) bad_field("batch_size", "must be >= 1");
  if (epochs == 0) bad_field("epochs", "must be >= 1");
  if (!(beta1 > 0.0 && beta1 < 1.0)) bad_field("beta1", "must lie in (0, 1)");
  if (!(beta2 > 0.0 && beta2 < 1.0)) bad_field("beta2", "must lie in (0, 1)");
  if (!(epsilon > 0.0)) bad_field("epsilon", "must be > 0");
}

void to_json(nlohmann::json& j, const TrainConfig& c) {
  j = nlohmann::json{{"learning_rate", c.learning_rate},
                     {"batch_size", c.batch_size},
                     {"epochs", c.epochs},
                     {"seed", c.seed},
                     {"beta1", c.beta1},
                     {"beta2", c.beta2},
                     {"epsilon", c.epsilon},
                     {"shuffle", c.shuffle}};
}

void from_json(const nlohmann::json& j, TrainConfig& c) {
  read_field(j, "learning_rate", c.learning_rate);
  read_field(j, "batch_size", c.batch_size);
  read_field(j, "epochs", c.epochs);
  read_field(j, "seed", c.seed);
  read_field(j, "beta1", c.beta1);
  read_field(j, "beta2", c.beta2);
  read_field(j, "epsilon", c.epsilon);
  read_field(j, "shuffle", c.shuffle);
}

AdamState AdamState::for_params(const Parameters& params) {
  AdamState state;
  for (const auto& [name, tensor] : params.trainable()) {
    state.names.push_back(name);
    state.first.emplace_back(tensor->shape());
    state.second.emplace_back(tensor->shape());
  }
  return state;
}

void adam_step(Parameters& params, const Parameters& grads, AdamState& state,
               const TrainConfig& config) {
  auto targets = params.trainable();
  const auto gradients = grads.trainable();
  if (targets.size() != state.names.size() || gradients.size() != targets.size()) {
    throw std::invalid_argument("adam_step: parameter, gradient and state lists differ in length");
  }
  for (std::size_t k = 0; k < targets.size(); ++k) {
    if (targets[k].name != state.names[k] || gradients[k].name != targets[k].name ||
        !targets[k].tensor->same_shape(*gradients[k].tensor) ||
        !targets[k].tensor->same_shape(state.first[k]) ||
        !targets[k].tensor->same_shape(state.second[k])) {
      throw std::invalid_argument("adam_step: shape mismatch for " + targets[k].name);
    }
  }
  state.step += 1;
  const double t = static_cast<double>(state.step);
  const double correct1 = 1.0 - std::pow(config.beta1, t);
  const double correct2 = 1.0 - std::pow(config.beta2, t);
  for (std::size_t k = 0; k < targets.size(); ++k) {
    auto p = targets[k].tensor->data();
    const auto g = gradients[k].tensor->data();
    auto m = state.first[k].data();
    auto v = state.second[k].data();
    // Row 0 of the trainable embedding is PAD and stays zero.
    const std::size_t begin = targets[k].tensor == &params.embed_train ? params.embed_train.dim(1) : 0;
    for (std::size_t n = begin; n < p.size(); ++n) {
      m[n] = config.beta1 * m[n] + (1.0 - config.beta1) * g[n];
      v[n] = config.beta2 * v[n] + (1.0 - config.beta2) * g[n] * g[n];
      const double m_hat = m[n] / correct1;
      const double v_hat = v[n] / correct2;
      p[n] -= config.learning_rate * m_hat / (std::sqrt(v_hat) + config.epsilon);
    }
  }
}

EncodedSample encode_sample(const Sample& sample, const Vocab& vocab, const ModelConfig& config) {
  if (sample.label >= config.num_classes) {
    throw std::out_of_range("class index out of range");
  }
  if (config.variant == Variant::Short) {
    return {sample.label, encode_short(sample.text, vocab, config.words)};
  }
  return {sample.label, encode_long(sample.text, vocab, config.sentences, config.words)};
}

std::vector<EncodedSample> encode_corpus(std::span<const Sample> corpus, const Vocab& vocab,
                                         const ModelConfig& config, std::size_t* skipped) {
  std::vector<EncodedSample> out;
  out.reserve(corpus.size());
  std::size_t dropped = 0;
  for (const Sample& sample : corpus) {
    try {
      out.push_back(encode_sample(sample, vocab, config));
    } catch (const EmptySampleError&) {
      ++dropped;
    }
  }
  if (skipped) *skipped = dropped;
  return out;
}

ForwardTrace forward(const EncodedSample& sample, const Parameters& params,
                     const ModelConfig& config) {
  return std::visit([&](const auto& input) { return forward(input, params, config); },
                    sample.input);
}

std::vector<std::size_t> epoch_order(std::size_t count, std::uint64_t seed, std::size_t epoch,
                                     bool shuffle) {
  std::vector<std::size_t> order(count);
  std::iota(order.begin(), order.end(), std::size_t{0});
  if (!shuffle || count < 2) return order;
  Rng rng(seed ^ (0x9e3779b97f4a7c15ULL * (static_cast<std::uint64_t>(epoch) + 1)));
  for (std::size_t k = count - 1; k > 0; --k) std::swap(order[k], order[rng.below(k + 1)]);
  return order;
}

EpochStats train_epoch(std::span<const EncodedSample> corpus, Parameters& params,
                       AdamState& state, const ModelConfig& model_config,
                       const TrainConfig& train_config, std::size_t epoch, std::size_t threads,
                       std::uint64_t step_limit) {
  if (corpus.empty()) throw std::invalid_argument("cannot train on an empty corpus");
  train_config.validate();
  const auto order = epoch_order(corpus.size(), train_config.seed, epoch, train_config.shuffle);
  const std::size_t batch = train_config.batch_size;

  std::vector<Gradients> grads(std::min(batch, corpus.size()), Gradients::zeros_like(params));
  std::vector<double> losses(grads.size());
  std::vector<std::uint8_t> hits(grads.size());
  Parameters dense = Parameters::zeros_like(params);

  EpochStats stats;
  double loss_total = 0.0;
  std::size_t correct = 0;
  for (std::size_t start = 0; start < corpus.size() && state.step < step_limit; start += batch) {
    const std::size_t count = std::min(batch, corpus.size() - start);
    parallel_for(count, threads, [&](std::size_t k) {
      const EncodedSample& sample = corpus[order[start + k]];
      const ForwardTrace trace = forward(sample, params, model_config);
      losses[k] = margin_loss(trace.class_norms.data(), sample.label);
      hits[k] = predict(trace) == sample.label;
      backward(trace, sample.label, params, model_config, grads[k]);
    });

    // Fixed sample order keeps the reduction bitwise reproducible.
    for (auto& slot : dense.trainable()) slot.tensor->fill(0.0);
    const double scale = 1.0 / static_cast<double>(count);
    double batch_loss = 0.0;
    for (std::size_t k = 0; k < count; ++k) {
      grads[k].accumulate_into(dense, scale);
      batch_loss += losses[k];
      correct += hits[k];
    }
    adam_step(params, dense, state, train_config);

    loss_total += batch_loss;
    stats.samples += count;
    stats.steps += 1;
    stats.batch_losses.push_back(batch_loss * scale);
  }
  stats.mean_loss = stats.samples ? loss_total / static_cast<double>(stats.samples) : 0.0;
  stats.train_accuracy =
      stats.samples ? static_cast<double>(correct) / static_cast<double>(stats.samples) : 0.0;
  return stats;
}

EvalResult evaluate(std::span<const EncodedSample> corpus, const Parameters& params,
                    const ModelConfig& config, std::size_t threads) {
  if (corpus.empty()) throw std::invalid_argument("cannot evaluate an empty corpus");
  EvalResult result;
  const std::size_t J = config.num_classes;
  result.confusion.assign(J, std::vector<std::size_t>(J, 0));
  result.predictions.assign(corpus.size(), 0);
  parallel_for(corpus.size(), threads, [&](std::size_t k) {
    result.predictions[k] = predict(forward(corpus[k], params, config));
  });
  for (std::size_t k = 0; k < corpus.size(); ++k) {
    const std::size_t truth = corpus[k].label;
    if (truth >= J) throw std::out_of_range("class index out of range");
    result.confusion[truth][result.predictions[k]] += 1;
    result.correct += truth == result.predictions[k];
  }
  result.total = corpus.size();
  result.accuracy = static_cast<double>(result.correct) / static_cast<double>(result.total);
  return result;
}

nlohmann::json to_json(const EvalResult& result, const std::vector<std::string>& class_names) {
  return nlohmann::json{{"schema_version", 1},
                        {"accuracy", result.accuracy},
                        {"total", result.total},
                        {"correct", result.correct},
                        {"class_names", class_names},
                        {"confusion", result.confusion}};
}

}  // namespace icaps
