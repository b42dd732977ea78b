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

#include <algorithm>
#include <stdexcept>

#include "icaps/model.hpp"

namespace icaps {

NLOHMANN_JSON_SERIALIZE_ENUM(Variant, {{Variant::Short, "short"}, {Variant::Long, "long"}})
NLOHMANN_JSON_SERIALIZE_ENUM(ConvActivation, {{ConvActivation::Relu, "relu"},
                                              {ConvActivation::Linear, "linear"}})
NLOHMANN_JSON_SERIALIZE_ENUM(RoutingGrad, {{RoutingGrad::Full, "full"}, {RoutingGrad::Stop, "stop"}})

namespace {

[[noreturn]] void bad_field(const std::string& field, const std::string& why) {
  throw std::invalid_argument("invalid config field '" + field + "': " + why);
}

void copy_into(const Tensor& src, std::span<double> dst) {
  std::copy(src.data().begin(), src.data().end(), dst.begin());
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

void ModelConfig::validate() const {
  if (vocab_size < 2) bad_field("vocab_size", "must be >= 2 (PAD and UNK are reserved)");
  if (embed_dim == 0) bad_field("embed_dim", "must be >= 1");
  if (fixed_dim > embed_dim) bad_field("fixed_dim", "exceeds embed_dim");
  if (kernel_size == 0 || kernel_size % 2 == 0) bad_field("kernel_size", "must be odd");
  if (region_dim == 0) bad_field("region_dim", "must be >= 1");
  if (primary_dim == 0) bad_field("primary_dim", "must be >= 1");
  if (region_dim % primary_dim != 0) bad_field("primary_dim", "must divide region_dim");
  if (num_primary != region_dim / primary_dim) {
    bad_field("num_primary", "must equal region_dim / primary_dim = " +
                                 std::to_string(region_dim / primary_dim));
  }
  if (query_dim != primary_dim) bad_field("query_dim", "must equal primary_dim");
  if (variant == Variant::Long && sentence_dim != primary_dim) {
    bad_field("sentence_dim", "must equal primary_dim");
  }
  if (class_dim == 0) bad_field("class_dim", "must be >= 1");
  if (num_classes == 0) bad_field("num_classes", "must be >= 1");
  if (words == 0) bad_field("words", "must be >= 1");
  if (variant == Variant::Long && sentences == 0) bad_field("sentences", "must be >= 1");
  if (routing_iters == 0) bad_field("routing_iters", "must be >= 1");
}

void to_json(nlohmann::json& j, const ModelConfig& c) {
  j = nlohmann::json{{"variant", c.variant},
                     {"vocab_size", c.vocab_size},
                     {"min_freq", c.min_freq},
                     {"embed_dim", c.embed_dim},
                     {"fixed_dim", c.fixed_dim},
                     {"kernel_size", c.kernel_size},
                     {"region_dim", c.region_dim},
                     {"query_dim", c.query_dim},
                     {"primary_dim", c.primary_dim},
                     {"sentence_dim", c.sentence_dim},
                     {"class_dim", c.class_dim},
                     {"num_primary", c.num_primary},
                     {"num_classes", c.num_classes},
                     {"words", c.words},
                     {"sentences", c.sentences},
                     {"routing_iters", c.routing_iters},
                     {"conv_activation", c.conv_activation},
                     {"routing_grad", c.routing_grad}};
}

void from_json(const nlohmann::json& j, ModelConfig& c) {
  if (j.contains("variant")) {
    const auto& v = j.at("variant");
    if (!v.is_string() || (v != "short" && v != "long")) bad_field("variant", "expected short|long");
    c.variant = v.get<Variant>();
  }
  read_field(j, "vocab_size", c.vocab_size);
  read_field(j, "min_freq", c.min_freq);
  read_field(j, "embed_dim", c.embed_dim);
  read_field(j, "fixed_dim", c.fixed_dim);
  read_field(j, "kernel_size", c.kernel_size);
  read_field(j, "region_dim", c.region_dim);
  read_field(j, "primary_dim", c.primary_dim);
  c.query_dim = c.primary_dim;
  c.sentence_dim = c.variant == Variant::Long ? c.primary_dim : 0;
  c.num_primary = c.primary_dim ? c.region_dim / c.primary_dim : 0;
  read_field(j, "query_dim", c.query_dim);
  read_field(j, "sentence_dim", c.sentence_dim);
  read_field(j, "num_primary", c.num_primary);
  read_field(j, "class_dim", c.class_dim);
  read_field(j, "num_classes", c.num_classes);
  read_field(j, "words", c.words);
  read_field(j, "sentences", c.sentences);
  read_field(j, "routing_iters", c.routing_iters);
  if (j.contains("conv_activation")) {
    const auto& v = j.at("conv_activation");
    if (!v.is_string() || (v != "relu" && v != "linear")) {
      bad_field("conv_activation", "expected relu|linear");
    }
    c.conv_activation = v.get<ConvActivation>();
  }
  if (j.contains("routing_grad")) {
    const auto& v = j.at("routing_grad");
    if (!v.is_string() || (v != "full" && v != "stop")) bad_field("routing_grad", "expected full|stop");
    c.routing_grad = v.get<RoutingGrad>();
  }
  if (c.variant == Variant::Short) c.sentences = 1;
}

Parameters Parameters::init(const ModelConfig& config, Tensor fixed_embeddings, Rng& rng) {
  config.validate();
  const std::size_t V = config.vocab_size;
  const std::size_t I = config.num_primary;
  const std::size_t J = config.num_classes;
  Parameters p;
  if (config.fixed_dim == 0) {
    p.embed_fixed = Tensor({V, 0});
  } else {
    if (fixed_embeddings.shape() != std::vector<std::size_t>{V, config.fixed_dim}) {
      throw std::invalid_argument("frozen embedding table has shape " +
                                  fixed_embeddings.shape_string() + ", expected [" +
                                  std::to_string(V) + "x" + std::to_string(config.fixed_dim) +
                                  "]");
    }
    p.embed_fixed = std::move(fixed_embeddings);
    auto pad = p.embed_fixed.slab(kPadId);
    std::fill(pad.begin(), pad.end(), 0.0);
  }

  p.embed_train = Tensor({V, config.trainable_dim()});
  for (std::size_t v = 1; v < V; ++v) {
    for (double& x : p.embed_train.slab(v)) x = rng.uniform(-0.25, 0.25);
  }

  const std::size_t window = config.kernel_size * config.embed_dim;
  p.conv_w = glorot_uniform(config.region_dim, window, rng);
  p.conv_b = Tensor({config.region_dim});
  p.queries = glorot_uniform(I, config.query_dim, rng);

  const std::size_t dv = config.value_dim();
  p.value_w = Tensor({I, dv, config.region_dim});
  p.key_w = Tensor({I, config.query_dim, config.region_dim});
  for (std::size_t i = 0; i < I; ++i) {
    copy_into(glorot_uniform(dv, config.region_dim, rng), p.value_w.slab(i));
    copy_into(glorot_uniform(config.query_dim, config.region_dim, rng), p.key_w.slab(i));
  }
  if (config.variant == Variant::Long) {
    p.sent_value_w = Tensor({I, config.primary_dim, config.sentence_dim});
    p.sent_key_w = Tensor({I, config.query_dim, config.sentence_dim});
    for (std::size_t i = 0; i < I; ++i) {
      copy_into(glorot_uniform(config.primary_dim, config.sentence_dim, rng),
                p.sent_value_w.slab(i));
      copy_into(glorot_uniform(config.query_dim, config.sentence_dim, rng), p.sent_key_w.slab(i));
    }
  } else {
    p.sent_value_w = Tensor({I, config.primary_dim, 0});
    p.sent_key_w = Tensor({I, config.query_dim, 0});
  }

  p.caps_w = Tensor({J, config.class_dim, config.primary_dim});
  for (std::size_t j = 0; j < J; ++j) {
    copy_into(glorot_uniform(config.class_dim, config.primary_dim, rng), p.caps_w.slab(j));
  }
  p.caps_b = Tensor({I, J, config.class_dim});
  return p;
}

Parameters Parameters::zeros_like(const Parameters& like) {
  Parameters p;
  auto dst = p.all();
  const auto src = like.all();
  for (std::size_t k = 0; k < dst.size(); ++k) *dst[k].tensor = Tensor(src[k].tensor->shape());
  return p;
}

std::vector<NamedTensor> Parameters::all() {
  return {{"embed_fixed", &embed_fixed}, {"embed_train", &embed_train},
          {"conv_w", &conv_w},           {"conv_b", &conv_b},
          {"queries", &queries},         {"value_w", &value_w},
          {"key_w", &key_w},             {"sent_value_w", &sent_value_w},
          {"sent_key_w", &sent_key_w},   {"caps_w", &caps_w},
          {"caps_b", &caps_b}};
}

std::vector<NamedConstTensor> Parameters::all() const {
  std::vector<NamedConstTensor> out;
  for (const auto& [name, t] : const_cast<Parameters*>(this)->all()) out.push_back({name, t});
  return out;
}

std::vector<NamedTensor> Parameters::trainable() {
  std::vector<NamedTensor> out;
  for (auto& entry : all()) {
    if (entry.name == "embed_fixed" || entry.tensor->empty()) continue;
    out.push_back(entry);
  }
  return out;
}

std::vector<NamedConstTensor> Parameters::trainable() const {
  std::vector<NamedConstTensor> out;
  for (const auto& [name, t] : const_cast<Parameters*>(this)->trainable()) out.push_back({name, t});
  return out;
}

void Parameters::check_shapes(const ModelConfig& c) const {
  using Shape = std::vector<std::size_t>;
  const std::size_t I = c.num_primary;
  const bool is_long = c.variant == Variant::Long;
  const std::vector<std::pair<const Tensor*, Shape>> expected = {
      {&embed_fixed, {c.vocab_size, c.fixed_dim}},
      {&embed_train, {c.vocab_size, c.trainable_dim()}},
      {&conv_w, {c.region_dim, c.kernel_size * c.embed_dim}},
      {&conv_b, {c.region_dim}},
      {&queries, {I, c.query_dim}},
      {&value_w, {I, c.value_dim(), c.region_dim}},
      {&key_w, {I, c.query_dim, c.region_dim}},
      {&sent_value_w, {I, c.primary_dim, is_long ? c.sentence_dim : 0}},
      {&sent_key_w, {I, c.query_dim, is_long ? c.sentence_dim : 0}},
      {&caps_w, {c.num_classes, c.class_dim, c.primary_dim}},
      {&caps_b, {I, c.num_classes, c.class_dim}},
  };
  const auto names = all();
  for (std::size_t k = 0; k < expected.size(); ++k) {
    if (expected[k].first->shape() != expected[k].second) {
      throw std::invalid_argument("parameter " + names[k].name + " has shape " +
                                  expected[k].first->shape_string() +
                                  " inconsistent with the model config");
    }
  }
}

Gradients Gradients::zeros_like(const Parameters& params) {
  Gradients g;
  g.conv_w = Tensor(params.conv_w.shape());
  g.conv_b = Tensor(params.conv_b.shape());
  g.queries = Tensor(params.queries.shape());
  g.value_w = Tensor(params.value_w.shape());
  g.key_w = Tensor(params.key_w.shape());
  g.sent_value_w = Tensor(params.sent_value_w.shape());
  g.sent_key_w = Tensor(params.sent_key_w.shape());
  g.caps_w = Tensor(params.caps_w.shape());
  g.caps_b = Tensor(params.caps_b.shape());
  return g;
}

void Gradients::reset() {
  for (Tensor* t : {&conv_w, &conv_b, &queries, &value_w, &key_w, &sent_value_w, &sent_key_w,
                    &caps_w, &caps_b}) {
    t->fill(0.0);
  }
  embed_rows.clear();
  embed_values.clear();
}

void Gradients::accumulate_into(Parameters& dense, double scale) const {
  const std::pair<const Tensor*, Tensor*> pairs[] = {
      {&conv_w, &dense.conv_w},         {&conv_b, &dense.conv_b},
      {&queries, &dense.queries},       {&value_w, &dense.value_w},
      {&key_w, &dense.key_w},           {&sent_value_w, &dense.sent_value_w},
      {&sent_key_w, &dense.sent_key_w}, {&caps_w, &dense.caps_w},
      {&caps_b, &dense.caps_b}};
  for (const auto& [src, dst] : pairs) {
    if (!src->same_shape(*dst)) throw std::invalid_argument("gradient shape mismatch");
    kernels::axpy(scale, src->data(), dst->data());
  }
  const std::size_t width = dense.embed_train.rank() == 2 ? dense.embed_train.dim(1) : 0;
  if (width == 0) return;
  for (std::size_t r = 0; r < embed_rows.size(); ++r) {
    kernels::axpy(scale, std::span<const double>(embed_values).subspan(r * width, width),
                  dense.embed_train.slab(static_cast<std::size_t>(embed_rows[r])));
  }
}

}  // namespace icaps
