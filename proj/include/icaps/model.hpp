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

#ifndef ICAPS_MODEL_HPP_
#define ICAPS_MODEL_HPP_

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"

#include "icaps/tensor.hpp"
#include "icaps/text.hpp"

namespace icaps {

enum class Variant { Short, Long };
enum class ConvActivation { Relu, Linear };
// Full: differentiate through every routing-logit update.
// Stop: treat the agreement updates of the routing logits as constants.
enum class RoutingGrad { Full, Stop };

struct ModelConfig {
  Variant variant = Variant::Short;
  std::size_t vocab_size = 0;    // V
  std::size_t min_freq = 0;      // F
  std::size_t embed_dim = 0;     // d_e, total embedding width
  std::size_t fixed_dim = 0;     // frozen (pretrained) part of d_e
  std::size_t kernel_size = 3;   // K, odd
  std::size_t region_dim = 0;    // d_w
  std::size_t query_dim = 0;     // d_q
  std::size_t primary_dim = 0;   // d_p
  std::size_t sentence_dim = 0;  // d_s, Long only
  std::size_t class_dim = 0;     // d_c
  std::size_t num_primary = 0;   // I
  std::size_t num_classes = 0;   // J
  std::size_t words = 0;         // N
  std::size_t sentences = 1;     // M, Long only
  std::size_t routing_iters = 3; // r
  ConvActivation conv_activation = ConvActivation::Relu;
  RoutingGrad routing_grad = RoutingGrad::Full;

  std::size_t trainable_dim() const { return embed_dim - fixed_dim; }
  // Width of the word-level attention values: d_p (Short) or d_s (Long).
  std::size_t value_dim() const { return variant == Variant::Short ? primary_dim : sentence_dim; }

  // Throws std::invalid_argument naming the offending field.
  void validate() const;
};

void to_json(nlohmann::json& j, const ModelConfig& c);
// Missing num_primary / query_dim / sentence_dim are derived from the
// I = d_w / d_p and d_q = d_s = d_p rules.
void from_json(const nlohmann::json& j, ModelConfig& c);

struct NamedTensor {
  std::string name;
  Tensor* tensor;
};

struct NamedConstTensor {
  std::string name;
  const Tensor* tensor;
};

// All weights of one model. The frozen embedding part is never trained and
// row 0 (PAD) of both embedding parts stays zero.
struct Parameters {
  Tensor embed_fixed;   // V x d_fixed
  Tensor embed_train;   // V x (d_e - d_fixed)
  Tensor conv_w;        // d_w x (K * d_e)
  Tensor conv_b;        // d_w
  Tensor queries;       // I x d_q, one primary-capsule query per head
  Tensor value_w;       // I x d_v x d_w
  Tensor key_w;         // I x d_q x d_w
  Tensor sent_value_w;  // I x d_p x d_s (Long)
  Tensor sent_key_w;    // I x d_q x d_s (Long)
  Tensor caps_w;        // J x d_c x d_p, shared over primary capsules
  Tensor caps_b;        // I x J x d_c

  // Glorot-uniform weights, zero biases, uniform(-0.25, 0.25) trainable
  // embeddings. `fixed_embeddings` must be V x d_fixed.
  static Parameters init(const ModelConfig& config, Tensor fixed_embeddings, Rng& rng);
  // Same shapes as `like`, all zeros.
  static Parameters zeros_like(const Parameters& like);

  std::vector<NamedTensor> trainable();
  std::vector<NamedConstTensor> trainable() const;
  // Every stored tensor, frozen embedding first.
  std::vector<NamedConstTensor> all() const;
  std::vector<NamedTensor> all();

  void check_shapes(const ModelConfig& config) const;
};

// Per-sample gradient. Dense blocks mirror the trainable tensors; the
// embedding gradient only holds the rows the sample touched.
struct Gradients {
  Tensor conv_w, conv_b, queries, value_w, key_w, sent_value_w, sent_key_w, caps_w, caps_b;
  std::vector<std::int32_t> embed_rows;  // ascending ids
  std::vector<double> embed_values;      // embed_rows.size() x trainable_dim

  static Gradients zeros_like(const Parameters& params);
  void reset();
  // dense += scale * this. `dense` has the shapes of a Parameters.
  void accumulate_into(Parameters& dense, double scale) const;
};

// Conv/attention state for one row (the short text, or one sentence).
struct RowTrace {
  std::size_t length = 0;       // real tokens in the row (prefix)
  std::vector<double> padded;   // (length + K - 1) x d_e, zero borders
  std::vector<double> pre_act;  // length x d_w
  std::vector<double> regions;  // length x d_w
};

struct RoutingTrace {
  std::vector<Tensor> logits;  // per iteration: b before the softmax, I x J
  std::vector<Tensor> beta;    // per iteration: I x J
  std::vector<Tensor> pre;     // per iteration: s_j, J x d_c
  std::vector<Tensor> caps;    // per iteration: squash(s_j), J x d_c
};

struct ForwardTrace {
  Variant variant = Variant::Short;
  std::size_t sentences = 1;
  std::size_t words = 0;
  std::vector<std::int32_t> ids;  // sentences x words
  Mask word_mask;                 // sentences x words
  Mask sent_mask;                 // sentences

  std::vector<RowTrace> rows;  // one per sentence (one for Short)

  Tensor key_dir;       // I x d_w: W^k_i^T h_i / sqrt(d_q)
  Tensor alpha;         // Short: I x N, Long: I x M x N
  Tensor pooled;        // Short: I x d_w, Long: I x M x d_w: sum_n alpha w_n
  Tensor sent_emb;      // Long: I x M x d_s
  Tensor sent_key_dir;  // Long: I x d_s
  Tensor rho;           // Long: I x M
  Tensor sent_pooled;   // Long: I x d_s: sum_m rho s_m
  Tensor primary;       // I x d_p
  Tensor predictions;   // I x J x d_c
  RoutingTrace routing;
  Tensor beta;          // I x J, final routing weights
  Tensor class_caps;    // J x d_c
  Tensor class_norms;   // J

  std::size_t row_length(std::size_t m) const { return rows[m].length; }
};

// ---- individual layers ---------------------------------------------------

// N x d_e lookup, row n = concat(E_fixed[id], E_train[id]).
Tensor embed(std::span<const std::int32_t> ids, const Parameters& params,
             const ModelConfig& config);

// N x d_w region embeddings with zero padding at both ends.
Tensor conv1d_regions(const Tensor& embeddings, const Parameters& params,
                      const ModelConfig& config);

struct FlatAttention {
  Tensor primary;  // I x d_p
  Tensor alpha;    // I x N
};
FlatAttention attention_flat(const Tensor& regions, std::span<const std::uint8_t> word_mask,
                             const Parameters& params, const ModelConfig& config);

struct HierAttention {
  Tensor primary;  // I x d_p
  Tensor alpha;    // I x M x N
  Tensor rho;      // I x M
};
// `regions` is M x N x d_w.
HierAttention attention_hier(const Tensor& regions, std::span<const std::uint8_t> word_mask,
                             std::span<const std::uint8_t> sent_mask, const Parameters& params,
                             const ModelConfig& config);

// p̂c_{j|i} = Ŵ_j pc_i + b̂_ij, I x J x d_c.
Tensor prediction_vectors(const Tensor& primary, const Parameters& params,
                          const ModelConfig& config);

struct RoutingResult {
  Tensor class_caps;  // J x d_c
  Tensor beta;        // I x J
  RoutingTrace trace;
};
RoutingResult dynamic_routing(const Tensor& predictions, std::size_t iterations);

// Gradient w.r.t. the prediction vectors given dL/d(class capsules).
Tensor routing_backward(const Tensor& predictions, const RoutingTrace& trace,
                        const Tensor& grad_caps, RoutingGrad mode);

inline constexpr double kMarginPos = 0.9;
inline constexpr double kMarginNeg = 0.1;
inline constexpr double kAbsentWeight = 0.5;

double margin_loss(std::span<const double> class_norms, std::size_t label);
std::vector<double> margin_loss_grad(std::span<const double> class_norms, std::size_t label);

// ---- whole model --------------------------------------------------------

ForwardTrace forward(const EncodedShort& input, const Parameters& params,
                     const ModelConfig& config);
ForwardTrace forward(const EncodedLong& input, const Parameters& params,
                     const ModelConfig& config);

// argmax of class norms, lowest index on ties.
std::size_t predict(const ForwardTrace& trace);
std::size_t predict(std::span<const double> class_norms);

// Exact gradient of margin_loss(forward(input), label) w.r.t. every trainable
// tensor. `out` is reset first.
void backward(const ForwardTrace& trace, std::size_t label, const Parameters& params,
              const ModelConfig& config, Gradients& out);
Gradients backward(const ForwardTrace& trace, std::size_t label, const Parameters& params,
                   const ModelConfig& config);

}  // namespace icaps

#endif  // ICAPS_MODEL_HPP_
