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
#include <cmath>
#include <stdexcept>

#include "icaps/model.hpp"

namespace icaps {
namespace {

using kernels::axpy;
using kernels::dot;

// One encoded input seen as `sentences` rows of `words` slots.
struct InputView {
  Variant variant;
  std::size_t sentences;
  std::size_t words;
  std::span<const std::int32_t> ids;
  std::span<const std::uint8_t> word_mask;
  std::span<const std::uint8_t> sent_mask;
};

const std::uint8_t kOne = 1;

void check_id(std::int32_t id, std::size_t vocab_size) {
  if (id < 0 || static_cast<std::size_t>(id) >= vocab_size) {
    throw std::out_of_range("token id " + std::to_string(id) + " out of range for vocabulary of " +
                            std::to_string(vocab_size));
  }
}

// Number of real tokens in a row whose mask must be a prefix of ones.
std::size_t prefix_length(std::span<const std::uint8_t> mask) {
  std::size_t len = 0;
  while (len < mask.size() && mask[len]) ++len;
  for (std::size_t n = len; n < mask.size(); ++n) {
    if (mask[n]) throw std::invalid_argument("word mask must be a prefix of real tokens");
  }
  return len;
}

// Writes concat(E_fixed[id], E_train[id]) into `out` (width d_e).
void lookup(std::int32_t id, const Parameters& params, const ModelConfig& config,
            std::span<double> out) {
  if (id == kPadId) {
    std::fill(out.begin(), out.end(), 0.0);
    return;
  }
  const auto row = static_cast<std::size_t>(id);
  if (config.fixed_dim > 0) {
    const auto fixed = params.embed_fixed.slab(row);
    std::copy(fixed.begin(), fixed.end(), out.begin());
  }
  if (config.trainable_dim() > 0) {
    const auto train = params.embed_train.slab(row);
    std::copy(train.begin(), train.end(), out.begin() + config.fixed_dim);
  }
}

// pre_act[p] = W x_p + b, x_p = padded rows p .. p+K-1 flattened.
void conv_rows(std::span<const double> padded, std::size_t length, const Parameters& params,
               const ModelConfig& config, std::vector<double>& pre_act,
               std::vector<double>& regions) {
  const std::size_t dw = config.region_dim;
  const std::size_t de = config.embed_dim;
  const std::size_t window = config.kernel_size * de;
  const auto weights = params.conv_w.data();
  const auto bias = params.conv_b.data();
  pre_act.assign(length * dw, 0.0);
  regions.assign(length * dw, 0.0);
  for (std::size_t p = 0; p < length; ++p) {
    const auto x = padded.subspan(p * de, window);
    for (std::size_t o = 0; o < dw; ++o) {
      const double z = bias[o] + dot(weights.subspan(o * window, window), x);
      pre_act[p * dw + o] = z;
      regions[p * dw + o] =
          config.conv_activation == ConvActivation::Relu ? std::max(0.0, z) : z;
    }
  }
}

// scale * W^T h for W rows x cols.
void key_direction(std::span<const double> w, std::size_t rows, std::size_t cols,
                   std::span<const double> query, double scale, std::span<double> out) {
  std::fill(out.begin(), out.end(), 0.0);
  for (std::size_t q = 0; q < rows; ++q) axpy(scale * query[q], w.subspan(q * cols, cols), out);
}

// alpha = softmax(<key_dir, x_n>) over active n; pooled = sum alpha_n x_n.
void attend(std::span<const double> key_dir, std::span<const double> inputs, std::size_t count,
            std::size_t width, std::span<const std::uint8_t> mask, std::span<double> alpha,
            std::span<double> pooled) {
  std::vector<double> logits(count, 0.0);
  for (std::size_t n = 0; n < count; ++n) {
    if (mask.empty() || mask[n]) logits[n] = dot(key_dir, inputs.subspan(n * width, width));
  }
  stable_softmax(logits, mask, alpha.first(count));
  std::fill(pooled.begin(), pooled.end(), 0.0);
  for (std::size_t n = 0; n < count; ++n) {
    if (alpha[n] != 0.0) axpy(alpha[n], inputs.subspan(n * width, width), pooled);
  }
}

// Reverse of `attend`: given dL/dpooled, accumulates dL/dkey_dir and dL/dinputs.
void attend_backward(std::span<const double> key_dir, std::span<const double> inputs,
                     std::size_t count, std::size_t width, std::span<const double> alpha,
                     std::span<const double> grad_pooled, std::span<double> grad_key_dir,
                     std::span<double> grad_inputs) {
  std::vector<double> grad_alpha(count, 0.0);
  for (std::size_t n = 0; n < count; ++n) {
    if (alpha[n] != 0.0) grad_alpha[n] = dot(grad_pooled, inputs.subspan(n * width, width));
  }
  std::vector<double> grad_logits(count, 0.0);
  softmax_backward(alpha.first(count), grad_alpha, grad_logits);
  for (std::size_t n = 0; n < count; ++n) {
    if (alpha[n] == 0.0) continue;
    const auto x = inputs.subspan(n * width, width);
    axpy(grad_logits[n], x, grad_key_dir);
    auto gx = grad_inputs.subspan(n * width, width);
    axpy(alpha[n], grad_pooled, gx);
    axpy(grad_logits[n], key_dir, gx);
  }
}

// Sentence-level attention of head i over M sentence embeddings.
void attend_sentences(ForwardTrace& t, std::size_t i, const Parameters& params,
                      const ModelConfig& config) {
  const std::size_t M = t.sentences;
  const std::size_t ds = config.sentence_dim;
  const std::size_t dp = config.primary_dim;
  const double scale = 1.0 / std::sqrt(static_cast<double>(config.query_dim));
  key_direction(params.sent_key_w.slab(i), config.query_dim, ds, params.queries.slab(i), scale,
                t.sent_key_dir.slab(i));
  attend(t.sent_key_dir.slab(i), t.sent_emb.slab(i), M, ds, t.sent_mask, t.rho.slab(i),
         t.sent_pooled.slab(i));
  kernels::gemv(params.sent_value_w.slab(i), dp, ds, t.sent_pooled.slab(i), t.primary.slab(i));
}

void routing_forward(const Tensor& u, std::size_t iterations, RoutingTrace& trace) {
  const std::size_t I = u.dim(0);
  const std::size_t J = u.dim(1);
  const std::size_t dc = u.dim(2);
  Tensor b({I, J});
  trace = RoutingTrace{};
  for (std::size_t it = 0; it < iterations; ++it) {
    Tensor beta({I, J});
    for (std::size_t i = 0; i < I; ++i) stable_softmax(b.slab(i), {}, beta.slab(i));
    Tensor s({J, dc});
    for (std::size_t j = 0; j < J; ++j) {
      for (std::size_t i = 0; i < I; ++i) axpy(beta.at(i, j), u.slab(i, j), s.slab(j));
    }
    Tensor v({J, dc});
    for (std::size_t j = 0; j < J; ++j) squash(s.slab(j), v.slab(j));
    trace.logits.push_back(b);
    for (std::size_t i = 0; i < I; ++i) {
      for (std::size_t j = 0; j < J; ++j) b.at(i, j) += dot(u.slab(i, j), v.slab(j));
    }
    trace.beta.push_back(std::move(beta));
    trace.pre.push_back(std::move(s));
    trace.caps.push_back(std::move(v));
  }
}

ForwardTrace forward_impl(const InputView& in, const Parameters& params,
                          const ModelConfig& config) {
  const std::size_t I = config.num_primary;
  const std::size_t J = config.num_classes;
  const std::size_t dw = config.region_dim;
  const std::size_t de = config.embed_dim;
  const std::size_t dv = config.value_dim();
  const std::size_t dp = config.primary_dim;
  const std::size_t half = config.kernel_size / 2;
  const std::size_t M = in.sentences;
  const std::size_t N = in.words;
  const bool is_long = in.variant == Variant::Long;

  if (in.variant != config.variant) {
    throw std::invalid_argument("encoded input variant does not match the model variant");
  }
  if (N != config.words || (is_long && M != config.sentences)) {
    throw std::invalid_argument("encoded input shape does not match the model config");
  }

  ForwardTrace t;
  t.variant = in.variant;
  t.sentences = M;
  t.words = N;
  t.ids.assign(in.ids.begin(), in.ids.end());
  t.word_mask.assign(in.word_mask.begin(), in.word_mask.end());
  t.sent_mask.assign(in.sent_mask.begin(), in.sent_mask.end());
  t.rows.resize(M);

  bool any_sentence = false;
  for (std::size_t m = 0; m < M; ++m) {
    if (!t.sent_mask[m]) continue;
    RowTrace& row = t.rows[m];
    const auto ids = in.ids.subspan(m * N, N);
    row.length = prefix_length(in.word_mask.subspan(m * N, N));
    if (row.length == 0) throw std::invalid_argument("no active positions");
    any_sentence = true;
    row.padded.assign((row.length + config.kernel_size - 1) * de, 0.0);
    for (std::size_t p = 0; p < row.length; ++p) {
      check_id(ids[p], config.vocab_size);
      lookup(ids[p], params, config, std::span<double>(row.padded).subspan((p + half) * de, de));
    }
    conv_rows(row.padded, row.length, params, config, row.pre_act, row.regions);
  }
  if (!any_sentence) throw std::invalid_argument("no active positions");

  const double scale = 1.0 / std::sqrt(static_cast<double>(config.query_dim));
  t.key_dir = Tensor({I, dw});
  t.primary = Tensor({I, dp});
  if (!is_long) {
    t.alpha = Tensor({I, N});
    t.pooled = Tensor({I, dw});
  } else {
    t.alpha = Tensor({I, M, N});
    t.pooled = Tensor({I, M, dw});
    t.sent_emb = Tensor({I, M, config.sentence_dim});
    t.sent_key_dir = Tensor({I, config.sentence_dim});
    t.rho = Tensor({I, M});
    t.sent_pooled = Tensor({I, config.sentence_dim});
  }

  for (std::size_t i = 0; i < I; ++i) {
    key_direction(params.key_w.slab(i), config.query_dim, dw, params.queries.slab(i), scale,
                  t.key_dir.slab(i));
    if (!is_long) {
      const RowTrace& row = t.rows[0];
      attend(t.key_dir.slab(i), row.regions, row.length, dw, {}, t.alpha.slab(i),
             t.pooled.slab(i));
      kernels::gemv(params.value_w.slab(i), dv, dw, t.pooled.slab(i), t.primary.slab(i));
      continue;
    }
    for (std::size_t m = 0; m < M; ++m) {
      const RowTrace& row = t.rows[m];
      if (!t.sent_mask[m]) continue;
      attend(t.key_dir.slab(i), row.regions, row.length, dw, {}, t.alpha.slab(i, m),
             t.pooled.slab(i, m));
      kernels::gemv(params.value_w.slab(i), dv, dw, t.pooled.slab(i, m), t.sent_emb.slab(i, m));
    }
    attend_sentences(t, i, params, config);
  }

  t.predictions = prediction_vectors(t.primary, params, config);
  routing_forward(t.predictions, config.routing_iters, t.routing);
  t.beta = t.routing.beta.back();
  t.class_caps = t.routing.caps.back();
  t.class_norms = Tensor({J});
  for (std::size_t j = 0; j < J; ++j) t.class_norms[j] = kernels::norm(t.class_caps.slab(j));
  return t;
}

}  // namespace

// ---- layers ---------------------------------------------------------------

Tensor embed(std::span<const std::int32_t> ids, const Parameters& params,
             const ModelConfig& config) {
  Tensor out({ids.size(), config.embed_dim});
  for (std::size_t n = 0; n < ids.size(); ++n) {
    check_id(ids[n], config.vocab_size);
    lookup(ids[n], params, config, out.slab(n));
  }
  return out;
}

Tensor conv1d_regions(const Tensor& embeddings, const Parameters& params,
                      const ModelConfig& config) {
  const std::size_t N = embeddings.dim(0);
  const std::size_t de = config.embed_dim;
  if (embeddings.dim(1) != de) throw std::invalid_argument("embedding width does not match d_e");
  const std::size_t half = config.kernel_size / 2;
  std::vector<double> padded((N + config.kernel_size - 1) * de, 0.0);
  std::copy(embeddings.data().begin(), embeddings.data().end(), padded.begin() + half * de);
  std::vector<double> pre_act, regions;
  conv_rows(padded, N, params, config, pre_act, regions);
  return Tensor({N, config.region_dim}, std::move(regions));
}

FlatAttention attention_flat(const Tensor& regions, std::span<const std::uint8_t> word_mask,
                             const Parameters& params, const ModelConfig& config) {
  const std::size_t N = regions.dim(0);
  const std::size_t dw = config.region_dim;
  const std::size_t I = config.num_primary;
  const double scale = 1.0 / std::sqrt(static_cast<double>(config.query_dim));
  FlatAttention out{Tensor({I, config.primary_dim}), Tensor({I, N})};
  std::vector<double> key_dir(dw), pooled(dw);
  for (std::size_t i = 0; i < I; ++i) {
    key_direction(params.key_w.slab(i), config.query_dim, dw, params.queries.slab(i), scale,
                  key_dir);
    attend(key_dir, regions.data(), N, dw, word_mask, out.alpha.slab(i), pooled);
    kernels::gemv(params.value_w.slab(i), config.value_dim(), dw, pooled, out.primary.slab(i));
  }
  return out;
}

HierAttention attention_hier(const Tensor& regions, std::span<const std::uint8_t> word_mask,
                             std::span<const std::uint8_t> sent_mask, const Parameters& params,
                             const ModelConfig& config) {
  const std::size_t M = regions.dim(0);
  const std::size_t N = regions.dim(1);
  const std::size_t dw = config.region_dim;
  const std::size_t ds = config.sentence_dim;
  const std::size_t I = config.num_primary;
  const double scale = 1.0 / std::sqrt(static_cast<double>(config.query_dim));
  HierAttention out{Tensor({I, config.primary_dim}), Tensor({I, M, N}), Tensor({I, M})};
  std::vector<double> key_dir(dw), pooled(dw), sent_key_dir(ds), sent_pooled(ds);
  Tensor sent_emb({M, ds});
  for (std::size_t i = 0; i < I; ++i) {
    key_direction(params.key_w.slab(i), config.query_dim, dw, params.queries.slab(i), scale,
                  key_dir);
    sent_emb.fill(0.0);
    for (std::size_t m = 0; m < M; ++m) {
      if (!sent_mask[m]) continue;
      attend(key_dir, regions.slab(m), N, dw, word_mask.subspan(m * N, N), out.alpha.slab(i, m),
             pooled);
      kernels::gemv(params.value_w.slab(i), ds, dw, pooled, sent_emb.slab(m));
    }
    key_direction(params.sent_key_w.slab(i), config.query_dim, ds, params.queries.slab(i), scale,
                  sent_key_dir);
    attend(sent_key_dir, sent_emb.data(), M, ds, sent_mask, out.rho.slab(i), sent_pooled);
    kernels::gemv(params.sent_value_w.slab(i), config.primary_dim, ds, sent_pooled,
                  out.primary.slab(i));
  }
  return out;
}

Tensor prediction_vectors(const Tensor& primary, const Parameters& params,
                          const ModelConfig& config) {
  const std::size_t I = primary.dim(0);
  const std::size_t J = config.num_classes;
  const std::size_t dc = config.class_dim;
  const std::size_t dp = config.primary_dim;
  Tensor u({I, J, dc});
  for (std::size_t i = 0; i < I; ++i) {
    for (std::size_t j = 0; j < J; ++j) {
      auto out = u.slab(i, j);
      kernels::gemv(params.caps_w.slab(j), dc, dp, primary.slab(i), out);
      axpy(1.0, params.caps_b.slab(i, j), out);
    }
  }
  return u;
}

RoutingResult dynamic_routing(const Tensor& predictions, std::size_t iterations) {
  if (iterations == 0) throw std::invalid_argument("routing needs at least one iteration");
  if (predictions.rank() != 3) throw std::invalid_argument("prediction vectors must be I x J x d_c");
  RoutingResult out;
  routing_forward(predictions, iterations, out.trace);
  out.class_caps = out.trace.caps.back();
  out.beta = out.trace.beta.back();
  return out;
}

// Iteration t reads b_t, produces beta_t, s_t, v_t and b_{t+1} = b_t + <u, v_t>.
// `grad_next_logits` carries dL/db_{t+1} while walking backwards.
Tensor routing_backward(const Tensor& u, const RoutingTrace& trace, const Tensor& grad_caps,
                        RoutingGrad mode) {
  const std::size_t I = u.dim(0);
  const std::size_t J = u.dim(1);
  const std::size_t dc = u.dim(2);
  const std::size_t iterations = trace.beta.size();
  Tensor grad_u(u.shape());
  Tensor grad_next_logits({I, J});
  std::vector<double> grad_v(dc), grad_s(dc), grad_beta(J), grad_logits(J);
  for (std::size_t step = iterations; step-- > 0;) {
    const bool last = step + 1 == iterations;
    const Tensor& beta = trace.beta[step];
    const Tensor& s = trace.pre[step];
    const Tensor& v = trace.caps[step];
    Tensor grad_s_all({J, dc});
    for (std::size_t j = 0; j < J; ++j) {
      if (last) {
        std::copy(grad_caps.slab(j).begin(), grad_caps.slab(j).end(), grad_v.begin());
      } else {
        std::fill(grad_v.begin(), grad_v.end(), 0.0);
      }
      if (!last) {
        for (std::size_t i = 0; i < I; ++i) {
          const double g = grad_next_logits.at(i, j);
          if (g == 0.0) continue;
          axpy(g, u.slab(i, j), grad_v);
          axpy(g, v.slab(j), grad_u.slab(i, j));
        }
      }
      squash_backward(s.slab(j), grad_v, grad_s_all.slab(j));
      for (std::size_t i = 0; i < I; ++i) axpy(beta.at(i, j), grad_s_all.slab(j), grad_u.slab(i, j));
    }
    if (mode == RoutingGrad::Stop) break;
    for (std::size_t i = 0; i < I; ++i) {
      for (std::size_t j = 0; j < J; ++j) grad_beta[j] = dot(u.slab(i, j), grad_s_all.slab(j));
      softmax_backward(beta.slab(i), grad_beta, grad_logits);
      // b_{t+1} = b_t + ..., so dL/db_t = dL/db_{t+1} + (via beta_t).
      for (std::size_t j = 0; j < J; ++j) grad_next_logits.at(i, j) += grad_logits[j];
    }
  }
  return grad_u;
}

double margin_loss(std::span<const double> class_norms, std::size_t label) {
  double loss = 0.0;
  for (std::size_t j = 0; j < class_norms.size(); ++j) {
    if (j == label) {
      const double gap = std::max(0.0, kMarginPos - class_norms[j]);
      loss += gap * gap;
    } else {
      const double gap = std::max(0.0, class_norms[j] - kMarginNeg);
      loss += kAbsentWeight * gap * gap;
    }
  }
  return loss;
}

std::vector<double> margin_loss_grad(std::span<const double> class_norms, std::size_t label) {
  std::vector<double> grad(class_norms.size(), 0.0);
  for (std::size_t j = 0; j < class_norms.size(); ++j) {
    if (j == label) {
      grad[j] = -2.0 * std::max(0.0, kMarginPos - class_norms[j]);
    } else {
      grad[j] = 2.0 * kAbsentWeight * std::max(0.0, class_norms[j] - kMarginNeg);
    }
  }
  return grad;
}

// ---- whole model ----------------------------------------------------------

ForwardTrace forward(const EncodedShort& input, const Parameters& params,
                     const ModelConfig& config) {
  if (input.ids.size() != input.mask.size()) throw std::invalid_argument("ids/mask length mismatch");
  const InputView view{Variant::Short, 1, input.ids.size(), input.ids, input.mask,
                       std::span<const std::uint8_t>(&kOne, 1)};
  return forward_impl(view, params, config);
}

ForwardTrace forward(const EncodedLong& input, const Parameters& params,
                     const ModelConfig& config) {
  const std::size_t cells = input.sentences * input.words;
  if (input.ids.size() != cells || input.word_mask.size() != cells ||
      input.sent_mask.size() != input.sentences) {
    throw std::invalid_argument("encoded document arrays do not match its M x N shape");
  }
  const InputView view{Variant::Long, input.sentences, input.words, input.ids, input.word_mask,
                       input.sent_mask};
  return forward_impl(view, params, config);
}

std::size_t predict(std::span<const double> class_norms) {
  std::size_t best = 0;
  for (std::size_t j = 1; j < class_norms.size(); ++j) {
    if (class_norms[j] > class_norms[best]) best = j;
  }
  return best;
}

std::size_t predict(const ForwardTrace& trace) { return predict(trace.class_norms.data()); }

void backward(const ForwardTrace& t, std::size_t label, const Parameters& params,
              const ModelConfig& config, Gradients& g) {
  const std::size_t I = config.num_primary;
  const std::size_t J = config.num_classes;
  const std::size_t dw = config.region_dim;
  const std::size_t de = config.embed_dim;
  const std::size_t dv = config.value_dim();
  const std::size_t dp = config.primary_dim;
  const std::size_t dc = config.class_dim;
  const std::size_t dq = config.query_dim;
  const std::size_t M = t.sentences;
  const std::size_t N = t.words;
  const bool is_long = t.variant == Variant::Long;
  const double scale = 1.0 / std::sqrt(static_cast<double>(dq));

  if (g.conv_w.shape() != params.conv_w.shape()) g = Gradients::zeros_like(params);
  g.reset();

  const auto grad_norms = margin_loss_grad(t.class_norms.data(), label);
  if (std::all_of(grad_norms.begin(), grad_norms.end(), [](double x) { return x == 0.0; })) {
    return;
  }

  // class capsules -> prediction vectors
  Tensor grad_caps({J, dc});
  for (std::size_t j = 0; j < J; ++j) {
    const double n = t.class_norms[j];
    if (n > 0.0) axpy(grad_norms[j] / n, t.class_caps.slab(j), grad_caps.slab(j));
  }
  const Tensor grad_u = routing_backward(t.predictions, t.routing, grad_caps, config.routing_grad);

  // prediction vectors -> primary capsules, capsule transforms
  Tensor grad_primary({I, dp});
  std::copy(grad_u.data().begin(), grad_u.data().end(), g.caps_b.data().begin());
  for (std::size_t i = 0; i < I; ++i) {
    for (std::size_t j = 0; j < J; ++j) {
      kernels::outer_acc(grad_u.slab(i, j), t.primary.slab(i), g.caps_w.slab(j));
      kernels::gemv_t_acc(params.caps_w.slab(j), dc, dp, grad_u.slab(i, j), grad_primary.slab(i));
    }
  }

  // attention -> region embeddings
  std::vector<std::vector<double>> grad_regions(M);
  for (std::size_t m = 0; m < M; ++m) grad_regions[m].assign(t.rows[m].length * dw, 0.0);
  std::vector<double> grad_key_dir(dw), grad_pooled(dw);
  const std::size_t ds = config.sentence_dim;
  std::vector<double> grad_sent_pooled(ds), grad_sent_key_dir(ds);
  Tensor grad_sent_emb(is_long ? std::vector<std::size_t>{M, ds} : std::vector<std::size_t>{0});

  for (std::size_t i = 0; i < I; ++i) {
    const auto query = params.queries.slab(i);
    std::fill(grad_key_dir.begin(), grad_key_dir.end(), 0.0);
    if (!is_long) {
      const RowTrace& row = t.rows[0];
      std::fill(grad_pooled.begin(), grad_pooled.end(), 0.0);
      kernels::gemv_t_acc(params.value_w.slab(i), dv, dw, grad_primary.slab(i), grad_pooled);
      kernels::outer_acc(grad_primary.slab(i), t.pooled.slab(i), g.value_w.slab(i));
      attend_backward(t.key_dir.slab(i), row.regions, row.length, dw, t.alpha.slab(i), grad_pooled,
                      grad_key_dir, grad_regions[0]);
    } else {
      // sentence level
      std::fill(grad_sent_pooled.begin(), grad_sent_pooled.end(), 0.0);
      std::fill(grad_sent_key_dir.begin(), grad_sent_key_dir.end(), 0.0);
      grad_sent_emb.fill(0.0);
      kernels::gemv_t_acc(params.sent_value_w.slab(i), dp, ds, grad_primary.slab(i),
                          grad_sent_pooled);
      kernels::outer_acc(grad_primary.slab(i), t.sent_pooled.slab(i), g.sent_value_w.slab(i));
      attend_backward(t.sent_key_dir.slab(i), t.sent_emb.slab(i), M, ds, t.rho.slab(i),
                      grad_sent_pooled, grad_sent_key_dir, grad_sent_emb.data());
      // sent_key_dir = scale * W̃^k_i^T h_i
      for (std::size_t q = 0; q < dq; ++q) {
        g.queries.at(i, q) +=
            scale * dot(params.sent_key_w.slab(i).subspan(q * ds, ds), grad_sent_key_dir);
        axpy(scale * query[q], grad_sent_key_dir, g.sent_key_w.slab(i).subspan(q * ds, ds));
      }
      // word level, per sentence
      for (std::size_t m = 0; m < M; ++m) {
        if (!t.sent_mask[m]) continue;
        const RowTrace& row = t.rows[m];
        std::fill(grad_pooled.begin(), grad_pooled.end(), 0.0);
        kernels::gemv_t_acc(params.value_w.slab(i), dv, dw, grad_sent_emb.slab(m), grad_pooled);
        kernels::outer_acc(grad_sent_emb.slab(m), t.pooled.slab(i, m), g.value_w.slab(i));
        attend_backward(t.key_dir.slab(i), row.regions, row.length, dw, t.alpha.slab(i, m),
                        grad_pooled, grad_key_dir, grad_regions[m]);
      }
    }
    // key_dir = scale * W^k_i^T h_i
    for (std::size_t q = 0; q < dq; ++q) {
      g.queries.at(i, q) += scale * dot(params.key_w.slab(i).subspan(q * dw, dw), grad_key_dir);
      axpy(scale * query[q], grad_key_dir, g.key_w.slab(i).subspan(q * dw, dw));
    }
  }

  // regions -> conv weights, embeddings
  const std::size_t window = config.kernel_size * de;
  const std::size_t half = config.kernel_size / 2;
  const std::size_t dt = config.trainable_dim();
  const auto weights = params.conv_w.data();
  auto grad_w = g.conv_w.data();
  auto grad_b = g.conv_b.data();

  if (dt > 0) {
    for (std::size_t m = 0; m < M; ++m) {
      for (std::size_t p = 0; p < t.rows[m].length; ++p) {
        const auto id = t.ids[m * N + p];
        if (id != kPadId) g.embed_rows.push_back(id);
      }
    }
    std::sort(g.embed_rows.begin(), g.embed_rows.end());
    g.embed_rows.erase(std::unique(g.embed_rows.begin(), g.embed_rows.end()), g.embed_rows.end());
    g.embed_values.assign(g.embed_rows.size() * dt, 0.0);
  }

  std::vector<double> grad_padded;
  for (std::size_t m = 0; m < M; ++m) {
    const RowTrace& row = t.rows[m];
    if (row.length == 0) continue;
    grad_padded.assign(row.padded.size(), 0.0);
    for (std::size_t p = 0; p < row.length; ++p) {
      const auto x = std::span<const double>(row.padded).subspan(p * de, window);
      auto gx = std::span<double>(grad_padded).subspan(p * de, window);
      for (std::size_t o = 0; o < dw; ++o) {
        double gz = grad_regions[m][p * dw + o];
        if (config.conv_activation == ConvActivation::Relu && row.pre_act[p * dw + o] <= 0.0) {
          gz = 0.0;
        }
        if (gz == 0.0) continue;
        grad_b[o] += gz;
        axpy(gz, x, grad_w.subspan(o * window, window));
        axpy(gz, weights.subspan(o * window, window), gx);
      }
    }
    if (dt == 0) continue;
    for (std::size_t p = 0; p < row.length; ++p) {
      const auto id = t.ids[m * N + p];
      if (id == kPadId) continue;
      const auto slot = static_cast<std::size_t>(
          std::lower_bound(g.embed_rows.begin(), g.embed_rows.end(), id) - g.embed_rows.begin());
      axpy(1.0, std::span<const double>(grad_padded).subspan((p + half) * de + config.fixed_dim, dt),
           std::span<double>(g.embed_values).subspan(slot * dt, dt));
    }
  }
}

Gradients backward(const ForwardTrace& trace, std::size_t label, const Parameters& params,
                   const ModelConfig& config) {
  Gradients g = Gradients::zeros_like(params);
  backward(trace, label, params, config, g);
  return g;
}

}  // namespace icaps
