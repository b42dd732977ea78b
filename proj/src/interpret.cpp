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

#include "icaps/interpret.hpp"

#include <algorithm>
#include <cstdio>
#include <numeric>
#include <optional>
#include <stdexcept>

#include "icaps/training.hpp"

namespace icaps {
namespace {

// Indices of the k largest values, ties to the lower index.
std::vector<std::size_t> top_k(std::span<const double> values, std::span<const std::uint8_t> mask,
                               std::size_t k) {
  std::vector<std::size_t> idx;
  for (std::size_t n = 0; n < values.size(); ++n) {
    if (mask.empty() || mask[n]) idx.push_back(n);
  }
  std::stable_sort(idx.begin(), idx.end(),
                   [&](std::size_t a, std::size_t b) { return values[a] > values[b]; });
  idx.resize(std::min(k, idx.size()));
  return idx;
}

std::size_t clamp_k(std::size_t k, std::size_t limit, const char* name,
                    std::vector<std::string>& warnings) {
  const std::size_t clamped = std::clamp<std::size_t>(k, 1, std::max<std::size_t>(limit, 1));
  if (clamped != k) {
    warnings.push_back(std::string(name) + "=" + std::to_string(k) + " clamped to " +
                       std::to_string(clamped));
  }
  return clamped;
}

}  // namespace

LocalExplanation explain_local(const ForwardTrace& trace, std::size_t k1, std::size_t k2,
                               std::size_t kernel_size) {
  if (kernel_size == 0 || kernel_size % 2 == 0) {
    throw std::invalid_argument("kernel size must be odd");
  }
  LocalExplanation out;
  out.variant = trace.variant;
  out.kernel_size = kernel_size;
  out.predicted = predict(trace);

  const std::size_t I = trace.beta.dim(0);
  const std::size_t J = trace.beta.dim(1);
  const std::size_t N = trace.words;
  const auto half = static_cast<std::ptrdiff_t>(kernel_size / 2);

  std::vector<double> beta_col(I);
  for (std::size_t i = 0; i < I; ++i) beta_col[i] = trace.beta[i * J + out.predicted];
  k1 = clamp_k(k1, I, "k1", out.warnings);

  bool warned_k2 = false;
  for (std::size_t i : top_k(beta_col, {}, k1)) {
    Contributor c;
    c.capsule = i;
    c.beta = beta_col[i];
    std::size_t sentence = 0;
    if (trace.variant == Variant::Long) {
      const std::size_t M = trace.sentences;
      const std::span<const double> rho(trace.rho.data().data() + i * M, M);
      sentence = top_k(rho, trace.sent_mask, 1).front();
      c.rho = rho[sentence];
    }
    const std::size_t row = trace.variant == Variant::Long ? i * trace.sentences + sentence : i;
    const std::span<const double> alpha(trace.alpha.data().data() + row * N, N);
    const std::span<const std::uint8_t> mask(trace.word_mask.data() + sentence * N, N);
    const std::size_t length = trace.row_length(sentence);

    std::size_t k = k2;
    if (k < 1 || k > length) {
      std::vector<std::string> scratch;
      k = clamp_k(k2, length, "k2", warned_k2 ? scratch : out.warnings);
      warned_k2 = true;
    }
    for (std::size_t n : top_k(alpha, mask, k)) {
      KGramPick pick;
      pick.sentence = sentence;
      pick.position = n;
      pick.alpha = alpha[n];
      for (std::ptrdiff_t d = -half; d <= half; ++d) {
        const std::ptrdiff_t p = static_cast<std::ptrdiff_t>(n) + d;
        const bool inside = p >= 0 && p < static_cast<std::ptrdiff_t>(N);
        const std::int32_t id = inside ? trace.ids[sentence * N + static_cast<std::size_t>(p)]
                                       : kBoundaryId;
        pick.token_ids.push_back(id);
        if (id != kBoundaryId && id != kPadId) out.overlap[id] += 1;
      }
      c.picks.push_back(std::move(pick));
    }
    out.contributors.push_back(std::move(c));
  }
  return out;
}

std::vector<std::size_t> FrequencyMatrix::row_sums() const {
  std::vector<std::size_t> sums;
  for (const auto& row : counts) sums.push_back(std::accumulate(row.begin(), row.end(), std::size_t{0}));
  return sums;
}

FrequencyMatrix build_global(std::span<const Sample> corpus, const Parameters& params,
                             const ModelConfig& config, const Vocab& vocab, std::size_t threads,
                             const ProgressFn& progress) {
  if (corpus.empty()) throw std::invalid_argument("cannot interpret an empty corpus");
  const std::size_t J = config.num_classes;
  const std::size_t I = config.num_primary;
  FrequencyMatrix freq;
  freq.counts.assign(J, std::vector<std::size_t>(I, 0));
  freq.words.assign(J, std::vector<std::map<std::string, std::size_t>>(I));

  struct Hit {
    std::size_t j = 0, i = 0;
    std::vector<std::int32_t> tokens;
  };
  constexpr std::size_t kChunk = 1000;
  std::vector<std::optional<Hit>> hits;
  for (std::size_t start = 0; start < corpus.size(); start += kChunk) {
    const std::size_t count = std::min(kChunk, corpus.size() - start);
    hits.assign(count, std::nullopt);
    parallel_for(count, threads, [&](std::size_t k) {
      try {
        // Labels play no part here, so they are not validated.
        Sample unlabeled{0, corpus[start + k].text};
        const ForwardTrace trace = forward(encode_sample(unlabeled, vocab, config), params, config);
        const LocalExplanation e = explain_local(trace, 1, 1, config.kernel_size);
        const Contributor& top = e.contributors.front();
        hits[k] = Hit{e.predicted, top.capsule, top.picks.front().token_ids};
      } catch (const std::exception&) {
        hits[k].reset();
      }
    });
    for (const auto& hit : hits) {
      if (!hit) {
        ++freq.skipped;
        continue;
      }
      freq.counts[hit->j][hit->i] += 1;
      freq.total += 1;
      for (std::int32_t id : hit->tokens) {
        if (id == kBoundaryId || id == kPadId || id == kUnkId) continue;
        freq.words[hit->j][hit->i][vocab.token(id)] += 1;
      }
    }
    if (progress && (start + count) % kChunk == 0) progress(start + count);
  }
  return freq;
}

std::vector<std::pair<std::string, std::size_t>> top_words(const FrequencyMatrix& freq,
                                                           std::size_t j, std::size_t i,
                                                           std::size_t t) {
  const auto& cell = freq.words.at(j).at(i);
  // std::map iteration is already lexicographic, so a stable sort keeps ties ordered.
  std::vector<std::pair<std::string, std::size_t>> out(cell.begin(), cell.end());
  std::stable_sort(out.begin(), out.end(),
                   [](const auto& a, const auto& b) { return a.second > b.second; });
  out.resize(std::min(t, out.size()));
  return out;
}

RowSparsity row_sparsity(std::span<const std::size_t> row) {
  RowSparsity s;
  const double sum = static_cast<double>(std::accumulate(row.begin(), row.end(), std::size_t{0}));
  if (sum == 0.0 || row.empty()) return s;
  s.max_share = static_cast<double>(*std::max_element(row.begin(), row.end())) / sum;
  double diff = 0.0;
  for (std::size_t a : row) {
    for (std::size_t b : row) diff += a > b ? static_cast<double>(a - b) : static_cast<double>(b - a);
  }
  s.gini = diff / (2.0 * static_cast<double>(row.size()) * sum);
  return s;
}

std::string export_queries(const Parameters& params) {
  const std::size_t I = params.queries.dim(0);
  const std::size_t dq = params.queries.dim(1);
  std::string out = "query_id";
  for (std::size_t q = 1; q <= dq; ++q) out += ",v" + std::to_string(q);
  out += '\n';
  char buf[32];
  for (std::size_t i = 0; i < I; ++i) {
    out += std::to_string(i);
    for (std::size_t q = 0; q < dq; ++q) {
      std::snprintf(buf, sizeof buf, ",%.17g", params.queries.at(i, q));
      out += buf;
    }
    out += '\n';
  }
  return out;
}

std::string token_text(std::int32_t id, const Vocab& vocab) {
  if (id == kBoundaryId) return std::string(kBoundaryToken);
  return vocab.token(id);
}

nlohmann::json explanation_to_json(const LocalExplanation& e, const Vocab& vocab,
                                   const std::vector<std::string>& class_names) {
  nlohmann::json contributors = nlohmann::json::array();
  for (const Contributor& c : e.contributors) {
    nlohmann::json picks = nlohmann::json::array();
    for (const KGramPick& p : c.picks) {
      nlohmann::json tokens = nlohmann::json::array();
      for (std::int32_t id : p.token_ids) tokens.push_back(token_text(id, vocab));
      nlohmann::json pick{{"position", p.position}, {"alpha", p.alpha}, {"tokens", tokens}};
      if (e.variant == Variant::Long) pick["sentence"] = p.sentence;
      picks.push_back(std::move(pick));
    }
    nlohmann::json entry{{"capsule", c.capsule}, {"beta", c.beta}, {"picks", picks}};
    if (e.variant == Variant::Long) entry["rho"] = c.rho;
    contributors.push_back(std::move(entry));
  }
  nlohmann::json overlap = nlohmann::json::object();
  for (const auto& [id, count] : e.overlap) overlap[vocab.token(id)] = count;
  return nlohmann::json{
      {"schema_version", 1},
      {"prediction", e.predicted},
      {"class_name", e.predicted < class_names.size() ? class_names[e.predicted] : ""},
      {"kernel_size", e.kernel_size},
      {"contributors", contributors},
      {"word_overlap", overlap},
      {"warnings", e.warnings}};
}

nlohmann::json global_to_json(const FrequencyMatrix& freq, std::size_t top_t) {
  nlohmann::json top = nlohmann::json::object();
  nlohmann::json sparsity = nlohmann::json::array();
  for (std::size_t j = 0; j < freq.classes(); ++j) {
    for (std::size_t i = 0; i < freq.capsules(); ++i) {
      nlohmann::json cell = nlohmann::json::array();
      for (const auto& [token, count] : top_words(freq, j, i, top_t)) {
        cell.push_back(nlohmann::json::array({token, count}));
      }
      top[std::to_string(j) + "," + std::to_string(i)] = std::move(cell);
    }
    const RowSparsity s = row_sparsity(freq.counts[j]);
    sparsity.push_back({{"class", j}, {"max_share", s.max_share}, {"gini", s.gini}});
  }
  return nlohmann::json{{"schema_version", 1},
                        {"C", freq.counts},
                        {"totals", {{"processed", freq.total}, {"per_class", freq.row_sums()}}},
                        {"skipped", freq.skipped},
                        {"top_words", top},
                        {"row_sparsity", sparsity}};
}

std::string render_explanation(const LocalExplanation& e, const Vocab& vocab,
                               const std::vector<std::string>& class_names) {
  char buf[96];
  std::string out = "prediction: " + std::to_string(e.predicted);
  if (e.predicted < class_names.size()) out += " (" + class_names[e.predicted] + ")";
  out += '\n';
  for (const Contributor& c : e.contributors) {
    std::snprintf(buf, sizeof buf, "capsule %zu  beta %.4f", c.capsule, c.beta);
    out += buf;
    if (e.variant == Variant::Long && !c.picks.empty()) {
      std::snprintf(buf, sizeof buf, "  sentence %zu  rho %.4f", c.picks.front().sentence, c.rho);
      out += buf;
    }
    out += '\n';
    for (const KGramPick& p : c.picks) {
      std::snprintf(buf, sizeof buf, "  alpha %.4f  [", p.alpha);
      out += buf;
      for (std::size_t s = 0; s < p.token_ids.size(); ++s) {
        const std::int32_t id = p.token_ids[s];
        if (s) out += ' ';
        out += token_text(id, vocab);
        const auto it = e.overlap.find(id);
        if (it != e.overlap.end() && it->second > 1) out += "(x" + std::to_string(it->second) + ")";
      }
      out += "]\n";
    }
  }
  return out;
}

}  // namespace icaps
