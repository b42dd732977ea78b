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

#ifndef ICAPS_INTERPRET_HPP_
#define ICAPS_INTERPRET_HPP_

#include <cstddef>
#include <cstdint>
#include <functional>
#include <map>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "json.hpp"

#include "icaps/model.hpp"
#include "icaps/parallel.hpp"
#include "icaps/text.hpp"

namespace icaps {

// Window slot that falls before the first or after the last position.
inline constexpr std::int32_t kBoundaryId = -1;
inline constexpr std::string_view kBoundaryToken = "<boundary>";

struct KGramPick {
  std::size_t sentence = 0;  // always 0 for Short
  std::size_t position = 0;  // window centre
  double alpha = 0.0;
  std::vector<std::int32_t> token_ids;  // K slots
};

struct Contributor {
  std::size_t capsule = 0;
  double beta = 0.0;
  double rho = 1.0;  // weight of the chosen sentence (Long)
  std::vector<KGramPick> picks;
};

struct LocalExplanation {
  Variant variant = Variant::Short;
  std::size_t predicted = 0;
  std::size_t kernel_size = 0;
  std::vector<Contributor> contributors;        // beta non-increasing
  std::map<std::int32_t, std::size_t> overlap;  // real token id -> occurrences
  std::vector<std::string> warnings;
};

// Top-k1 capsules by beta for the predicted class, then (Long: within the
// argmax-rho sentence) the top-k2 positions by alpha, each widened to its
// K-token receptive field. Out-of-range k values are clamped and reported.
LocalExplanation explain_local(const ForwardTrace& trace, std::size_t k1, std::size_t k2,
                               std::size_t kernel_size);

struct FrequencyMatrix {
  std::vector<std::vector<std::size_t>> counts;                           // J x I
  std::vector<std::vector<std::map<std::string, std::size_t>>> words;    // J x I
  std::size_t total = 0;
  std::size_t skipped = 0;

  std::size_t classes() const { return counts.size(); }
  std::size_t capsules() const { return counts.empty() ? 0 : counts.front().size(); }
  std::vector<std::size_t> row_sums() const;
};

// Called with the number of samples handled so far, every 1000 samples.
using ProgressFn = std::function<void(std::size_t)>;

// One k1 = k2 = 1 explanation per sample. Samples that fail to encode or run
// are skipped and tallied.
FrequencyMatrix build_global(std::span<const Sample> corpus, const Parameters& params,
                             const ModelConfig& config, const Vocab& vocab,
                             std::size_t threads = default_threads(),
                             const ProgressFn& progress = {});

// Most frequent words of cell (j, i); equal counts in lexicographic order.
std::vector<std::pair<std::string, std::size_t>> top_words(const FrequencyMatrix& freq,
                                                           std::size_t j, std::size_t i,
                                                           std::size_t t);

struct RowSparsity {
  double max_share = 0.0;  // largest cell / row sum, 0 for an empty row
  double gini = 0.0;
};

RowSparsity row_sparsity(std::span<const std::size_t> row);

// CSV with header `query_id,v1..v_dq`, one row per query, %.17g values.
std::string export_queries(const Parameters& params);

std::string token_text(std::int32_t id, const Vocab& vocab);

nlohmann::json explanation_to_json(const LocalExplanation& e, const Vocab& vocab,
                                   const std::vector<std::string>& class_names);
nlohmann::json global_to_json(const FrequencyMatrix& freq, std::size_t top_t);
// Bracketed K-grams; tokens picked more than once carry an "(xN)" suffix.
std::string render_explanation(const LocalExplanation& e, const Vocab& vocab,
                               const std::vector<std::string>& class_names);

}  // namespace icaps

#endif  // ICAPS_INTERPRET_HPP_
