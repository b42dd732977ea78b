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

#ifndef ICAPS_TEXT_HPP_
#define ICAPS_TEXT_HPP_

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "icaps/tensor.hpp"

namespace icaps {

inline constexpr std::int32_t kPadId = 0;
inline constexpr std::int32_t kUnkId = 1;
inline constexpr const char* kPadToken = "<pad>";
inline constexpr const char* kUnkToken = "<unk>";

struct Sample {
  std::size_t label = 0;  // 0-based class index
  std::string text;
};

using Corpus = std::vector<Sample>;

class Vocab {
 public:
  Vocab();
  // Rebuilds a vocabulary from its id-ordered listing (ids 0 and 1 must be
  // the reserved PAD and UNK tokens).
  static Vocab from_listing(std::vector<std::string> id_to_token, std::size_t min_freq);

  std::int32_t id(std::string_view token) const;  // UNK when absent
  bool contains(std::string_view token) const;
  const std::string& token(std::int32_t id) const { return id_to_token_.at(id); }
  std::size_t size() const { return id_to_token_.size(); }
  std::size_t min_freq() const { return min_freq_; }
  const std::vector<std::string>& listing() const { return id_to_token_; }

 private:
  friend Vocab build_vocab(std::span<const Sample>, std::size_t);
  void append(std::string token);

  std::unordered_map<std::string, std::int32_t> token_to_id_;
  std::vector<std::string> id_to_token_;
  std::size_t min_freq_ = 0;
};

struct EncodedShort {
  std::vector<std::int32_t> ids;
  Mask mask;
};

struct EncodedLong {
  std::size_t sentences = 0;
  std::size_t words = 0;
  std::vector<std::int32_t> ids;  // sentences x words
  Mask word_mask;                 // sentences x words
  Mask sent_mask;                 // sentences
};

class EmptySampleError : public std::runtime_error {
 public:
  EmptySampleError() : std::runtime_error("empty sample") {}
};

// Lowercased maximal runs of [A-Za-z0-9] and non-ASCII bytes.
std::vector<std::string> tokenize(std::string_view text);

// Keeps tokens seen strictly more than `min_freq` times. Ids from 2 upward,
// by descending count then lexicographically.
Vocab build_vocab(std::span<const Sample> corpus, std::size_t min_freq);

EncodedShort encode_short(std::string_view text, const Vocab& vocab, std::size_t words);
EncodedShort encode_tokens(std::span<const std::string> tokens, const Vocab& vocab,
                           std::size_t words);

std::vector<std::string> split_sentences(std::string_view text);

EncodedLong encode_long(std::string_view text, const Vocab& vocab, std::size_t sentences,
                        std::size_t words);

// RFC-4180 CSV: field 1 is the 1-based class index, the rest is text.
// `num_classes` bounds the class index.
Corpus load_csv(const std::filesystem::path& path, std::size_t num_classes);
Corpus parse_csv(std::string_view content, std::size_t num_classes);

// word2vec text format. Missing tokens get seeded uniform(-0.25, 0.25) rows;
// the PAD row is zero.
Tensor load_embeddings(const std::filesystem::path& path, const Vocab& vocab, std::size_t dim,
                       Rng& rng);
Tensor random_embeddings(std::size_t vocab_size, std::size_t dim, Rng& rng);

}  // namespace icaps

#endif  // ICAPS_TEXT_HPP_
