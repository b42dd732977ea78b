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

#include "icaps/text.hpp"

#include <algorithm>
#include <charconv>
#include <fstream>
#include <map>
#include <sstream>

namespace icaps {
namespace {

bool is_word_byte(unsigned char c) {
  return (c >= '0' && c <= '9') || (c >= 'a' && c <= 'z') || (c >= 'A' && c <= 'Z') || c >= 0x80;
}

unsigned char to_lower(unsigned char c) {
  return (c >= 'A' && c <= 'Z') ? static_cast<unsigned char>(c - 'A' + 'a') : c;
}

bool is_sentence_delim(char c) { return c == '.' || c == '!' || c == '?' || c == ';'; }

bool is_space(char c) {
  return c == ' ' || c == '\t' || c == '\n' || c == '\r' || c == '\f' || c == '\v';
}

std::string_view trim(std::string_view s) {
  while (!s.empty() && is_space(s.front())) s.remove_prefix(1);
  while (!s.empty() && is_space(s.back())) s.remove_suffix(1);
  return s;
}

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot read file: " + path.string());
  std::ostringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

std::string replace_escaped_newlines(std::string s) {
  std::string out;
  out.reserve(s.size());
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (s[i] == '\\' && i + 1 < s.size() && s[i + 1] == 'n') {
      out.push_back(' ');
      ++i;
    } else {
      out.push_back(s[i]);
    }
  }
  return out;
}

// Splits one CSV record starting at `pos`; advances `pos` past the record
// terminator. Returns false at end of input.
bool next_record(std::string_view content, std::size_t& pos, std::vector<std::string>& fields,
                 std::size_t row) {
  fields.clear();
  if (pos >= content.size()) return false;
  std::string field;
  bool quoted = false;
  bool field_started_quoted = false;
  while (pos < content.size()) {
    const char c = content[pos];
    if (quoted) {
      if (c == '"') {
        if (pos + 1 < content.size() && content[pos + 1] == '"') {
          field.push_back('"');
          pos += 2;
          continue;
        }
        quoted = false;
        ++pos;
        continue;
      }
      field.push_back(c);
      ++pos;
      continue;
    }
    if (c == '"' && field.empty() && !field_started_quoted) {
      quoted = true;
      field_started_quoted = true;
      ++pos;
    } else if (c == ',') {
      fields.push_back(std::move(field));
      field.clear();
      field_started_quoted = false;
      ++pos;
    } else if (c == '\n' || c == '\r') {
      ++pos;
      if (c == '\r' && pos < content.size() && content[pos] == '\n') ++pos;
      break;
    } else {
      field.push_back(c);
      ++pos;
    }
  }
  if (quoted) throw std::runtime_error("row " + std::to_string(row) + ": unterminated quote");
  fields.push_back(std::move(field));
  return true;
}

}  // namespace

Vocab::Vocab() {
  append(kPadToken);
  append(kUnkToken);
}

void Vocab::append(std::string token) {
  const auto id = static_cast<std::int32_t>(id_to_token_.size());
  token_to_id_.emplace(token, id);
  id_to_token_.push_back(std::move(token));
}

Vocab Vocab::from_listing(std::vector<std::string> id_to_token, std::size_t min_freq) {
  if (id_to_token.size() < 2 || id_to_token[0] != kPadToken || id_to_token[1] != kUnkToken) {
    throw std::invalid_argument("vocabulary listing must start with <pad>, <unk>");
  }
  Vocab vocab;
  vocab.min_freq_ = min_freq;
  for (std::size_t i = 2; i < id_to_token.size(); ++i) {
    if (vocab.token_to_id_.count(id_to_token[i])) {
      throw std::invalid_argument("duplicate vocabulary token: " + id_to_token[i]);
    }
    vocab.append(std::move(id_to_token[i]));
  }
  return vocab;
}

std::int32_t Vocab::id(std::string_view token) const {
  const auto it = token_to_id_.find(std::string(token));
  return it == token_to_id_.end() ? kUnkId : it->second;
}

bool Vocab::contains(std::string_view token) const {
  return token_to_id_.count(std::string(token)) > 0;
}

std::vector<std::string> tokenize(std::string_view text) {
  std::vector<std::string> tokens;
  std::string current;
  for (const char ch : text) {
    const auto c = static_cast<unsigned char>(ch);
    if (is_word_byte(c)) {
      current.push_back(static_cast<char>(to_lower(c)));
    } else if (!current.empty()) {
      tokens.push_back(std::move(current));
      current.clear();
    }
  }
  if (!current.empty()) tokens.push_back(std::move(current));
  return tokens;
}

Vocab build_vocab(std::span<const Sample> corpus, std::size_t min_freq) {
  if (corpus.empty()) throw std::invalid_argument("cannot build a vocabulary from an empty corpus");
  std::map<std::string, std::size_t> counts;
  for (const Sample& sample : corpus) {
    for (auto& token : tokenize(sample.text)) ++counts[std::move(token)];
  }
  std::vector<std::pair<std::string, std::size_t>> kept;
  for (auto& [token, count] : counts) {
    if (count > min_freq) kept.emplace_back(token, count);
  }
  if (kept.empty()) throw std::runtime_error("vocabulary empty; lower F");
  // `counts` is already lexicographic, so a stable sort on count keeps ties ordered.
  std::stable_sort(kept.begin(), kept.end(),
                   [](const auto& a, const auto& b) { return a.second > b.second; });
  Vocab vocab;
  vocab.min_freq_ = min_freq;
  for (auto& entry : kept) vocab.append(std::move(entry.first));
  return vocab;
}

EncodedShort encode_tokens(std::span<const std::string> tokens, const Vocab& vocab,
                           std::size_t words) {
  if (words == 0) throw std::invalid_argument("sequence width N must be >= 1");
  if (tokens.empty()) throw EmptySampleError();
  EncodedShort out{std::vector<std::int32_t>(words, kPadId), Mask(words, 0)};
  const std::size_t kept = std::min(words, tokens.size());
  for (std::size_t n = 0; n < kept; ++n) {
    out.ids[n] = vocab.id(tokens[n]);
    out.mask[n] = 1;
  }
  return out;
}

EncodedShort encode_short(std::string_view text, const Vocab& vocab, std::size_t words) {
  const auto tokens = tokenize(text);
  return encode_tokens(tokens, vocab, words);
}

std::vector<std::string> split_sentences(std::string_view text) {
  std::vector<std::string> sentences;
  std::size_t start = 0;
  std::size_t i = 0;
  while (i < text.size()) {
    if (is_sentence_delim(text[i])) {
      const auto piece = trim(text.substr(start, i - start));
      if (!piece.empty()) sentences.emplace_back(piece);
      while (i < text.size() && is_sentence_delim(text[i])) ++i;
      start = i;
    } else {
      ++i;
    }
  }
  const auto tail = trim(text.substr(start));
  if (!tail.empty()) sentences.emplace_back(tail);
  return sentences;
}

EncodedLong encode_long(std::string_view text, const Vocab& vocab, std::size_t sentences,
                        std::size_t words) {
  if (sentences == 0 || words == 0) {
    throw std::invalid_argument("document shape M x N must be at least 1 x 1");
  }
  EncodedLong out;
  out.sentences = sentences;
  out.words = words;
  out.ids.assign(sentences * words, kPadId);
  out.word_mask.assign(sentences * words, 0);
  out.sent_mask.assign(sentences, 0);
  std::size_t m = 0;
  for (const auto& sentence : split_sentences(text)) {
    if (m == sentences) break;
    const auto tokens = tokenize(sentence);
    if (tokens.empty()) continue;
    const auto row = encode_tokens(tokens, vocab, words);
    std::copy(row.ids.begin(), row.ids.end(), out.ids.begin() + m * words);
    std::copy(row.mask.begin(), row.mask.end(), out.word_mask.begin() + m * words);
    out.sent_mask[m] = 1;
    ++m;
  }
  if (m == 0) throw EmptySampleError();
  return out;
}

Corpus parse_csv(std::string_view content, std::size_t num_classes) {
  Corpus corpus;
  std::vector<std::string> fields;
  std::size_t pos = 0;
  std::size_t row = 0;
  while (next_record(content, pos, fields, row + 1)) {
    ++row;
    if (fields.size() == 1 && trim(fields[0]).empty()) continue;
    const std::string where = "row " + std::to_string(row) + ": ";
    const auto label_text = trim(fields[0]);
    long long label = 0;
    const auto* first = label_text.data();
    const auto* last = label_text.data() + label_text.size();
    const auto [ptr, ec] = std::from_chars(first, last, label);
    if (label_text.empty() || ec != std::errc() || ptr != last) {
      throw std::runtime_error(where + "class index is not an integer: '" +
                               std::string(label_text) + "'");
    }
    if (label < 1) throw std::runtime_error(where + "class index must be \xE2\x89\xA5 1");
    if (static_cast<std::size_t>(label) > num_classes) {
      throw std::runtime_error(where + "class index out of range (" + std::to_string(label) +
                               " > " + std::to_string(num_classes) + ")");
    }
    std::string text;
    for (std::size_t f = 1; f < fields.size(); ++f) {
      if (f > 1) text.push_back(' ');
      text += fields[f];
    }
    corpus.push_back(Sample{static_cast<std::size_t>(label - 1), replace_escaped_newlines(text)});
  }
  return corpus;
}

Corpus load_csv(const std::filesystem::path& path, std::size_t num_classes) {
  return parse_csv(read_file(path), num_classes);
}

Tensor random_embeddings(std::size_t vocab_size, std::size_t dim, Rng& rng) {
  Tensor table({vocab_size, dim});
  for (std::size_t v = 0; v < vocab_size; ++v) {
    for (double& x : table.slab(v)) x = rng.uniform(-0.25, 0.25);
  }
  if (vocab_size > 0) {
    auto pad = table.slab(kPadId);
    std::fill(pad.begin(), pad.end(), 0.0);
  }
  return table;
}

Tensor load_embeddings(const std::filesystem::path& path, const Vocab& vocab, std::size_t dim,
                       Rng& rng) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot read embeddings file: " + path.string());
  Tensor table = random_embeddings(vocab.size(), dim, rng);
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    std::istringstream fields(line);
    std::string word;
    if (!(fields >> word)) continue;
    std::vector<double> values;
    double x = 0.0;
    while (fields >> x) values.push_back(x);
    if (line_no == 1 && values.size() == 1) {
      // "count dim" header
      const auto header_dim = static_cast<std::size_t>(values[0]);
      if (header_dim != dim) {
        throw std::runtime_error("embedding dimension mismatch: header says " +
                                 std::to_string(header_dim) + ", expected " + std::to_string(dim));
      }
      continue;
    }
    if (values.size() != dim) {
      throw std::runtime_error("embedding dimension mismatch on line " + std::to_string(line_no) +
                               ": got " + std::to_string(values.size()) + ", expected " +
                               std::to_string(dim));
    }
    if (!vocab.contains(word)) continue;
    const auto id = vocab.id(word);
    if (id == kPadId || id == kUnkId) continue;
    std::copy(values.begin(), values.end(), table.slab(static_cast<std::size_t>(id)).begin());
  }
  return table;
}

}  // namespace icaps
