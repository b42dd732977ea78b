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

#include "icaps/checkpoint.hpp"

#include <bit>
#include <fstream>
#include <iterator>
#include <map>
#include <sstream>

namespace icaps {
namespace {

constexpr std::string_view kMagic = "ICAP1";

class Writer {
 public:
  void bytes(std::string_view s) { out_.append(s); }
  template <typename U>
  void uint(U v) {
    for (std::size_t b = 0; b < sizeof(U); ++b) {
      out_.push_back(static_cast<char>((static_cast<std::uint64_t>(v) >> (8 * b)) & 0xff));
    }
  }
  void f64(double v) { uint(std::bit_cast<std::uint64_t>(v)); }
  void str32(std::string_view s) {
    uint(static_cast<std::uint32_t>(s.size()));
    bytes(s);
  }
  void tensor(std::string_view name, const Tensor& t) {
    str32(name);
    uint(static_cast<std::uint32_t>(t.rank()));
    for (std::size_t d : t.shape()) uint(static_cast<std::uint64_t>(d));
    for (double v : t.data()) f64(v);
  }
  std::string take() { return std::move(out_); }

 private:
  std::string out_;
};

class Reader {
 public:
  explicit Reader(std::string_view in) : in_(in) {}

  std::string_view bytes(std::size_t n) {
    if (in_.size() - pos_ < n) {
      throw CheckpointError(CheckpointErrc::Truncated, "checkpoint truncated");
    }
    const auto s = in_.substr(pos_, n);
    pos_ += n;
    return s;
  }
  template <typename U>
  U uint() {
    const auto s = bytes(sizeof(U));
    std::uint64_t v = 0;
    for (std::size_t b = 0; b < sizeof(U); ++b) {
      v |= static_cast<std::uint64_t>(static_cast<unsigned char>(s[b])) << (8 * b);
    }
    return static_cast<U>(v);
  }
  double f64() { return std::bit_cast<double>(uint<std::uint64_t>()); }
  std::string str32() { return std::string(bytes(uint<std::uint32_t>())); }
  std::size_t remaining() const { return in_.size() - pos_; }

  std::pair<std::string, Tensor> tensor() {
    std::string name = str32();
    const auto rank = uint<std::uint32_t>();
    if (rank > 8) malformed("tensor '" + name + "' has rank " + std::to_string(rank));
    std::vector<std::size_t> shape(rank);
    std::uint64_t count = 1;
    for (auto& d : shape) {
      const auto dim = uint<std::uint64_t>();
      if (dim != 0 && count > remaining() / dim) {
        throw CheckpointError(CheckpointErrc::Truncated, "checkpoint truncated");
      }
      count *= dim;
      d = static_cast<std::size_t>(dim);
    }
    if (count > remaining() / sizeof(double)) {
      throw CheckpointError(CheckpointErrc::Truncated, "checkpoint truncated");
    }
    std::vector<double> values(count);
    for (auto& v : values) v = f64();
    return {std::move(name), rank ? Tensor(std::move(shape), std::move(values)) : Tensor()};
  }

  [[noreturn]] static void malformed(const std::string& what) {
    throw CheckpointError(CheckpointErrc::Malformed, "malformed checkpoint: " + what);
  }

 private:
  std::string_view in_;
  std::size_t pos_ = 0;
};

nlohmann::json header_json(const Checkpoint& c) {
  return nlohmann::json{{"model", c.model}, {"train", c.train}, {"class_names", c.class_names}};
}

}  // namespace

std::string serialize_checkpoint(const Checkpoint& c) {
  Writer w;
  w.bytes(kMagic);
  w.uint(kCheckpointVersion);
  const std::string header = header_json(c).dump();
  w.uint(static_cast<std::uint64_t>(header.size()));
  w.bytes(header);

  const auto tensors = c.params.all();
  w.uint(static_cast<std::uint32_t>(tensors.size()));
  for (const auto& [name, t] : tensors) w.tensor(name, *t);

  w.uint(static_cast<std::uint8_t>(c.adam.has_value()));
  if (c.adam) {
    const AdamState& a = *c.adam;
    w.uint(a.step);
    w.uint(static_cast<std::uint32_t>(a.names.size()));
    for (std::size_t k = 0; k < a.names.size(); ++k) {
      w.tensor("m/" + a.names[k], a.first[k]);
      w.tensor("v/" + a.names[k], a.second[k]);
    }
  }

  const auto& tokens = c.vocab.listing();
  w.uint(static_cast<std::uint64_t>(tokens.size()));
  for (const auto& t : tokens) w.str32(t);
  return w.take();
}

Checkpoint deserialize_checkpoint(std::string_view bytes) {
  if (bytes.size() < kMagic.size() || bytes.substr(0, kMagic.size()) != kMagic) {
    throw CheckpointError(CheckpointErrc::BadMagic, "not an ICAP1 checkpoint");
  }
  Reader r(bytes.substr(kMagic.size()));
  const auto version = r.uint<std::uint32_t>();
  if (version != kCheckpointVersion) {
    throw CheckpointError(CheckpointErrc::Version,
                          "unsupported checkpoint version " + std::to_string(version));
  }

  Checkpoint c;
  const auto header_size = r.uint<std::uint64_t>();
  if (header_size > r.remaining()) {
    throw CheckpointError(CheckpointErrc::Truncated, "checkpoint truncated");
  }
  try {
    const auto header = nlohmann::json::parse(r.bytes(static_cast<std::size_t>(header_size)));
    c.model = header.at("model").get<ModelConfig>();
    c.train = header.at("train").get<TrainConfig>();
    c.class_names = header.at("class_names").get<std::vector<std::string>>();
    c.model.validate();
  } catch (const CheckpointError&) {
    throw;
  } catch (const std::exception& e) {
    Reader::malformed(std::string("header: ") + e.what());
  }

  std::map<std::string, Tensor> stored;
  const auto count = r.uint<std::uint32_t>();
  for (std::uint32_t k = 0; k < count; ++k) {
    auto [name, t] = r.tensor();
    if (!stored.emplace(name, std::move(t)).second) Reader::malformed("duplicate tensor " + name);
  }
  for (auto& [name, slot] : c.params.all()) {
    auto it = stored.find(name);
    if (it == stored.end()) Reader::malformed("missing tensor " + name);
    *slot = std::move(it->second);
    stored.erase(it);
  }
  if (!stored.empty()) Reader::malformed("unknown tensor " + stored.begin()->first);
  try {
    c.params.check_shapes(c.model);
  } catch (const std::exception& e) {
    throw CheckpointError(CheckpointErrc::ShapeMismatch, e.what());
  }

  const auto has_adam = r.uint<std::uint8_t>();
  if (has_adam > 1) Reader::malformed("bad optimizer flag");
  if (has_adam) {
    AdamState a = AdamState::for_params(c.params);
    a.step = r.uint<std::uint64_t>();
    if (r.uint<std::uint32_t>() != a.names.size()) {
      throw CheckpointError(CheckpointErrc::ShapeMismatch, "optimizer state tensor count differs");
    }
    for (std::size_t k = 0; k < a.names.size(); ++k) {
      for (auto [prefix, dest] : {std::pair{"m/", &a.first[k]}, std::pair{"v/", &a.second[k]}}) {
        auto [name, t] = r.tensor();
        if (name != prefix + a.names[k]) Reader::malformed("unexpected tensor " + name);
        if (!t.same_shape(*dest)) {
          throw CheckpointError(CheckpointErrc::ShapeMismatch,
                                "optimizer tensor " + name + " has shape " + t.shape_string());
        }
        *dest = std::move(t);
      }
    }
    c.adam = std::move(a);
  }

  const auto vocab_size = r.uint<std::uint64_t>();
  if (vocab_size != c.model.vocab_size) {
    throw CheckpointError(CheckpointErrc::ShapeMismatch, "vocabulary size differs from config");
  }
  if (vocab_size > r.remaining() / sizeof(std::uint32_t)) {
    throw CheckpointError(CheckpointErrc::Truncated, "checkpoint truncated");
  }
  std::vector<std::string> tokens(static_cast<std::size_t>(vocab_size));
  for (auto& t : tokens) t = r.str32();
  if (r.remaining() != 0) Reader::malformed("trailing bytes");
  try {
    c.vocab = Vocab::from_listing(std::move(tokens), c.model.min_freq);
  } catch (const std::exception& e) {
    Reader::malformed(std::string("vocabulary: ") + e.what());
  }
  return c;
}

void save_checkpoint(const std::string& path, const Checkpoint& checkpoint) {
  const std::string bytes = serialize_checkpoint(checkpoint);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw CheckpointError(CheckpointErrc::Io, "cannot open " + path + " for writing");
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw CheckpointError(CheckpointErrc::Io, "write failed: " + path);
}

Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CheckpointError(CheckpointErrc::Io, "cannot open " + path);
  std::ostringstream buffer;
  buffer << in.rdbuf();
  if (in.bad()) throw CheckpointError(CheckpointErrc::Io, "read failed: " + path);
  return deserialize_checkpoint(buffer.str());
}

}  // namespace icaps
