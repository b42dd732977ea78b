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

#include <gtest/gtest.h>

#include <bit>
#include <filesystem>
#include <fstream>

#include "icaps/checkpoint.hpp"
#include "support/fixtures.hpp"
#include "support/synthetic.hpp"

namespace icaps {
namespace {

Checkpoint sample_checkpoint(Variant variant, bool with_adam) {
  testing::KeywordSpec spec;
  spec.train = 30;
  spec.test = 10;
  const auto corpus = testing::make_keyword_corpus(spec);
  Checkpoint c;
  c.vocab = build_vocab(corpus.train, 0);
  c.model = testing::keyword_config(c.vocab, 4, 20);
  c.model.variant = variant;
  if (variant == Variant::Long) {
    c.model.sentences = 2;
    c.model.sentence_dim = c.model.primary_dim;
  }
  c.model.fixed_dim = 2;
  Rng rng(5);
  c.params = Parameters::init(c.model, random_embeddings(c.vocab.size(), 2, rng), rng);
  c.class_names = corpus.class_names;
  c.train.seed = 99;
  if (with_adam) {
    c.adam = AdamState::for_params(c.params);
    const auto encoded = encode_corpus(corpus.train, c.vocab, c.model);
    train_epoch(encoded, c.params, *c.adam, c.model, c.train, 0, 2);
  }
  return c;
}

CheckpointErrc error_code(std::string_view bytes) {
  try {
    deserialize_checkpoint(bytes);
  } catch (const CheckpointError& e) {
    return e.code();
  }
  ADD_FAILURE() << "no error";
  return CheckpointErrc::Io;
}

TEST(Checkpoint, LayoutStartsWithMagicAndVersion) {
  const std::string bytes = serialize_checkpoint(sample_checkpoint(Variant::Short, false));
  EXPECT_EQ(bytes.substr(0, 5), "ICAP1");
  EXPECT_EQ(bytes.substr(5, 4), std::string("\x01\x00\x00\x00", 4));
}

TEST(Checkpoint, RoundTripIsByteIdentical) {
  for (Variant variant : {Variant::Short, Variant::Long}) {
    for (bool adam : {false, true}) {
      const Checkpoint c = sample_checkpoint(variant, adam);
      const std::string first = serialize_checkpoint(c);
      const Checkpoint back = deserialize_checkpoint(first);
      EXPECT_EQ(serialize_checkpoint(back), first);
      EXPECT_EQ(back.adam.has_value(), adam);
      EXPECT_EQ(back.vocab.listing(), c.vocab.listing());
      EXPECT_EQ(back.class_names, c.class_names);
      EXPECT_EQ(back.train.seed, 99u);
      const auto a = c.params.all();
      const auto b = back.params.all();
      for (std::size_t k = 0; k < a.size(); ++k) EXPECT_TRUE(*a[k].tensor == *b[k].tensor) << a[k].name;
    }
  }
}

TEST(Checkpoint, ValuesAreLittleEndianDoubles) {
  Checkpoint c = sample_checkpoint(Variant::Short, false);
  c.params.conv_b[0] = 1.5;
  const std::string bytes = serialize_checkpoint(c);
  std::string needle(8, '\0');
  const auto bits = std::bit_cast<std::uint64_t>(1.5);
  for (int b = 0; b < 8; ++b) needle[b] = static_cast<char>((bits >> (8 * b)) & 0xff);
  const std::string name = std::string("\x06\x00\x00\x00", 4) + "conv_b";
  const auto at = bytes.find(name);
  ASSERT_NE(at, std::string::npos);
  // name, rank (u32 = 1), one u64 dim, then the first value.
  EXPECT_EQ(bytes.substr(at + name.size() + 4 + 8, 8), needle);
}

TEST(Checkpoint, CorruptMagicIsRejected) {
  std::string bytes = serialize_checkpoint(sample_checkpoint(Variant::Short, false));
  bytes[0] = 'X';
  try {
    deserialize_checkpoint(bytes);
    FAIL();
  } catch (const CheckpointError& e) {
    EXPECT_EQ(e.code(), CheckpointErrc::BadMagic);
    EXPECT_STREQ(e.what(), "not an ICAP1 checkpoint");
  }
}

TEST(Checkpoint, DistinctErrorCodes) {
  const std::string bytes = serialize_checkpoint(sample_checkpoint(Variant::Short, true));
  for (std::size_t cut : {std::size_t{7}, std::size_t{20}, bytes.size() / 2, bytes.size() - 1}) {
    EXPECT_EQ(error_code(bytes.substr(0, cut)), CheckpointErrc::Truncated) << cut;
  }
  std::string version = bytes;
  version[5] = 2;
  EXPECT_EQ(error_code(version), CheckpointErrc::Version);
  EXPECT_EQ(error_code(bytes + "x"), CheckpointErrc::Malformed);

  // Same length header with a different region width: tensors no longer fit.
  std::string shape = bytes;
  const auto at = shape.find("\"region_dim\":8");
  ASSERT_NE(at, std::string::npos);
  shape.replace(at, 14, "\"region_dim\":4");
  const auto np = shape.find("\"num_primary\":2");
  ASSERT_NE(np, std::string::npos);
  shape.replace(np, 15, "\"num_primary\":1");
  EXPECT_EQ(error_code(shape), CheckpointErrc::ShapeMismatch);
}

TEST(Checkpoint, FileRoundTripAndIoErrors) {
  const auto dir = std::filesystem::temp_directory_path() / "icaps_checkpoint_test";
  std::filesystem::create_directories(dir);
  const Checkpoint c = sample_checkpoint(Variant::Short, true);
  const std::string path = (dir / "a.icap1").string();
  save_checkpoint(path, c);
  const Checkpoint back = load_checkpoint(path);
  save_checkpoint((dir / "b.icap1").string(), back);
  std::ifstream a(path, std::ios::binary), b(dir / "b.icap1", std::ios::binary);
  const std::string sa((std::istreambuf_iterator<char>(a)), {});
  const std::string sb((std::istreambuf_iterator<char>(b)), {});
  EXPECT_EQ(sa, sb);
  try {
    load_checkpoint((dir / "missing.icap1").string());
    FAIL();
  } catch (const CheckpointError& e) {
    EXPECT_EQ(e.code(), CheckpointErrc::Io);
  }
  std::filesystem::remove_all(dir);
}

TEST(Checkpoint, PredictionsSurviveRoundTrip) {
  const Checkpoint c = sample_checkpoint(Variant::Short, true);
  const Checkpoint back = deserialize_checkpoint(serialize_checkpoint(c));
  testing::KeywordSpec spec;
  spec.seed = 3;
  spec.train = 0;
  spec.test = 50;
  const auto corpus = testing::make_keyword_corpus(spec);
  for (const auto& s : encode_corpus(corpus.test, c.vocab, c.model)) {
    const ForwardTrace a = forward(s, c.params, c.model);
    const ForwardTrace b = forward(s, back.params, back.model);
    EXPECT_TRUE(a.class_norms == b.class_norms);
  }
}

}  // namespace
}  // namespace icaps
