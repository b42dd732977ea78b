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

#include <filesystem>
#include <fstream>
#include <sstream>

#include "cli.hpp"
#include "icaps/checkpoint.hpp"
#include "support/synthetic.hpp"

#ifndef ICAPS_SOURCE_DIR
#error "ICAPS_SOURCE_DIR must point at the repository root"
#endif

namespace icaps {
namespace {

namespace fs = std::filesystem;

std::string slurp(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

struct Result {
  int code;
  std::string out;
  std::string err;
};

class CliTest : public ::testing::Test {
 protected:
  void SetUp() override {
    dir_ = fs::temp_directory_path() /
           ("icaps_cli_" + std::string(::testing::UnitTest::GetInstance()->current_test_info()->name()));
    fs::remove_all(dir_);
    fs::create_directories(dir_);
    testing::KeywordSpec spec;
    spec.train = 120;
    spec.test = 40;
    corpus_ = testing::make_keyword_corpus(spec);
    testing::write_csv(path("train.csv"), corpus_.train);
    testing::write_csv(path("test.csv"), corpus_.test);
    nlohmann::json config{{"variant", "short"},   {"min_freq", 0},      {"embed_dim", 8},
                          {"fixed_dim", 0},       {"kernel_size", 3},   {"region_dim", 8},
                          {"primary_dim", 4},     {"class_dim", 4},     {"words", 20},
                          {"learning_rate", 0.01}, {"batch_size", 16},  {"epochs", 2},
                          {"seed", 5},            {"train_csv", path("train.csv")},
                          {"test_csv", path("test.csv")},               {"output_dir", path("run")},
                          {"class_names", corpus_.class_names}};
    write_config(config);
  }
  void TearDown() override { fs::remove_all(dir_); }

  std::string path(const std::string& name) const { return (dir_ / name).string(); }

  void write_config(const nlohmann::json& j) {
    std::ofstream out(path("config.json"));
    out << j.dump(2);
  }

  Result run(std::vector<std::string> args) {
    args.insert(args.begin(), "icaps");
    std::vector<const char*> argv;
    for (const auto& a : args) argv.push_back(a.c_str());
    std::ostringstream out, err;
    const int code = cli::run(static_cast<int>(argv.size()), argv.data(), out, err);
    return {code, out.str(), err.str()};
  }

  Result train() { return run({"train", "-c", path("config.json")}); }

  fs::path dir_;
  testing::KeywordCorpus corpus_;
};

TEST_F(CliTest, TrainWritesCheckpointLogAndConfigEcho) {
  const Result r = run({"train", "-c", path("config.json"), "--epochs", "3", "--seed", "1"});
  ASSERT_EQ(r.code, 0) << r.err;
  std::istringstream lines(r.out);
  std::string line;
  std::size_t count = 0;
  while (std::getline(lines, line)) {
    const auto j = nlohmann::json::parse(line);
    EXPECT_EQ(j.at("epoch"), ++count);
    for (const char* key : {"mean_loss", "train_acc", "test_acc", "seconds"}) EXPECT_TRUE(j.contains(key));
  }
  EXPECT_EQ(count, 3u);
  EXPECT_TRUE(fs::exists(path("run/model.icap1")));
  const auto echo = nlohmann::json::parse(slurp(path("run/config.json")));
  EXPECT_EQ(echo.at("epochs"), 3);
  EXPECT_EQ(echo.at("seed"), 1);
  EXPECT_EQ(echo.at("vocab_size"), load_checkpoint(path("run/model.icap1")).vocab.size());
}

TEST_F(CliTest, TrainingIsRepeatable) {
  ASSERT_EQ(train().code, 0);
  const std::string first = slurp(path("run/model.icap1"));
  ASSERT_EQ(train().code, 0);
  EXPECT_EQ(slurp(path("run/model.icap1")), first);
}

TEST_F(CliTest, MissingTrainCsvNamesThePath) {
  const Result r = run({"train", "-c", path("config.json"), "--train-csv", path("nope.csv")});
  EXPECT_NE(r.code, 0);
  EXPECT_NE(r.err.find(path("nope.csv")), std::string::npos);
}

TEST_F(CliTest, InvalidFieldIsNamed) {
  auto j = nlohmann::json::parse(slurp(path("config.json")));
  j["kernel_size"] = 4;
  write_config(j);
  Result r = train();
  EXPECT_NE(r.code, 0);
  EXPECT_NE(r.err.find("'kernel_size'"), std::string::npos);
  j["kernel_size"] = 3;
  j["kernal_size"] = 3;
  write_config(j);
  r = train();
  EXPECT_NE(r.code, 0);
  EXPECT_NE(r.err.find("'kernal_size'"), std::string::npos);
}

TEST_F(CliTest, EvalReportsAccuracyAndRejectsForeignLabels) {
  ASSERT_EQ(train().code, 0);
  Result r = run({"eval", "--checkpoint", path("run/model.icap1"), "--test-csv", path("test.csv")});
  ASSERT_EQ(r.code, 0) << r.err;
  const auto j = nlohmann::json::parse(r.out);
  EXPECT_EQ(j.at("schema_version"), 1);
  EXPECT_EQ(j.at("total"), corpus_.test.size());
  EXPECT_EQ(j.at("confusion").size(), 4u);

  std::ofstream(path("wide.csv")) << "\"14\",\"w001 w002\"\n";
  r = run({"eval", "--checkpoint", path("run/model.icap1"), "--test-csv", path("wide.csv")});
  EXPECT_NE(r.code, 0);
  EXPECT_NE(r.err.find("class index out of range"), std::string::npos);
}

TEST_F(CliTest, ExplainIsIdempotentAndClamps) {
  ASSERT_EQ(train().code, 0);
  const std::vector<std::string> args{"explain", "-c", path("config.json"), "--row", "3", "--k1", "999"};
  Result r = run(args);
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_NE(r.err.find("k1=999 clamped to 2"), std::string::npos);
  EXPECT_NE(r.out.find("prediction:"), std::string::npos);
  const std::string first = slurp(path("run/explanation.json"));
  const auto j = nlohmann::json::parse(first);
  EXPECT_EQ(j.at("contributors").size(), 2u);
  EXPECT_EQ(j.at("contributors")[0].at("picks").size(), 2u);
  ASSERT_EQ(run(args).code, 0);
  EXPECT_EQ(slurp(path("run/explanation.json")), first);

  r = run({"explain", "-c", path("config.json"), "--text", "?!?"});
  EXPECT_NE(r.code, 0);
  EXPECT_NE(r.err.find("empty sample"), std::string::npos);
}

TEST_F(CliTest, GlobalAndExportQueries) {
  ASSERT_EQ(train().code, 0);
  Result r = run({"global", "-c", path("config.json")});
  ASSERT_EQ(r.code, 0) << r.err;
  const auto g = nlohmann::json::parse(slurp(path("run/global.json")));
  std::size_t sum = 0;
  for (const auto& row : g.at("C")) {
    for (const auto& v : row) sum += v.get<std::size_t>();
  }
  EXPECT_EQ(sum, corpus_.test.size() - g.at("skipped").get<std::size_t>());
  for (const auto& [cell, words] : g.at("top_words").items()) EXPECT_LE(words.size(), 10u);

  r = run({"export-queries", "-c", path("config.json")});
  ASSERT_EQ(r.code, 0) << r.err;
  std::istringstream csv(slurp(path("run/queries.csv")));
  std::string line;
  std::size_t rows = 0;
  while (std::getline(csv, line)) ++rows;
  EXPECT_EQ(rows, 1u + 2u);
}

TEST_F(CliTest, UsageErrorsExitNonZero) {
  EXPECT_NE(run({}).code, 0);
  EXPECT_NE(run({"frobnicate"}).code, 0);
  EXPECT_NE(run({"eval", "--checkpoint", path("missing.icap1"), "--test-csv", path("test.csv")}).code, 0);
}

TEST(SampleConfigs, AllParseAndAgShortMatchesReferenceSettings) {
  const fs::path dir = fs::path(ICAPS_SOURCE_DIR) / "configs";
  std::size_t count = 0;
  for (const auto& entry : fs::directory_iterator(dir)) {
    if (entry.path().extension() != ".json") continue;
    ++count;
    std::ifstream in(entry.path());
    const cli::RunConfig c = cli::parse_run_config(nlohmann::json::parse(in));
    ModelConfig m = c.model;
    m.vocab_size = 2;
    EXPECT_NO_THROW(m.validate()) << entry.path();
    EXPECT_NO_THROW(c.train.validate()) << entry.path();
    EXPECT_EQ(c.class_names.size(), c.model.num_classes) << entry.path();
  }
  EXPECT_EQ(count, 14u);

  std::ifstream in(dir / "ag_short.json");
  const cli::RunConfig ag = cli::parse_run_config(nlohmann::json::parse(in));
  EXPECT_EQ(ag.model.min_freq, 5u);
  EXPECT_EQ(ag.model.embed_dim, 332u);
  EXPECT_EQ(ag.model.fixed_dim, 300u);
  EXPECT_EQ(ag.model.kernel_size, 3u);
  EXPECT_EQ(ag.model.region_dim, 256u);
  EXPECT_EQ(ag.model.primary_dim, 8u);
  EXPECT_EQ(ag.model.query_dim, 8u);
  EXPECT_EQ(ag.model.num_primary, 32u);
  EXPECT_EQ(ag.model.class_dim, 16u);
  EXPECT_EQ(ag.model.words, 195u);
  EXPECT_EQ(ag.train.learning_rate, 1e-4);
}

}  // namespace
}  // namespace icaps
