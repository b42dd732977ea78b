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

#include "cli.hpp"

#include <chrono>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <set>
#include <stdexcept>

#include "CLI11.hpp"

#include "icaps/checkpoint.hpp"
#include "icaps/interpret.hpp"
#include "icaps/text.hpp"

namespace icaps::cli {
namespace fs = std::filesystem;
namespace {

[[noreturn]] void bad_field(const std::string& field, const std::string& why) {
  throw std::invalid_argument("invalid config field '" + field + "': " + why);
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

const std::vector<std::string>& path_keys() {
  static const std::vector<std::string> keys{"train_csv",  "test_csv",          "embeddings",
                                             "checkpoint", "output_dir",        "class_names",
                                             "random_pretrained"};
  return keys;
}

nlohmann::json read_json_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open config " + path);
  try {
    return nlohmann::json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    throw std::runtime_error("config " + path + " is not valid JSON: " + e.what());
  }
}

void write_text(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << text;
  if (!out) throw std::runtime_error("write failed: " + path.string());
}

void require_file(const std::string& path, const char* what) {
  if (path.empty()) throw std::runtime_error(std::string(what) + " path is not set");
  if (!fs::is_regular_file(path)) throw std::runtime_error(std::string(what) + " not found: " + path);
}

// Options shared by every subcommand; unset options leave the config alone.
struct Overrides {
  std::string config_path;
  std::string train_csv, test_csv, embeddings, checkpoint, output_dir;
  std::size_t epochs = 0, batch_size = 0;
  std::uint64_t seed = 0;
  double learning_rate = 0.0;
  bool random_pretrained = false;
  CLI::Option* epochs_opt = nullptr;
  CLI::Option* batch_opt = nullptr;
  CLI::Option* seed_opt = nullptr;
  CLI::Option* lr_opt = nullptr;

  void attach(CLI::App* app, bool training) {
    app->add_option("-c,--config", config_path, "JSON run config");
    app->add_option("--checkpoint", checkpoint, "checkpoint path");
    app->add_option("--test-csv", test_csv, "evaluation CSV");
    app->add_option("--output-dir", output_dir, "directory for outputs");
    if (!training) return;
    app->add_option("--train-csv", train_csv, "training CSV");
    app->add_option("--embeddings", embeddings, "word2vec text file for the frozen part");
    app->add_flag("--random-pretrained", random_pretrained,
                  "use seeded random vectors for the frozen part");
    epochs_opt = app->add_option("--epochs", epochs, "training epochs");
    batch_opt = app->add_option("--batch-size", batch_size, "mini-batch size");
    seed_opt = app->add_option("--seed", seed, "random seed");
    lr_opt = app->add_option("--lr,--learning-rate", learning_rate, "Adam learning rate");
  }

  RunConfig resolve() const {
    RunConfig c = config_path.empty() ? RunConfig{} : parse_run_config(read_json_file(config_path));
    if (!train_csv.empty()) c.train_csv = train_csv;
    if (!test_csv.empty()) c.test_csv = test_csv;
    if (!embeddings.empty()) c.embeddings = embeddings;
    if (!checkpoint.empty()) c.checkpoint = checkpoint;
    if (!output_dir.empty()) c.output_dir = output_dir;
    if (random_pretrained) {
      c.random_pretrained = true;
      c.embeddings.clear();
    }
    if (epochs_opt && epochs_opt->count()) c.train.epochs = epochs;
    if (batch_opt && batch_opt->count()) c.train.batch_size = batch_size;
    if (seed_opt && seed_opt->count()) c.train.seed = seed;
    if (lr_opt && lr_opt->count()) c.train.learning_rate = learning_rate;
    return c;
  }
};

std::string checkpoint_path(const RunConfig& c) {
  return c.checkpoint.empty() ? (fs::path(c.output_dir) / "model.icap1").string() : c.checkpoint;
}

Checkpoint open_checkpoint(const RunConfig& c) {
  const std::string path = checkpoint_path(c);
  require_file(path, "checkpoint");
  return load_checkpoint(path);
}

std::vector<EncodedSample> encode_or_throw(const Corpus& corpus, const Checkpoint& ck,
                                           std::ostream& err, const std::string& path) {
  std::size_t skipped = 0;
  auto encoded = encode_corpus(corpus, ck.vocab, ck.model, &skipped);
  if (skipped) err << "warning: " << skipped << " empty samples skipped in " << path << '\n';
  if (encoded.empty()) throw std::runtime_error("no usable samples in " + path);
  return encoded;
}

int cmd_train(const Overrides& o, bool resume, std::ostream& out, std::ostream& err) {
  RunConfig c = o.resolve();
  require_file(c.train_csv, "train_csv");
  if (!c.test_csv.empty()) require_file(c.test_csv, "test_csv");
  if (!c.embeddings.empty()) require_file(c.embeddings, "embeddings");
  if (c.class_names.empty()) bad_field("class_names", "must list one name per class");
  if (c.model.fixed_dim > 0 && c.embeddings.empty() && !c.random_pretrained) {
    bad_field("embeddings", "fixed_dim > 0 needs an embeddings file or random_pretrained");
  }
  c.train.validate();
  {
    ModelConfig probe = c.model;
    probe.vocab_size = std::max<std::size_t>(probe.vocab_size, 2);
    probe.validate();
  }

  const Corpus train = load_csv(c.train_csv, c.model.num_classes);
  const std::string ckpt_path = checkpoint_path(c);
  Checkpoint ck;
  std::size_t first_epoch = 0;
  if (resume && fs::is_regular_file(ckpt_path)) {
    ck = load_checkpoint(ckpt_path);
    if (ck.model.num_classes != c.model.num_classes) {
      throw std::runtime_error("checkpoint class count differs from config");
    }
    if (!ck.adam) ck.adam = AdamState::for_params(ck.params);
    const std::size_t per_epoch = (train.size() + c.train.batch_size - 1) / c.train.batch_size;
    first_epoch = static_cast<std::size_t>(ck.adam->step / per_epoch);
    err << "resuming from " << ckpt_path << " at step " << ck.adam->step << '\n';
  } else {
    ck.vocab = build_vocab(train, c.model.min_freq);
    ck.model = c.model;
    ck.model.vocab_size = ck.vocab.size();
    ck.model.validate();
    Rng rng(c.train.seed);
    Tensor fixed;
    if (ck.model.fixed_dim > 0) {
      fixed = c.embeddings.empty()
                  ? random_embeddings(ck.vocab.size(), ck.model.fixed_dim, rng)
                  : load_embeddings(c.embeddings, ck.vocab, ck.model.fixed_dim, rng);
    }
    ck.params = Parameters::init(ck.model, std::move(fixed), rng);
    ck.adam = AdamState::for_params(ck.params);
  }
  ck.train = c.train;
  ck.class_names = c.class_names;
  c.model = ck.model;

  fs::create_directories(c.output_dir);
  write_text(fs::path(c.output_dir) / "config.json", to_json(c).dump(2) + "\n");

  const auto train_set = encode_or_throw(train, ck, err, c.train_csv);
  std::vector<EncodedSample> test_set;
  if (!c.test_csv.empty()) {
    test_set = encode_or_throw(load_csv(c.test_csv, ck.model.num_classes), ck, err, c.test_csv);
  }
  err << "vocabulary " << ck.vocab.size() << ", train " << train_set.size() << ", test "
      << test_set.size() << '\n';

  const std::size_t threads = default_threads();
  for (std::size_t e = 0; e < c.train.epochs; ++e) {
    const auto start = std::chrono::steady_clock::now();
    const EpochStats stats =
        train_epoch(train_set, ck.params, *ck.adam, ck.model, ck.train, first_epoch + e, threads);
    nlohmann::ordered_json line{{"epoch", first_epoch + e + 1},
                                {"mean_loss", stats.mean_loss},
                                {"train_acc", stats.train_accuracy},
                                {"test_acc", nullptr}};
    if (!test_set.empty()) line["test_acc"] = evaluate(test_set, ck.params, ck.model, threads).accuracy;
    save_checkpoint(ckpt_path, ck);
    line["seconds"] =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    out << line.dump() << std::endl;
  }
  return 0;
}

int cmd_eval(const Overrides& o, std::ostream& out, std::ostream& err) {
  const RunConfig c = o.resolve();
  require_file(c.test_csv, "test_csv");
  const Checkpoint ck = open_checkpoint(c);
  const auto test_set = encode_or_throw(load_csv(c.test_csv, ck.model.num_classes), ck, err, c.test_csv);
  const EvalResult r = evaluate(test_set, ck.params, ck.model);
  const std::string text = to_json(r, ck.class_names).dump(2) + "\n";
  if (!o.output_dir.empty() || !o.config_path.empty()) {
    write_text(fs::path(c.output_dir) / "eval.json", text);
  }
  out << text;
  return 0;
}

int cmd_explain(const Overrides& o, const std::string& text, std::optional<std::size_t> row,
                std::size_t k1, std::size_t k2, std::ostream& out, std::ostream& err) {
  const RunConfig c = o.resolve();
  if (text.empty() == !row.has_value()) {
    throw std::runtime_error("explain needs exactly one of --text or --row");
  }
  const Checkpoint ck = open_checkpoint(c);
  std::string input = text;
  if (row) {
    require_file(c.test_csv, "test_csv");
    const Corpus corpus = load_csv(c.test_csv, ck.model.num_classes);
    if (*row >= corpus.size()) {
      throw std::runtime_error("row " + std::to_string(*row) + " out of range (" +
                               std::to_string(corpus.size()) + " rows)");
    }
    input = corpus[*row].text;
  }
  const EncodedSample sample = encode_sample(Sample{0, input}, ck.vocab, ck.model);
  const ForwardTrace trace = forward(sample, ck.params, ck.model);
  const LocalExplanation e = explain_local(trace, k1, k2, ck.model.kernel_size);
  for (const auto& w : e.warnings) err << "warning: " << w << '\n';
  write_text(fs::path(c.output_dir) / "explanation.json",
             explanation_to_json(e, ck.vocab, ck.class_names).dump(2) + "\n");
  out << render_explanation(e, ck.vocab, ck.class_names);
  return 0;
}

int cmd_global(const Overrides& o, std::size_t top_t, std::ostream& out, std::ostream& err) {
  const RunConfig c = o.resolve();
  require_file(c.test_csv, "test_csv");
  const Checkpoint ck = open_checkpoint(c);
  const Corpus corpus = load_csv(c.test_csv, ck.model.num_classes);
  if (corpus.empty()) throw std::runtime_error("no samples in " + c.test_csv);
  const FrequencyMatrix freq =
      build_global(corpus, ck.params, ck.model, ck.vocab, default_threads(),
                   [&](std::size_t done) { err << "processed " << done << " samples\n"; });
  const fs::path path = fs::path(c.output_dir) / "global.json";
  write_text(path, global_to_json(freq, top_t).dump(2) + "\n");
  out << "processed " << freq.total << ", skipped " << freq.skipped << ", wrote " << path.string()
      << '\n';
  return 0;
}

int cmd_export_queries(const Overrides& o, std::ostream& out) {
  const RunConfig c = o.resolve();
  const Checkpoint ck = open_checkpoint(c);
  const fs::path path = fs::path(c.output_dir) / "queries.csv";
  write_text(path, export_queries(ck.params));
  out << "wrote " << ck.model.num_primary << " queries to " << path.string() << '\n';
  return 0;
}

}  // namespace

RunConfig parse_run_config(const nlohmann::json& j) {
  if (!j.is_object()) throw std::invalid_argument("config must be a JSON object");
  std::set<std::string> known(path_keys().begin(), path_keys().end());
  const nlohmann::json model_keys = ModelConfig{};
  const nlohmann::json train_keys = TrainConfig{};
  for (const auto& [key, value] : model_keys.items()) known.insert(key);
  for (const auto& [key, value] : train_keys.items()) known.insert(key);
  for (const auto& [key, value] : j.items()) {
    if (!known.count(key)) bad_field(key, "unknown key");
  }

  RunConfig c;
  c.model = j.get<ModelConfig>();
  c.train = j.get<TrainConfig>();
  read_field(j, "train_csv", c.train_csv);
  read_field(j, "test_csv", c.test_csv);
  read_field(j, "embeddings", c.embeddings);
  read_field(j, "random_pretrained", c.random_pretrained);
  read_field(j, "checkpoint", c.checkpoint);
  read_field(j, "output_dir", c.output_dir);
  read_field(j, "class_names", c.class_names);
  if (!j.contains("num_classes")) c.model.num_classes = c.class_names.size();
  if (!c.class_names.empty() && c.class_names.size() != c.model.num_classes) {
    bad_field("class_names", "length must equal num_classes");
  }
  return c;
}

nlohmann::json to_json(const RunConfig& c) {
  nlohmann::json j = c.model;
  j.update(nlohmann::json(c.train));
  j["train_csv"] = c.train_csv;
  j["test_csv"] = c.test_csv;
  j["embeddings"] = c.embeddings;
  j["random_pretrained"] = c.random_pretrained;
  j["checkpoint"] = c.checkpoint;
  j["output_dir"] = c.output_dir;
  j["class_names"] = c.class_names;
  return j;
}

int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Interpretable capsule networks for text classification", "icaps"};
  app.require_subcommand(1);

  Overrides train_o, eval_o, explain_o, global_o, export_o;
  bool resume = false;
  std::string text;
  std::size_t row = 0, k1 = 2, k2 = 2, top_t = 10;

  auto* train = app.add_subcommand("train", "build the vocabulary and train a model");
  train_o.attach(train, true);
  train->add_flag("--resume", resume, "continue from an existing checkpoint");

  auto* eval = app.add_subcommand("eval", "accuracy and confusion matrix on a labelled CSV");
  eval_o.attach(eval, false);

  auto* explain = app.add_subcommand("explain", "local explanation of one input");
  explain_o.attach(explain, false);
  explain->add_option("--text", text, "raw input text");
  auto* row_opt = explain->add_option("--row", row, "0-based data row of --test-csv");
  explain->add_option("--k1", k1, "capsules kept per explanation")->capture_default_str();
  explain->add_option("--k2", k2, "positions kept per capsule")->capture_default_str();

  auto* global = app.add_subcommand("global", "frequency matrix over a corpus");
  global_o.attach(global, false);
  global->add_option("--top-t", top_t, "words listed per cell")->capture_default_str();

  auto* export_q = app.add_subcommand("export-queries", "write primary-capsule queries as CSV");
  export_o.attach(export_q, false);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e, out, err);
  }

  try {
    if (*train) return cmd_train(train_o, resume, out, err);
    if (*eval) return cmd_eval(eval_o, out, err);
    if (*explain) {
      return cmd_explain(explain_o, text, row_opt->count() ? std::optional(row) : std::nullopt, k1,
                         k2, out, err);
    }
    if (*global) return cmd_global(global_o, top_t, out, err);
    if (*export_q) return cmd_export_queries(export_o, out);
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return 1;
  }
  return 1;
}

}  // namespace icaps::cli
