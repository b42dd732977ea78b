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

#ifndef ICAPS_TOOLS_CLI_HPP_
#define ICAPS_TOOLS_CLI_HPP_

#include <iosfwd>
#include <string>
#include <vector>

#include "json.hpp"

#include "icaps/model.hpp"
#include "icaps/training.hpp"

namespace icaps::cli {

// Flat JSON document: model fields, training fields, file paths and the
// class names, all at the top level.
struct RunConfig {
  ModelConfig model;
  TrainConfig train;
  std::string train_csv;
  std::string test_csv;
  std::string embeddings;
  bool random_pretrained = false;
  std::string checkpoint;
  std::string output_dir = ".";
  std::vector<std::string> class_names;
};

// Unknown keys and inconsistent class counts are rejected by field name.
RunConfig parse_run_config(const nlohmann::json& j);
nlohmann::json to_json(const RunConfig& c);

// Entry point behind the `icaps` binary. Returns the process exit code.
int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace icaps::cli

#endif  // ICAPS_TOOLS_CLI_HPP_
