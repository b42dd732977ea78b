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

#ifndef ICAPS_CHECKPOINT_HPP_
#define ICAPS_CHECKPOINT_HPP_

#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "icaps/model.hpp"
#include "icaps/text.hpp"
#include "icaps/training.hpp"

namespace icaps {

// Everything needed to resume training or run inference.
struct Checkpoint {
  ModelConfig model;
  TrainConfig train;
  std::vector<std::string> class_names;
  Parameters params;
  std::optional<AdamState> adam;
  Vocab vocab;
};

enum class CheckpointErrc { Io, BadMagic, Version, Truncated, ShapeMismatch, Malformed };

class CheckpointError : public std::runtime_error {
 public:
  CheckpointError(CheckpointErrc code, const std::string& what)
      : std::runtime_error(what), code_(code) {}
  CheckpointErrc code() const { return code_; }

 private:
  CheckpointErrc code_;
};

inline constexpr std::uint32_t kCheckpointVersion = 1;

// Layout (all integers little-endian, values IEEE-754 binary64):
//   "ICAP1" | u32 version | u64 n + n bytes JSON header
//   u32 count, then per tensor: u32 n + name, u32 rank, rank x u64 dims, values
//   u8 has_adam [u64 step, u32 count, tensors "m/<name>", "v/<name>"]
//   u64 vocab size, then per token: u32 n + bytes
std::string serialize_checkpoint(const Checkpoint& checkpoint);
Checkpoint deserialize_checkpoint(std::string_view bytes);

void save_checkpoint(const std::string& path, const Checkpoint& checkpoint);
Checkpoint load_checkpoint(const std::string& path);

}  // namespace icaps

#endif  // ICAPS_CHECKPOINT_HPP_
