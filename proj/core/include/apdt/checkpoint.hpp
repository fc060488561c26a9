// Copyright 2026 The APDT Authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "apdt/model.hpp"
#include "apdt/optimizer.hpp"

namespace apdt {

/// Everything needed to continue a training run exactly where it stopped.
struct TrainerState {
  OptimizerState opt;
  std::uint64_t step = 0;
  std::string rng_state;
  std::vector<double> loss_history;

  friend bool operator==(const TrainerState&, const TrainerState&) = default;
};

struct Checkpoint {
  Model model;
  std::optional<TrainerState> trainer;
};

inline constexpr std::uint32_t kCheckpointVersion = 1;

/// Layout: "APDTCKPT", u32 version, u64 header length, JSON header (configs,
/// normalisers, seeds, trainer scalars), tensor records (name, rows, cols,
/// raw little-endian doubles) for the parameters and, when present, both
/// moment buffers, and a trailing CRC-32 of all preceding bytes.
std::string encode_checkpoint(const Model& model, const TrainerState* trainer = nullptr);
Checkpoint decode_checkpoint(const std::string& bytes);

void save_checkpoint(const std::filesystem::path& path, const Model& model,
                     const TrainerState* trainer = nullptr);
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace apdt
