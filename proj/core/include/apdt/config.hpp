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
#include <string_view>
#include <vector>

#include "apdt/model.hpp"
#include "apdt/optimizer.hpp"
#include "apdt/types.hpp"

namespace apdt {

struct DeploySettings {
  std::size_t buffer_capacity = 500;  // O
  std::size_t episodes = 20;
  double density = 20.0;

  friend bool operator==(const DeploySettings&, const DeploySettings&) = default;
};

struct DataSettings {
  std::size_t episodes = 200;
  std::string policy = "greedy";
  std::vector<int> env_tags{11, 13, 15};

  friend bool operator==(const DataSettings&, const DataSettings&) = default;
};

struct PathSettings {
  std::filesystem::path data_dir = "data";
  std::filesystem::path checkpoint = "out/model.ckpt";
  std::filesystem::path output_dir = "out";

  friend bool operator==(const PathSettings&, const PathSettings&) = default;
};

struct ExperimentConfig {
  std::uint64_t seed = 0;
  EnvConfig env;
  MobilityParams mobility;
  ModelConfig model;
  TrainConfig train;
  DataSettings data;
  DeploySettings deploy;
  PathSettings paths;

  friend bool operator==(const ExperimentConfig&, const ExperimentConfig&) = default;
};

/// Runs every sub-config check. Throws std::invalid_argument.
void validate(const ExperimentConfig& cfg);

/// Parses TOML text. Unknown tables or keys are rejected. The top-level
/// `seed` is copied into env.seed and train.seed.
ExperimentConfig parse_config(std::string_view toml_text, std::string_view source = "<string>");
ExperimentConfig load_config(const std::filesystem::path& path);

/// Applies an `APDT_SEED` value when set. Throws on a malformed value.
void apply_seed_override(ExperimentConfig& cfg, const char* env_value);
void set_seed(ExperimentConfig& cfg, std::uint64_t seed);

/// TOML text that parses back to `cfg`.
std::string to_toml(const ExperimentConfig& cfg);

}  // namespace apdt
