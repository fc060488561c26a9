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

#include <cstddef>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "apdt/config.hpp"
#include "apdt/dataset.hpp"
#include "apdt/model.hpp"
#include "apdt/trainer.hpp"

namespace apdt::cli {

struct GenDataOptions {
  std::size_t episodes = 0;
  std::string policy;
  std::vector<int> env_tags;
  std::filesystem::path out_dir;
};

struct PretrainOptions {
  std::filesystem::path data_dir;
  std::filesystem::path out;
  std::optional<std::filesystem::path> resume;
  std::filesystem::path telemetry;
  std::optional<std::size_t> steps;
};

struct DeployCmdOptions {
  std::filesystem::path checkpoint;
  std::filesystem::path data_dir;
  std::filesystem::path out_dir;
  std::size_t episodes = 0;
  std::vector<double> densities;
};

struct EvalOptions {
  std::string policy;
  std::optional<std::filesystem::path> checkpoint;
  std::filesystem::path data_dir;
  std::filesystem::path out;
  std::size_t episodes = 0;
  double density = 0.0;
};

struct GradCheckOptions {
  int d_model = 16;
  int n_layers = 2;
  double tolerance = 1e-4;
};

struct AblateOptions {
  std::filesystem::path checkpoint_attn;
  std::filesystem::path checkpoint_padded;
  std::filesystem::path data_dir;
  std::filesystem::path out_dir;
  std::size_t episodes = 0;
  std::vector<double> densities;
};

int cmd_gen_data(const ExperimentConfig& cfg, const GenDataOptions& opt);
int cmd_pretrain(const ExperimentConfig& cfg, const PretrainOptions& opt);
int cmd_deploy(const ExperimentConfig& cfg, const DeployCmdOptions& opt);
int cmd_eval(const ExperimentConfig& cfg, const EvalOptions& opt);
int cmd_grad_check(const ExperimentConfig& cfg, const GradCheckOptions& opt);
int cmd_ablate(const ExperimentConfig& cfg, const AblateOptions& opt);

/// Reference gradient check: a small model (d_model, n_layers, two-step
/// context, no prompt) with widened random weights on the first two steps
/// of `traj`.
GradCheckReport reference_grad_check(const ModelConfig& base, const EnvConfig& env,
                                     const Trajectory& traj, int d_model, int n_layers,
                                     std::uint64_t seed);

/// Loads every `env_<tag>.jsonl` in `dir`, ordered by tag.
std::vector<EnvDataset> load_datasets(const std::filesystem::path& dir);

}  // namespace apdt::cli
