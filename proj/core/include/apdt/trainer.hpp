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
#include <functional>
#include <iosfwd>
#include <span>
#include <vector>

#include "apdt/checkpoint.hpp"
#include "apdt/dataset.hpp"
#include "apdt/model.hpp"
#include "apdt/optimizer.hpp"

namespace apdt {

/// Offline dataset of one environment configuration (fixed user count).
struct EnvDataset {
  int env_tag = 0;
  std::vector<Trajectory> trajectories;
};

struct TrainStepRecord {
  std::size_t step = 0;
  double loss = 0.0;
  double grad_norm = 0.0;
  double lr = 0.0;
};

struct EvalRecord {
  std::size_t step = 0;
  double loss = 0.0;
};

/// Offline pre-training loop. Every step draws, for each environment in
/// turn, `batch_size` trajectory windows from its dataset and one K-length
/// prompt per window from its prompt set, and takes one optimizer step on
/// the mean squared action error over the whole mixed batch.
class Trainer {
 public:
  Trainer(Model model, TrainConfig tcfg, EnvConfig env_cfg);
  /// Resumes from a saved trainer state.
  Trainer(Model model, TrainConfig tcfg, EnvConfig env_cfg, const TrainerState& state);

  TrainStepRecord train_step(std::span<const EnvDataset> data,
                             std::span<const EnvDataset> prompts);

  /// Loss on a batch drawn from a dedicated stream (no parameter update).
  double evaluate(std::span<const EnvDataset> data, std::span<const EnvDataset> prompts,
                  std::uint64_t seed) const;

  /// Steps until max_steps or the loss plateau. Non-finite loss restores the
  /// last good parameters and throws std::runtime_error.
  std::vector<TrainStepRecord> run(std::span<const EnvDataset> data,
                                   std::span<const EnvDataset> prompts,
                                   const std::function<void(const TrainStepRecord&)>& on_step = {},
                                   const std::function<void(const EvalRecord&)>& on_eval = {});

  bool plateaued() const;

  const Model& model() const { return model_; }
  Model& mutable_model() { return model_; }
  const TrainConfig& config() const { return tcfg_; }
  std::size_t step() const { return step_; }
  const std::vector<double>& loss_history() const { return loss_history_; }
  TrainerState state() const;

  /// One training sequence: a uniformly placed window plus a prompt.
  TokenSequence sample_sequence(const Trajectory& traj, std::span<const Trajectory> prompt_source,
                                Rng& rng) const;

 private:
  Model model_;
  TrainConfig tcfg_;
  EnvConfig env_cfg_;
  OptimizerState opt_;
  Rng rng_;
  std::size_t step_ = 0;
  std::vector<double> loss_history_;
};

struct PretrainResult {
  Model model;
  std::vector<TrainStepRecord> curve;
  std::vector<EvalRecord> evals;
};

/// Convenience wrapper: Trainer(model).run(data, prompts).
PretrainResult pretrain(Model model, std::span<const EnvDataset> data,
                        std::span<const EnvDataset> prompts, const TrainConfig& tcfg,
                        const EnvConfig& env_cfg);

/// CSV header `step,loss,grad_norm,lr`.
void write_telemetry_header(std::ostream& out);
void write_telemetry_row(std::ostream& out, const TrainStepRecord& rec);

}  // namespace apdt
