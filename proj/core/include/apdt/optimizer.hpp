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
#include <cstdint>
#include <span>
#include <string>
#include <string_view>

#include "apdt/model.hpp"

namespace apdt {

enum class OptimizerKind { kAdam, kSgd };

std::string to_string(OptimizerKind k);
OptimizerKind optimizer_from_string(std::string_view s);

struct TrainConfig {
  double learning_rate = 1e-3;
  std::size_t batch_size = 16;  // trajectories per environment per step
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  std::size_t max_steps = 2000;
  std::size_t eval_every = 100;
  double grad_clip_norm = 1.0;
  std::uint64_t seed = 0;
  OptimizerKind optimizer = OptimizerKind::kAdam;
  // Stop once the mean loss over the last `plateau_window` steps improves by
  // less than `plateau_tolerance` (relative) on the window before it. Zero
  // disables the check.
  std::size_t plateau_window = 200;
  double plateau_tolerance = 1e-3;

  friend bool operator==(const TrainConfig&, const TrainConfig&) = default;
};

void validate(const TrainConfig& cfg);

struct OptimizerState {
  ModelParams m;
  ModelParams v;
  std::uint64_t t = 0;

  friend bool operator==(const OptimizerState&, const OptimizerState&) = default;
};

OptimizerState make_optimizer_state(const ModelParams& params);

/// One update of a flat parameter block. `t` is the 1-based step count used
/// for bias correction. Adam with beta1 = beta2 = 0 and a large epsilon is
/// plain gradient descent with step learning_rate / epsilon.
void optimizer_update(std::span<double> x, std::span<const double> grad, std::span<double> m,
                      std::span<double> v, std::uint64_t t, const TrainConfig& cfg);

/// Applies one step to every tensor. Throws std::domain_error on a
/// non-finite gradient, leaving parameters untouched.
void optimizer_step(ModelParams& params, const ModelParams& grads, OptimizerState& state,
                    const TrainConfig& cfg);

double global_norm(const ModelParams& grads);
/// Rescales so the global norm is at most max_norm; returns the norm before.
double clip_global_norm(ModelParams& grads, double max_norm);

}  // namespace apdt
