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

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include "apdt/env.hpp"

namespace apdt {

// ---------------------------------------------------------------------------
// Stored trajectories
// ---------------------------------------------------------------------------

struct UserObs {
  std::int64_t id = 0;
  Vec2 pos;
  std::int64_t aoi = 1;

  friend bool operator==(const UserObs&, const UserObs&) = default;
};

/// What a policy (and the model) sees of an EnvState.
struct StateSnapshot {
  int t = 1;
  Vec2 uav;
  std::vector<UserObs> users;

  friend bool operator==(const StateSnapshot&, const StateSnapshot&) = default;
};

StateSnapshot snapshot(const EnvState& state);

struct Transition {
  StateSnapshot state;
  ActionCommand action;
  double reward = 0.0;
  double cost = 0.0;
  double rtg = 0.0;  // return-to-go R(t)
  double ctg = 0.0;  // cost-to-go C(t)

  friend bool operator==(const Transition&, const Transition&) = default;
};

struct Trajectory {
  int env_tag = 0;
  std::uint64_t seed = 0;
  std::vector<Transition> steps;

  double total_return() const { return steps.empty() ? 0.0 : steps.front().rtg; }
  double total_cost() const { return steps.empty() ? 0.0 : steps.front().ctg; }

  friend bool operator==(const Trajectory&, const Trajectory&) = default;
};

/// Fills rtg/ctg as suffix sums: R(T) = r(T), R(t) = r(t) + R(t+1).
void compute_to_go(Trajectory& traj);

/// True iff the stored rtg/ctg satisfy the suffix recurrences exactly.
bool to_go_consistent(const Trajectory& traj);

// ---------------------------------------------------------------------------
// Policies
// ---------------------------------------------------------------------------

using Policy = std::function<ActionCommand(const EnvState&, const EnvConfig&, Rng&)>;

/// Serves the stalest user (ties: nearest, then lowest id), flying straight
/// at it. Falls back to hovering when flying would leave too little energy to
/// hover through the remaining slots under E_max.
ActionCommand greedy_expert(const EnvState& state, const EnvConfig& cfg);

/// Uniform over the admissible action box.
ActionCommand random_action(const EnvState& state, const EnvConfig& cfg, Rng& rng);

/// Always flies the full d_max (toward the greedy target when that stays in
/// the area, away from it otherwise) and selects the greedy target.
ActionCommand max_flight_action(const EnvState& state, const EnvConfig& cfg);

Policy greedy_policy();
Policy random_policy();
Policy max_flight_policy();
Policy hover_policy();

/// Bearing from `from` to `to` in [0, 2pi).
double bearing(const Vec2& from, const Vec2& to);

/// Exhaustive search over `grid`^depth action plans on a frozen copy of the
/// environment's random stream. Returns the first action of the plan with
/// the smallest summed average AoI; ties go to the lexicographically first
/// plan. Throws std::length_error if |grid|^depth exceeds 10^6.
ActionCommand lookahead_oracle(const Environment& env, int depth,
                               std::span<const ActionCommand> grid);

/// Summed average AoI (negated rewards) of a fixed plan on a frozen stream.
double plan_objective(const Environment& env, std::span<const ActionCommand> plan);

/// Regular grid over (d, phi, xi) with the given number of points per axis.
std::vector<ActionCommand> action_grid(const EnvConfig& cfg, int n_d, int n_phi, int n_xi);

// ---------------------------------------------------------------------------
// Rollouts and dataset files
// ---------------------------------------------------------------------------

Trajectory rollout(const Policy& policy, const EnvConfig& env_cfg, const MobilityParams& mob,
                   int env_tag, std::uint64_t seed);

/// Seed of episode `index` within a dataset generated from `base_seed`.
std::uint64_t episode_seed(std::uint64_t base_seed, std::uint64_t index);

struct DatasetReport {
  std::size_t kept = 0;
  std::size_t dropped = 0;
  double mean_return = 0.0;
  double mean_cost = 0.0;
};

/// Rolls out `n_episodes` and keeps the ones with C(1) < E_max.
std::vector<Trajectory> collect_episodes(std::size_t n_episodes, const Policy& policy,
                                         const EnvConfig& env_cfg, const MobilityParams& mob,
                                         int env_tag, std::uint64_t seed, DatasetReport* report);

/// collect_episodes + write_dataset.
DatasetReport build_dataset(std::size_t n_episodes, const Policy& policy,
                            const EnvConfig& env_cfg, const MobilityParams& mob, int env_tag,
                            std::uint64_t seed, const std::filesystem::path& path);

std::string serialize_trajectory(const Trajectory& traj);
Trajectory deserialize_trajectory(const std::string& line);

/// JSONL, one trajectory per line. Written to a temporary and renamed.
void write_dataset(const std::filesystem::path& path, std::span<const Trajectory> trajs);
/// Re-verifies the to-go recurrences of every line.
std::vector<Trajectory> read_dataset(const std::filesystem::path& path);

// ---------------------------------------------------------------------------
// Token sequences and prompts
// ---------------------------------------------------------------------------

enum class TokenType : std::uint8_t { kReturn = 0, kCost = 1, kState = 2, kAction = 3 };

using ActionVec = std::array<double, 3>;

/// d -> 2d/d_max - 1, phi -> phi/pi - 1, xi unchanged.
ActionVec normalize_action(const ActionCommand& a, const EnvConfig& cfg);
/// Inverse of normalize_action, clamped into the admissible box.
ActionCommand denormalize_action(const ActionVec& a, const EnvConfig& cfg);

struct Token {
  TokenType type = TokenType::kReturn;
  int timestep = 0;
  std::variant<double, StateSnapshot, ActionVec> value;

  friend bool operator==(const Token&, const Token&) = default;
};

/// Flattened (R, C, s, a) groups. The first `prompt_steps` groups are the
/// prompt; timesteps count groups from zero across prompt and main part.
struct TokenSequence {
  std::vector<Token> tokens;
  int prompt_steps = 0;

  std::size_t steps() const { return tokens.size() / 4; }

  friend bool operator==(const TokenSequence&, const TokenSequence&) = default;
};

/// Throws std::invalid_argument unless types cycle R, C, s, a with a single
/// non-decreasing timestep per group.
void check_layout(const TokenSequence& seq);

struct PromptSegment {
  std::vector<Transition> steps;

  std::size_t size() const { return steps.size(); }
  friend bool operator==(const PromptSegment&, const PromptSegment&) = default;
};

/// Appends one (R, C, s, a) group.
void append_step(TokenSequence& seq, double rtg, double ctg, const StateSnapshot& state,
                 const ActionVec& action);

/// Window [start, start + window) of `traj`, prefixed by `prompt` if given.
/// With no start the last `window` steps are taken.
TokenSequence build_sequence(const Trajectory& traj, std::size_t window,
                             const PromptSegment* prompt, const EnvConfig& cfg,
                             std::optional<std::size_t> start = std::nullopt);

/// Uniform over (trajectory, offset) pairs with offset + K <= length.
PromptSegment sample_prompt(std::span<const Trajectory> source, std::size_t K, Rng& rng);
/// Uniform over stored segments of length >= K (the first K steps are used).
PromptSegment sample_prompt(std::span<const PromptSegment> source, std::size_t K, Rng& rng);

}  // namespace apdt
