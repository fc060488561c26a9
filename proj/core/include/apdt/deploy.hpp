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
#include <deque>
#include <functional>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "apdt/dataset.hpp"
#include "apdt/model.hpp"

namespace apdt {

/// FIFO store of K-length prompt segments with capacity O.
class OnlineBuffer {
 public:
  explicit OnlineBuffer(std::size_t capacity);

  /// Appends; evicts the oldest segment while size exceeds capacity.
  /// Returns the number of evicted segments.
  std::size_t push(PromptSegment segment);

  std::size_t size() const { return segments_.size(); }
  std::size_t capacity() const { return capacity_; }
  bool empty() const { return segments_.empty(); }
  const std::deque<PromptSegment>& segments() const { return segments_; }

  PromptSegment sample(std::size_t K, Rng& rng) const;

 private:
  std::size_t capacity_;
  std::deque<PromptSegment> segments_;
};

/// Consecutive non-overlapping K-length slices of a trajectory.
std::vector<PromptSegment> slice_segments(const Trajectory& traj, std::size_t K);

struct EpisodeMetrics {
  double avg_aoi = 0.0;  // mean over slots of the average AoI
  double total_energy = 0.0;
  bool energy_violation = false;
  std::vector<double> aoi_trace;
  std::size_t served_success = 0;
};

EpisodeMetrics episode_metrics(const Trajectory& traj, const std::vector<bool>& served,
                               const EnvConfig& cfg);

struct Targets {
  double ret = 0.0;
  double cost = 0.0;
};

/// R = best observed return moved 5% toward zero; C = 0.95 E_max.
Targets choose_targets(std::span<const Trajectory> source, const EnvConfig& cfg);
Targets choose_targets(std::span<const double> returns, const EnvConfig& cfg);

struct OnlineEpisode {
  Trajectory trajectory;
  EpisodeMetrics metrics;
  /// Conditioning values fed before each slot: r_tokens[t] = R_target -
  /// sum_{t' < t} r(t'), same for cost.
  std::vector<double> r_tokens;
  std::vector<double> c_tokens;
  std::size_t evicted = 0;
};

struct DeployOptions {
  Targets targets;
  std::size_t buffer_capacity = 500;
  /// Offline trajectories to draw prompts from while the buffer is empty.
  /// When null and the buffer is empty, online_episode refuses to act.
  const std::vector<Trajectory>* bootstrap = nullptr;
  /// Push the finished episode's segments into the buffer.
  bool update_buffer = true;
};

/// Prompt-conditioned acting for one episode. The prompt comes from the
/// buffer (or the bootstrap set while the buffer is empty); after every slot
/// the return/cost tokens are decremented by the observed reward/cost.
OnlineEpisode online_episode(const Model& model, const EnvConfig& env_cfg,
                             const MobilityParams& mob, OnlineBuffer& buffer,
                             const DeployOptions& opts, std::uint64_t seed);

/// Runs one episode for a seed and reports its metrics.
using EpisodeRunner = std::function<EpisodeMetrics(std::uint64_t seed)>;

struct EvalSummary {
  std::vector<std::uint64_t> seeds;
  std::vector<EpisodeMetrics> episodes;
  double mean_aoi = 0.0;
  double std_aoi = 0.0;
  double mean_energy = 0.0;
  double violation_rate = 0.0;
  std::size_t skipped = 0;
};

/// Episodes whose runner throws std::length_error (too many users for a
/// fixed-width encoder) are skipped and counted.
EvalSummary evaluate(const EpisodeRunner& runner, std::span<const std::uint64_t> seeds);

EpisodeRunner policy_runner(Policy policy, EnvConfig env_cfg, MobilityParams mob);
/// Sequential online deployment sharing one buffer across episodes.
EpisodeRunner model_runner(const Model& model, EnvConfig env_cfg, MobilityParams mob,
                           OnlineBuffer& buffer, DeployOptions opts);

std::vector<std::uint64_t> make_seeds(std::uint64_t base, std::size_t n);

/// Scenario with average user density rho: calibrated arrivals/departures
/// and round(rho) initial users.
struct Scenario {
  EnvConfig env;
  MobilityParams mob;
};
Scenario density_scenario(const EnvConfig& base, const MobilityParams& mob_base, double rho);

/// CSV `episode,seed,avg_aoi,total_energy_J,violated,served_success`.
void write_metrics_csv(std::ostream& out, const EvalSummary& summary);

struct AblationRow {
  double density = 0.0;
  std::string policy;
  double mean_aoi = 0.0;
  double std_aoi = 0.0;
  double violation_rate = 0.0;
  std::size_t skipped = 0;
};

struct AblationSpec {
  std::vector<double> densities;
  std::size_t episodes = 10;
  std::uint64_t seed = 0;
  EnvConfig env;
  MobilityParams mob;
  DeployOptions deploy;
};

/// Evaluates the attention model and the zero-padded model on each density
/// with identical seeds. Two rows per density (attention first).
std::vector<AblationRow> run_ablation(const Model& attention, const Model& padded,
                                      const AblationSpec& spec);

/// CSV `density,policy,mean_aoi,std_aoi,violation_rate`.
void write_ablation_csv(std::ostream& out, std::span<const AblationRow> rows);

/// Online "not converged" guard: the 10-episode moving average of episode
/// AoI improved by less than 0.5% over the previous window.
bool online_plateau(std::span<const double> episode_aoi, std::size_t window = 10,
                    double tolerance = 5e-3);

}  // namespace apdt
