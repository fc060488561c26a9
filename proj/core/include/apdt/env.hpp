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
#include <optional>
#include <span>
#include <vector>

#include "apdt/types.hpp"

namespace apdt {

/// Throws std::invalid_argument when a constant is non-physical.
void validate(const EnvConfig& cfg);

struct Flight {
  Vec2 destination;
  double distance = 0.0;  // effective, after clamping
};

Flight propagate_uav(const Vec2& pos, double d, double phi, const EnvConfig& cfg);

struct SlotTimes {
  double flight = 0.0;
  double hover = 0.0;
};

SlotTimes slot_times(double d_effective, const EnvConfig& cfg);
double slot_energy(const SlotTimes& times, const EnvConfig& cfg);

double channel_gain(const Vec2& uav_pos, const Vec2& user_pos, const EnvConfig& cfg);
double achievable_rate(double h, const EnvConfig& cfg);
bool service_success(double hover_time, double h, const EnvConfig& cfg);

std::vector<UserRecord> update_aoi(std::vector<UserRecord> users,
                                   std::optional<std::int64_t> served_user, bool served_ok);

double average_aoi(std::span<const UserRecord> users);

std::size_t decode_user_selection(double xi_raw, std::size_t k);
/// Centre of the code interval that decodes to `index`.
double encode_user_selection(std::size_t index, std::size_t k);

/// Sorts users into the canonical priority order relative to `uav_pos`.
void order_users(std::vector<UserRecord>& users, const Vec2& uav_pos);

/// Checks the action against C3/C4 and the code range; throws on violation.
void validate_action(const ActionCommand& action, const EnvConfig& cfg);

/// Fresh episode: UAV at uav_start, cfg.initial_users users spawned
/// uniformly in the area with AoI 1.
EnvState initial_state(const EnvConfig& cfg, const MobilityParams& mob, Rng& rng);

/// One slot of the CMDP transition. Effects within the slot: decode the
/// target, fly, serve at the hover position, update AoI, then move users and
/// apply departures/arrivals. The reward is the negative mean AoI after the
/// update and before arrivals.
StepOutcome step(const EnvState& state, const ActionCommand& action, const EnvConfig& cfg,
                 const MobilityParams& mob, Rng& rng);

bool energy_feasible(const EnvState& state, const EnvConfig& cfg);

/// Convenience owner of (config, state, random stream) for rollouts.
/// Copying an Environment freezes the mobility stream for what-if search.
class Environment {
 public:
  Environment(EnvConfig cfg, const MobilityParams& mob, std::uint64_t seed);

  const EnvState& state() const { return state_; }
  const EnvConfig& config() const { return cfg_; }
  const MobilityParams& mobility() const { return mob_; }
  const Rng& rng() const { return rng_; }
  bool done() const { return state_.t > cfg_.T; }

  StepOutcome step(const ActionCommand& action);

 private:
  EnvConfig cfg_;
  MobilityParams mob_;
  EnvState state_;
  Rng rng_;
};

}  // namespace apdt
