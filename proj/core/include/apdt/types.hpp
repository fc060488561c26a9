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

#include <cmath>
#include <cstdint>
#include <optional>
#include <random>
#include <vector>

namespace apdt {

using Rng = std::mt19937_64;

struct Vec2 {
  double x = 0.0;
  double y = 0.0;

  friend bool operator==(const Vec2&, const Vec2&) = default;
};

using Position2D = Vec2;

inline double distance(const Vec2& a, const Vec2& b) {
  const double dx = a.x - b.x;
  const double dy = a.y - b.y;
  return std::sqrt(dx * dx + dy * dy);
}

struct UserRecord {
  std::int64_t id = 0;
  Vec2 pos;
  Vec2 vel;
  // Gauss-Markov drift target; reflected together with vel at the walls.
  Vec2 mean_vel;
  std::int64_t aoi = 1;

  friend bool operator==(const UserRecord&, const UserRecord&) = default;
};

/// The CMDP state s(t): UAV position and the in-area user set.
///
/// Users are kept in canonical priority order (AoI descending, then
/// horizontal distance to the UAV ascending, then id ascending). The
/// continuous user-selection code indexes into this order.
struct EnvState {
  int t = 1;
  Vec2 uav_pos;
  std::vector<UserRecord> users;
  double energy_spent = 0.0;
  // Reward carried through slots with an empty user set.
  double last_reward = -1.0;
  std::int64_t next_user_id = 0;

  friend bool operator==(const EnvState&, const EnvState&) = default;
};

struct ActionCommand {
  double d = 0.0;
  double phi = 0.0;
  double xi_raw = 0.0;

  friend bool operator==(const ActionCommand&, const ActionCommand&) = default;
};

struct StepOutcome {
  EnvState next_state;
  double reward = 0.0;
  double cost = 0.0;
  std::optional<std::int64_t> served_user;
  bool served_ok = false;
  double effective_distance = 0.0;
};

/// Physical constants of one scenario. Defaults are the reference
/// 500 m x 500 m, 100-slot urban setting.
struct EnvConfig {
  double x_max = 250.0;
  double y_max = 250.0;
  int T = 100;
  double delta = 5.0;
  double H = 60.0;
  double d_max = 90.0;
  double V_max = 30.0;
  double P_f = 110.0;
  double P_h = 80.0;
  double E_max = 90000.0;
  double B = 1e6;
  double P_u = 0.5;
  // -140 dBm/Hz over 1 MHz.
  double sigma2 = 1e-11;
  double N_u = 3e7;
  double beta0 = 1e-5;
  double rho = 20.0;
  Vec2 uav_start{100.0, 100.0};
  int initial_users = 20;
  std::uint64_t seed = 0;

  friend bool operator==(const EnvConfig&, const EnvConfig&) = default;
};

struct MobilityParams {
  double alpha = 0.85;
  double mean_speed = 2.0;
  double speed_std = 1.0;
  double arrival_rate = 0.4;
  double departure_prob = 0.02;

  friend bool operator==(const MobilityParams&, const MobilityParams&) = default;
};

}  // namespace apdt
