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

#include "apdt/env.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>
#include <stdexcept>
#include <string>

#include "apdt/mobility.hpp"

namespace apdt {

void validate(const EnvConfig& cfg) {
  auto positive = [](double v, const char* name) {
    if (!(v > 0.0) || !std::isfinite(v)) {
      throw std::invalid_argument(std::string("env config: ") + name + " must be positive");
    }
  };
  positive(cfg.x_max, "x_max");
  positive(cfg.y_max, "y_max");
  positive(cfg.delta, "delta");
  positive(cfg.H, "H");
  positive(cfg.d_max, "d_max");
  positive(cfg.V_max, "V_max");
  positive(cfg.P_f, "P_f");
  positive(cfg.P_h, "P_h");
  positive(cfg.E_max, "E_max");
  positive(cfg.B, "B");
  positive(cfg.P_u, "P_u");
  positive(cfg.sigma2, "sigma2");
  positive(cfg.N_u, "N_u");
  positive(cfg.beta0, "beta0");
  positive(cfg.rho, "rho");
  if (cfg.T < 1) throw std::invalid_argument("env config: T must be at least 1");
  if (cfg.initial_users < 0) throw std::invalid_argument("env config: initial_users < 0");
  if (!(cfg.d_max / cfg.V_max < cfg.delta)) {
    throw std::invalid_argument("env config: d_max / V_max must be below delta");
  }
  if (std::abs(cfg.uav_start.x) > cfg.x_max || std::abs(cfg.uav_start.y) > cfg.y_max) {
    throw std::invalid_argument("env config: uav_start outside the service area");
  }
}

Flight propagate_uav(const Vec2& pos, double d, double phi, const EnvConfig& cfg) {
  if (!(d >= 0.0 && d <= cfg.d_max)) {
    throw std::out_of_range("propagate_uav: flight distance outside [0, d_max]");
  }
  if (!(phi >= 0.0 && phi < 2.0 * std::numbers::pi)) {
    throw std::out_of_range("propagate_uav: flight angle outside [0, 2pi)");
  }
  Vec2 target{pos.x + d * std::cos(phi), pos.y + d * std::sin(phi)};
  Vec2 clamped{std::clamp(target.x, -cfg.x_max, cfg.x_max),
               std::clamp(target.y, -cfg.y_max, cfg.y_max)};
  if (clamped == target) return {target, d};
  return {clamped, std::min(cfg.d_max, distance(pos, clamped))};
}

SlotTimes slot_times(double d_effective, const EnvConfig& cfg) {
  if (!(d_effective >= 0.0 && d_effective <= cfg.d_max)) {
    throw std::out_of_range("slot_times: distance outside [0, d_max]");
  }
  const double flight = d_effective / cfg.V_max;
  return {flight, cfg.delta - flight};
}

double slot_energy(const SlotTimes& times, const EnvConfig& cfg) {
  if (std::abs(times.flight + times.hover - cfg.delta) > 1e-9) {
    throw std::invalid_argument("slot_energy: flight + hover must equal delta");
  }
  return cfg.P_f * times.flight + cfg.P_h * times.hover;
}

double channel_gain(const Vec2& uav_pos, const Vec2& user_pos, const EnvConfig& cfg) {
  const double dx = uav_pos.x - user_pos.x;
  const double dy = uav_pos.y - user_pos.y;
  return cfg.beta0 / (cfg.H * cfg.H + dx * dx + dy * dy);
}

double achievable_rate(double h, const EnvConfig& cfg) {
  return cfg.B * std::log2(1.0 + h * cfg.P_u / cfg.sigma2);
}

bool service_success(double hover_time, double h, const EnvConfig& cfg) {
  if (!(hover_time > 0.0)) return false;
  return cfg.N_u / hover_time <= achievable_rate(h, cfg);
}

std::vector<UserRecord> update_aoi(std::vector<UserRecord> users,
                                   std::optional<std::int64_t> served_user, bool served_ok) {
  if (served_user) {
    const bool known = std::any_of(users.begin(), users.end(),
                                   [&](const UserRecord& u) { return u.id == *served_user; });
    if (!known) throw std::invalid_argument("update_aoi: unknown served user id");
  }
  for (auto& u : users) {
    if (served_ok && served_user && u.id == *served_user) {
      u.aoi = 1;
    } else {
      u.aoi += 1;
    }
  }
  return users;
}

double average_aoi(std::span<const UserRecord> users) {
  if (users.empty()) throw std::invalid_argument("average_aoi: empty user set");
  double sum = 0.0;
  for (const auto& u : users) sum += static_cast<double>(u.aoi);
  return sum / static_cast<double>(users.size());
}

std::size_t decode_user_selection(double xi_raw, std::size_t k) {
  if (k == 0) throw std::invalid_argument("decode_user_selection: k must be >= 1");
  if (k == 1) return 0;
  const double pos = (std::clamp(xi_raw, -1.0, 1.0) + 1.0) / 2.0 * static_cast<double>(k - 1);
  const double idx = std::round(pos);
  return std::min(k - 1, static_cast<std::size_t>(std::max(0.0, idx)));
}

double encode_user_selection(std::size_t index, std::size_t k) {
  if (index >= k) throw std::out_of_range("encode_user_selection: index >= k");
  if (k == 1) return 0.0;
  return 2.0 * static_cast<double>(index) / static_cast<double>(k - 1) - 1.0;
}

void order_users(std::vector<UserRecord>& users, const Vec2& uav_pos) {
  std::sort(users.begin(), users.end(), [&](const UserRecord& a, const UserRecord& b) {
    if (a.aoi != b.aoi) return a.aoi > b.aoi;
    const double da = distance(a.pos, uav_pos);
    const double db = distance(b.pos, uav_pos);
    if (da != db) return da < db;
    return a.id < b.id;
  });
}

void validate_action(const ActionCommand& action, const EnvConfig& cfg) {
  if (!(action.d >= 0.0 && action.d <= cfg.d_max)) {
    throw std::out_of_range("action: d outside [0, d_max]");
  }
  if (!(action.phi >= 0.0 && action.phi < 2.0 * std::numbers::pi)) {
    throw std::out_of_range("action: phi outside [0, 2pi)");
  }
  if (!(action.xi_raw >= -1.0 && action.xi_raw <= 1.0)) {
    throw std::out_of_range("action: xi_raw outside [-1, 1]");
  }
}

EnvState initial_state(const EnvConfig& cfg, const MobilityParams& mob, Rng& rng) {
  EnvState s;
  s.t = 1;
  s.uav_pos = cfg.uav_start;
  s.users.reserve(static_cast<std::size_t>(cfg.initial_users));
  for (int i = 0; i < cfg.initial_users; ++i) {
    s.users.push_back(spawn_user(s.next_user_id++, 1, mob, cfg, rng));
  }
  order_users(s.users, s.uav_pos);
  return s;
}

StepOutcome step(const EnvState& state, const ActionCommand& action, const EnvConfig& cfg,
                 const MobilityParams& mob, Rng& rng) {
  if (state.t > cfg.T) throw std::logic_error("step: episode already finished");
  validate_action(action, cfg);

  StepOutcome out;
  EnvState next = state;

  if (state.users.empty()) {
    // Nobody to serve: hover, keep paying, carry the last reward.
    const SlotTimes times = slot_times(0.0, cfg);
    out.cost = slot_energy(times, cfg);
    out.reward = state.last_reward;
    std::vector<UserRecord> none;
    next.users = arrivals_departures(std::move(none), mob, 1.0, cfg, rng, next.next_user_id);
  } else {
    const std::size_t idx = decode_user_selection(action.xi_raw, state.users.size());
    const UserRecord& target = state.users[idx];

    const Flight flight = propagate_uav(state.uav_pos, action.d, action.phi, cfg);
    const SlotTimes times = slot_times(flight.distance, cfg);
    out.cost = slot_energy(times, cfg);
    out.effective_distance = flight.distance;
    next.uav_pos = flight.destination;

    const double h = channel_gain(flight.destination, target.pos, cfg);
    out.served_user = target.id;
    out.served_ok = service_success(times.hover, h, cfg);

    std::vector<UserRecord> users = update_aoi(state.users, target.id, out.served_ok);
    const double avg = average_aoi(users);
    out.reward = -avg;

    for (auto& u : users) u = gm_step(u, mob, cfg, rng);
    next.users = arrivals_departures(std::move(users), mob, avg, cfg, rng, next.next_user_id);
  }

  order_users(next.users, next.uav_pos);
  next.energy_spent = state.energy_spent + out.cost;
  next.last_reward = out.reward;
  next.t = state.t + 1;
  out.next_state = std::move(next);
  return out;
}

bool energy_feasible(const EnvState& state, const EnvConfig& cfg) {
  return state.energy_spent < cfg.E_max;
}

Environment::Environment(EnvConfig cfg, const MobilityParams& mob, std::uint64_t seed)
    : cfg_(std::move(cfg)), mob_(mob), rng_(seed) {
  validate(cfg_);
  validate(mob_);
  state_ = initial_state(cfg_, mob_, rng_);
}

StepOutcome Environment::step(const ActionCommand& action) {
  StepOutcome out = apdt::step(state_, action, cfg_, mob_, rng_);
  state_ = out.next_state;
  return out;
}

}  // namespace apdt
