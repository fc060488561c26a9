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

#include "apdt/mobility.hpp"

#include <cmath>
#include <numbers>
#include <stdexcept>

namespace apdt {
namespace {

// Mirrors coordinate into [-limit, limit], flipping the sign of the
// associated velocity components once per bounce.
void reflect(double& coord, double& vel, double& mean_vel, double limit) {
  while (coord > limit || coord < -limit) {
    if (coord > limit) {
      coord = 2.0 * limit - coord;
    } else {
      coord = -2.0 * limit - coord;
    }
    vel = -vel;
    mean_vel = -mean_vel;
  }
}

}  // namespace

void validate(const MobilityParams& p) {
  if (!(p.alpha >= 0.0 && p.alpha <= 1.0)) {
    throw std::invalid_argument("mobility: alpha must lie in [0, 1]");
  }
  if (!(p.mean_speed >= 0.0) || !(p.speed_std >= 0.0)) {
    throw std::invalid_argument("mobility: speeds must be non-negative");
  }
  if (!(p.arrival_rate >= 0.0)) {
    throw std::invalid_argument("mobility: arrival_rate must be non-negative");
  }
  if (!(p.departure_prob >= 0.0 && p.departure_prob <= 1.0)) {
    throw std::invalid_argument("mobility: departure_prob must lie in [0, 1]");
  }
}

UserRecord gm_step(const UserRecord& user, const MobilityParams& p, const EnvConfig& cfg,
                   Rng& rng) {
  double wx = 0.0;
  double wy = 0.0;
  if (p.speed_std > 0.0) {
    std::normal_distribution<double> noise(0.0, p.speed_std);
    wx = noise(rng);
    wy = noise(rng);
  }
  const double a = p.alpha;
  const double s = std::sqrt(std::max(0.0, 1.0 - a * a));

  UserRecord out = user;
  out.vel.x = a * user.vel.x + (1.0 - a) * user.mean_vel.x + s * wx;
  out.vel.y = a * user.vel.y + (1.0 - a) * user.mean_vel.y + s * wy;
  out.pos.x = user.pos.x + out.vel.x * cfg.delta;
  out.pos.y = user.pos.y + out.vel.y * cfg.delta;
  reflect(out.pos.x, out.vel.x, out.mean_vel.x, cfg.x_max);
  reflect(out.pos.y, out.vel.y, out.mean_vel.y, cfg.y_max);
  return out;
}

UserRecord spawn_user(std::int64_t id, std::int64_t aoi, const MobilityParams& p,
                      const EnvConfig& cfg, Rng& rng) {
  std::uniform_real_distribution<double> ux(-cfg.x_max, cfg.x_max);
  std::uniform_real_distribution<double> uy(-cfg.y_max, cfg.y_max);
  std::uniform_real_distribution<double> heading(0.0, 2.0 * std::numbers::pi);
  UserRecord u;
  u.id = id;
  u.pos.x = ux(rng);
  u.pos.y = uy(rng);
  const double h = heading(rng);
  u.mean_vel = {p.mean_speed * std::cos(h), p.mean_speed * std::sin(h)};
  u.vel = u.mean_vel;
  u.aoi = aoi;
  return u;
}

std::int64_t arrival_aoi(double avg_aoi_now) {
  const auto rounded = static_cast<std::int64_t>(std::llround(avg_aoi_now));
  return std::max<std::int64_t>(1, rounded);
}

std::vector<UserRecord> arrivals_departures(std::vector<UserRecord> users,
                                            const MobilityParams& p, double avg_aoi_now,
                                            const EnvConfig& cfg, Rng& rng,
                                            std::int64_t& next_id) {
  std::vector<UserRecord> out;
  out.reserve(users.size());
  if (p.departure_prob > 0.0) {
    std::bernoulli_distribution leave(p.departure_prob);
    for (auto& u : users) {
      if (!leave(rng)) out.push_back(std::move(u));
    }
  } else {
    out = std::move(users);
  }

  if (p.arrival_rate > 0.0) {
    std::poisson_distribution<int> arrivals(p.arrival_rate);
    const int n = arrivals(rng);
    const std::int64_t aoi = arrival_aoi(avg_aoi_now);
    for (int i = 0; i < n; ++i) {
      out.push_back(spawn_user(next_id++, aoi, p, cfg, rng));
    }
  }
  return out;
}

MobilityParams calibrate_density(double rho, double departure_prob, const MobilityParams& base) {
  if (!(rho > 0.0)) throw std::invalid_argument("calibrate_density: rho must be positive");
  MobilityParams p = base;
  p.departure_prob = departure_prob;
  p.arrival_rate = rho * departure_prob;
  validate(p);
  return p;
}

MobilityParams fixed_population(const MobilityParams& base) {
  MobilityParams p = base;
  p.arrival_rate = 0.0;
  p.departure_prob = 0.0;
  return p;
}

}  // namespace apdt
