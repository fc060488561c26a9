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

#include <doctest.h>

#include <stdexcept>

#include <cmath>

#include "apdt/env.hpp"
#include "apdt/mobility.hpp"

using namespace apdt;

namespace {

UserRecord walker(Vec2 vel, Vec2 mean_vel) {
  UserRecord u;
  u.id = 3;
  u.vel = vel;
  u.mean_vel = mean_vel;
  u.aoi = 6;
  return u;
}

}  // namespace

TEST_CASE("gauss-markov limits") {
  EnvConfig c;
  Rng rng(1);
  MobilityParams p;
  p.alpha = 1.0;
  const auto u = walker({1.5, -0.5}, {2, 0});
  auto v = gm_step(u, p, c, rng);
  CHECK(v.vel == u.vel);
  CHECK(v.aoi == 6);

  p.alpha = 0.0;
  p.speed_std = 0.0;
  v = gm_step(u, p, c, rng);
  CHECK(v.vel == u.mean_vel);

  // alpha = 0 with noise: vel' - mean_vel is the drawn noise, same stream.
  p.speed_std = 1.0;
  Rng r1(9), r2(9);
  v = gm_step(u, p, c, r1);
  std::normal_distribution<double> w(0.0, 1.0);
  const double wx = w(r2);
  const double wy = w(r2);
  CHECK(v.vel.x == doctest::Approx(u.mean_vel.x + wx));
  CHECK(v.vel.y == doctest::Approx(u.mean_vel.y + wy));
}

TEST_CASE("long-run mean velocity equals the drift target") {
  EnvConfig c;
  c.x_max = c.y_max = 1e12;  // keep walls out of the way
  for (double alpha : {0.0, 0.5, 0.85}) {
    MobilityParams p;
    p.alpha = alpha;
    Rng rng(123);
    auto u = walker({0, 0}, {2, -1});
    const int n = 100000;
    double sx = 0.0, sy = 0.0;
    for (int i = 0; i < n; ++i) {
      u = gm_step(u, p, c, rng);
      sx += u.vel.x;
      sy += u.vel.y;
    }
    // Stationary std is speed_std; AR(1) effective sample size n(1-a)/(1+a).
    const double se = p.speed_std * std::sqrt((1 + alpha) / ((1 - alpha) * n));
    CHECK(std::abs(sx / n - 2.0) < 3 * se + 2.0 / n);
    CHECK(std::abs(sy / n + 1.0) < 3 * se + 1.0 / n);
  }
}

TEST_CASE("reflection keeps users inside and mobility never touches AoI") {
  EnvConfig c;
  MobilityParams p;
  p.mean_speed = 25;
  p.speed_std = 10;
  Rng rng(4);
  std::vector<UserRecord> us;
  for (int i = 0; i < 30; ++i) us.push_back(spawn_user(i, 1 + i, p, c, rng));
  for (int t = 0; t < 500; ++t) {
    for (auto& u : us) {
      const auto before = u.aoi;
      u = gm_step(u, p, c, rng);
      CHECK(u.aoi == before);
      CHECK(std::abs(u.pos.x) <= c.x_max);
      CHECK(std::abs(u.pos.y) <= c.y_max);
    }
  }
}

TEST_CASE("arrival AoI rule") {
  CHECK(arrival_aoi(4.2) == 4);
  CHECK(arrival_aoi(4.5) == 5);
  CHECK(arrival_aoi(0.0) == 1);
  CHECK(arrival_aoi(0.4) == 1);
  EnvConfig c;
  MobilityParams p;
  p.arrival_rate = 5;
  p.departure_prob = 0;
  Rng rng(2);
  std::int64_t next = 0;
  auto us = arrivals_departures({}, p, 4.2, c, rng, next);
  for (const auto& u : us) CHECK(u.aoi == 4);
  CHECK(next == static_cast<std::int64_t>(us.size()));
}

TEST_CASE("frozen population is invariant") {
  EnvConfig c;
  const MobilityParams p = fixed_population();
  Rng rng(8);
  std::vector<UserRecord> us;
  for (int i = 0; i < 10; ++i) us.push_back(spawn_user(i, 2, p, c, rng));
  std::int64_t next = 10;
  for (int t = 0; t < 200; ++t) {
    auto out = arrivals_departures(us, p, 3.0, c, rng, next);
    CHECK(out == us);
  }
  CHECK(next == 10);
}

TEST_CASE("density calibration") {
  CHECK(calibrate_density(20).arrival_rate == doctest::Approx(0.4));
  CHECK(calibrate_density(15).arrival_rate == doctest::Approx(0.3));
  CHECK(calibrate_density(20).departure_prob == 0.02);
  CHECK_THROWS(calibrate_density(0));

  // Monte-Carlo: mean user count over long episodes starting at K = rho.
  for (double rho : {15.0, 25.0}) {
    EnvConfig c;
    c.T = 1000;
    c.rho = rho;
    c.initial_users = static_cast<int>(rho);
    const MobilityParams p = calibrate_density(rho);
    double total = 0.0;
    for (int ep = 0; ep < 10; ++ep) {
      Rng rng(1000 + ep);
      std::vector<UserRecord> us;
      std::int64_t next = 0;
      for (int i = 0; i < c.initial_users; ++i) us.push_back(spawn_user(next++, 1, p, c, rng));
      double sum = 0.0;
      for (int t = 0; t < c.T; ++t) {
        sum += static_cast<double>(us.size());
        us = arrivals_departures(std::move(us), p, 2.0, c, rng, next);
      }
      total += sum / c.T;
    }
    CHECK(std::abs(total / 10 - rho) <= 0.1 * rho);
  }
}

TEST_CASE("mobility is reproducible for a fixed seed") {
  EnvConfig c;
  MobilityParams p;
  auto run = [&](std::uint64_t seed) {
    Rng rng(seed);
    std::vector<UserRecord> us;
    std::int64_t next = 0;
    for (int i = 0; i < 10; ++i) us.push_back(spawn_user(next++, 1, p, c, rng));
    for (int t = 0; t < 100; ++t) {
      for (auto& u : us) u = gm_step(u, p, c, rng);
      us = arrivals_departures(std::move(us), p, 3.0, c, rng, next);
    }
    return us;
  };
  CHECK(run(5) == run(5));
  CHECK_FALSE(run(5) == run(6));
}

TEST_CASE("mobility validation") {
  MobilityParams p;
  p.alpha = 1.5;
  CHECK_THROWS_AS(validate(p), std::invalid_argument);
  p = {};
  p.departure_prob = 2;
  CHECK_THROWS_AS(validate(p), std::invalid_argument);
  p = {};
  p.arrival_rate = -1;
  CHECK_THROWS_AS(validate(p), std::invalid_argument);
}
