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
#include <numbers>
#include <set>

#include "apdt/env.hpp"
#include "apdt/mobility.hpp"
#include "oracles.hpp"

using namespace apdt;
using apdt::testing::oracle_step;
using apdt::testing::rel_err;

namespace {
constexpr double kPi = std::numbers::pi;
}

TEST_CASE("propagate_uav moves along the bearing and clamps at the walls") {
  EnvConfig c;
  auto f = propagate_uav({0, 0}, 10, 0, c);
  CHECK(f.destination.x == doctest::Approx(10));
  CHECK(f.destination.y == doctest::Approx(0));
  CHECK(f.distance == 10);

  f = propagate_uav({0, 0}, 90, kPi / 2, c);
  CHECK(f.destination.x == doctest::Approx(0).epsilon(1e-12));
  CHECK(f.destination.y == doctest::Approx(90));

  f = propagate_uav({240, 0}, 90, 0, c);
  CHECK(f.destination.x == 250);
  CHECK(f.destination.y == doctest::Approx(0));
  CHECK(f.distance == doctest::Approx(10));

  CHECK_THROWS_AS(propagate_uav({0, 0}, 91, 0, c), std::out_of_range);
  CHECK_THROWS_AS(propagate_uav({0, 0}, 10, 2 * kPi, c), std::out_of_range);
}

TEST_CASE("propagate_uav never leaves the box") {
  EnvConfig c;
  std::mt19937_64 rng(7);
  std::uniform_real_distribution<double> u(-250, 250);
  for (int i = 0; i < 2000; ++i) {
    const Vec2 p{u(rng), u(rng)};
    const auto a = apdt::testing::random_admissible(c, rng);
    const auto f = propagate_uav(p, a.d, a.phi, c);
    CHECK(std::abs(f.destination.x) <= c.x_max);
    CHECK(std::abs(f.destination.y) <= c.y_max);
    CHECK(f.distance <= a.d + 1e-9);
    CHECK(f.distance >= 0);
  }
}

TEST_CASE("slot times and energy") {
  EnvConfig c;
  auto t = slot_times(90, c);
  CHECK(t.flight == doctest::Approx(3.0));
  CHECK(t.hover == doctest::Approx(2.0));
  CHECK(slot_energy(t, c) == doctest::Approx(490));
  t = slot_times(0, c);
  CHECK(t.flight == 0.0);
  CHECK(t.hover == 5.0);
  CHECK(slot_energy(t, c) == doctest::Approx(400));
  t = slot_times(45, c);
  CHECK(t.flight == doctest::Approx(1.5));
  CHECK(t.hover == doctest::Approx(3.5));
  CHECK(slot_energy(t, c) == doctest::Approx(445));
  for (double d = 0; d <= c.d_max; d += 0.5) CHECK(slot_times(d, c).hover > 0);
  CHECK_THROWS(slot_energy({1.0, 1.0}, c));
}

TEST_CASE("channel gain and rate") {
  EnvConfig c;
  const double h0 = channel_gain({0, 0}, {0, 0}, c);
  CHECK(h0 == doctest::Approx(1e-5 / 3600));
  const double h200 = channel_gain({0, 0}, {200, 0}, c);
  CHECK(h200 == doctest::Approx(1e-5 / 43600));
  double prev = h0;
  for (double r = 1; r < 600; r += 1) {
    const double h = channel_gain({0, 0}, {r, 0}, c);
    CHECK(h < prev);
    prev = h;
  }
  // Independent evaluation of B log2(1 + h P / N).
  CHECK(achievable_rate(h0, c) ==
        doctest::Approx(1e6 * std::log(1 + h0 * 0.5 / 1e-11) / std::log(2.0)));
  CHECK(achievable_rate(h0, c) == doctest::Approx(7.13e6).epsilon(1e-3));
  CHECK(achievable_rate(h200, c) == doctest::Approx(3.64e6).epsilon(2e-3));
  CHECK(achievable_rate(0.0, c) == 0.0);
}

TEST_CASE("service success") {
  EnvConfig c;
  const double h0 = channel_gain({0, 0}, {0, 0}, c);
  const double h200 = channel_gain({0, 0}, {200, 0}, c);
  CHECK(service_success(4.5, h0, c));
  CHECK_FALSE(service_success(4.5, h200, c));
  CHECK(service_success(c.delta, 1.0, c));
  // Monotone in distance for fixed hover.
  for (double hover : {2.0, 3.5, 5.0}) {
    bool seen_fail = false;
    for (double r = 0; r < 300; r += 1) {
      const bool ok = service_success(hover, channel_gain({0, 0}, {r, 0}, c), c);
      if (seen_fail) CHECK_FALSE(ok);
      if (!ok) seen_fail = true;
    }
  }
}

TEST_CASE("update_aoi") {
  std::vector<UserRecord> us(3);
  us[0].id = 0;
  us[0].aoi = 3;
  us[1].id = 1;
  us[1].aoi = 7;
  us[2].id = 2;
  us[2].aoi = 7;
  auto served = update_aoi(us, 1, true);
  CHECK(served[0].aoi == 4);
  CHECK(served[1].aoi == 1);
  CHECK(served[2].aoi == 8);
  auto failed = update_aoi(us, 1, false);
  CHECK(failed[1].aoi == 8);
  CHECK(failed[0].aoi == 4);
  CHECK_THROWS_AS(update_aoi(us, 42, true), std::invalid_argument);
}

TEST_CASE("average_aoi") {
  auto mk = [](std::vector<std::int64_t> a) {
    std::vector<UserRecord> us;
    for (auto v : a) us.push_back({static_cast<std::int64_t>(us.size()), {}, {}, {}, v});
    return us;
  };
  CHECK(average_aoi(mk({1, 3, 5})) == 3.0);
  CHECK(average_aoi(mk({9})) == 9.0);
  CHECK(average_aoi(mk({1, 1, 1, 1})) == 1.0);
  CHECK_THROWS(average_aoi(std::vector<UserRecord>{}));
}

TEST_CASE("decode_user_selection") {
  CHECK(decode_user_selection(-1, 5) == 0);
  CHECK(decode_user_selection(1, 5) == 4);
  CHECK(decode_user_selection(0, 5) == 2);
  for (std::size_t k = 1; k <= 12; ++k) {
    std::set<std::size_t> seen;
    for (int i = 0; i <= 4000; ++i) seen.insert(decode_user_selection(-1.0 + i / 2000.0, k));
    CHECK(seen.size() == k);
    for (std::size_t j = 0; j < k; ++j) {
      CHECK(decode_user_selection(encode_user_selection(j, k), k) == j);
    }
  }
  CHECK_THROWS(decode_user_selection(0, 0));
}

TEST_CASE("step composition examples") {
  EnvConfig c;
  const MobilityParams frozen = fixed_population();
  Rng rng(1);

  SUBCASE("hover over a fresh overhead user") {
    EnvConfig small = c;
    small.N_u = 1e3;
    EnvState s;
    s.uav_pos = {0, 0};
    s.users.push_back({0, {0, 0}, {}, {}, 1});
    s.next_user_id = 1;
    const auto out = step(s, {0, 0, 0}, small, frozen, rng);
    CHECK(out.served_ok);
    CHECK(out.reward == -1.0);
    CHECK(out.cost == doctest::Approx(400));
  }
  SUBCASE("unreachable target") {
    EnvState s;
    s.uav_pos = {-240, -240};
    s.users.push_back({0, {240, 240}, {}, {}, 4});
    s.users.push_back({1, {200, 240}, {}, {}, 2});
    s.next_user_id = 2;
    const auto out = step(s, {0, 0, -1}, c, frozen, rng);
    CHECK_FALSE(out.served_ok);
    CHECK(out.reward == doctest::Approx(-(5.0 + 3.0) / 2));
    for (const auto& u : out.next_state.users) {
      CHECK(u.aoi == (u.id == 0 ? 5 : 3));
    }
  }
}

TEST_CASE("energy feasibility") {
  EnvConfig c;
  EnvState s;
  CHECK(energy_feasible(s, c));
  s.energy_spent = c.E_max;
  CHECK_FALSE(energy_feasible(s, c));
  Environment env(c, fixed_population(), 3);
  while (!env.done()) env.step({0, 0, 0});
  CHECK(env.state().energy_spent == doctest::Approx(40000));
  CHECK(energy_feasible(env.state(), c));
}

TEST_CASE("step matches the scalar oracle on fuzzed states") {
  EnvConfig c;
  MobilityParams mob;
  std::mt19937_64 gen(99);
  for (int i = 0; i < 300; ++i) {
    const std::size_t n = 1 + gen() % 12;
    const EnvState s = apdt::testing::random_state(c, gen, n);
    ActionCommand a = apdt::testing::random_admissible(c, gen);
    if (i % 3 == 0) {  // bias toward near-overhead services
      a.d = std::min(c.d_max, distance(s.uav_pos, s.users.front().pos));
      a.phi = std::fmod(std::atan2(s.users.front().pos.y - s.uav_pos.y,
                                   s.users.front().pos.x - s.uav_pos.x) + 2 * kPi, 2 * kPi);
      a.xi_raw = -1;
    }
    Rng rng(gen());
    const auto out = step(s, a, c, mob, rng);
    const auto o = oracle_step(s, a, c);
    CHECK(rel_err(out.reward, o.reward) <= 1e-9);
    CHECK(rel_err(out.cost, o.cost) <= 1e-9);
    CHECK(out.served_ok == o.served_ok);
    CHECK(*out.served_user == o.target);
    CHECK(out.next_state.uav_pos.x == doctest::Approx(o.dest_x));
    CHECK(out.next_state.uav_pos.y == doctest::Approx(o.dest_y));
    const auto arrival = std::max<std::int64_t>(1, std::llround(-o.reward));
    for (const auto& u : out.next_state.users) {
      auto it = o.aoi.find(u.id);
      if (it != o.aoi.end()) {
        CHECK(u.aoi == it->second);
      } else {
        CHECK(u.aoi == arrival);
      }
    }
  }
}

TEST_CASE("episode invariants: AoI recurrence, reward identity, energy identity") {
  EnvConfig c;
  MobilityParams mob;
  Environment env(c, mob, 5);
  Rng pol(11);
  std::map<std::int64_t, std::int64_t> since;  // slots since last success, by id
  for (const auto& u : env.state().users) since[u.id] = 0;
  std::map<std::int64_t, std::int64_t> base;
  for (const auto& u : env.state().users) base[u.id] = u.aoi;
  double cost_sum = 0.0;
  double prev_energy = 0.0;
  while (!env.done()) {
    const EnvState before = env.state();
    const auto a = apdt::testing::random_admissible(c, pol);
    const auto out = env.step(a);
    cost_sum += out.cost;
    CHECK(out.reward <= -1.0);
    CHECK(out.cost > 0.0);
    CHECK(env.state().energy_spent >= prev_energy);
    prev_energy = env.state().energy_spent;
    if (!before.users.empty()) {
      auto users = update_aoi(before.users, out.served_user, out.served_ok);
      CHECK(out.reward == -average_aoi(users));
    }
    for (auto& [id, n] : since) {
      if (out.served_ok && out.served_user && *out.served_user == id) {
        n = 0;
        base[id] = 1;
      } else {
        ++n;
      }
    }
    for (const auto& u : env.state().users) {
      if (!since.count(u.id)) {
        since[u.id] = 0;
        base[u.id] = u.aoi;
      }
      CHECK(u.aoi == base[u.id] + since[u.id]);
      CHECK(u.aoi >= 1);
      CHECK(std::abs(u.pos.x) <= c.x_max);
      CHECK(std::abs(u.pos.y) <= c.y_max);
    }
  }
  CHECK(rel_err(cost_sum, env.state().energy_spent) <= 1e-9);
}

TEST_CASE("empty user set hovers and carries the reward") {
  EnvConfig c;
  c.initial_users = 0;
  MobilityParams none = fixed_population();
  Environment env(c, none, 1);
  const auto out = env.step({30, 1.0, 0.5});
  CHECK(out.cost == doctest::Approx(400));
  CHECK(out.reward == -1.0);
  CHECK(env.state().uav_pos == c.uav_start);
}

TEST_CASE("step is deterministic for equal seeds and actions") {
  EnvConfig c;
  MobilityParams mob;
  Environment a(c, mob, 77), b(c, mob, 77);
  Rng pa(3), pb(3);
  while (!a.done()) {
    const auto xa = apdt::testing::random_admissible(c, pa);
    const auto xb = apdt::testing::random_admissible(c, pb);
    const auto oa = a.step(xa);
    const auto ob = b.step(xb);
    CHECK(oa.next_state == ob.next_state);
    CHECK(oa.reward == ob.reward);
    CHECK(oa.cost == ob.cost);
  }
}

TEST_CASE("config validation") {
  EnvConfig c;
  CHECK_NOTHROW(validate(c));
  c.V_max = 10;  // 90 / 10 = 9 s > delta
  CHECK_THROWS_AS(validate(c), std::invalid_argument);
  c = EnvConfig{};
  c.H = 0;
  CHECK_THROWS_AS(validate(c), std::invalid_argument);
  c = EnvConfig{};
  CHECK_THROWS(step(EnvState{}, {100, 0, 0}, c, MobilityParams{}, *std::make_unique<Rng>(1)));
}
