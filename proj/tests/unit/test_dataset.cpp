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
#include <fstream>
#include <map>
#include <numbers>

#include "apdt/dataset.hpp"
#include "apdt/deploy.hpp"
#include "apdt/mobility.hpp"
#include "oracles.hpp"

using namespace apdt;

namespace {

Trajectory short_traj(std::vector<double> rewards, std::vector<double> costs) {
  Trajectory t;
  for (std::size_t i = 0; i < rewards.size(); ++i) {
    Transition tr;
    tr.state.t = static_cast<int>(i + 1);
    tr.reward = rewards[i];
    tr.cost = costs[i];
    t.steps.push_back(tr);
  }
  compute_to_go(t);
  return t;
}

double mean_aoi(const Trajectory& t) {
  double s = 0.0;
  for (const auto& st : t.steps) s += -st.reward;
  return s / static_cast<double>(t.steps.size());
}

}  // namespace

TEST_CASE("to-go suffix sums") {
  const auto t = short_traj({-1, -2, -3}, {400, 490, 445});
  CHECK(t.steps[0].rtg == -6);
  CHECK(t.steps[1].rtg == -5);
  CHECK(t.steps[2].rtg == -3);
  CHECK(t.steps[0].ctg == 1335);
  CHECK(t.steps[1].ctg == 935);
  CHECK(t.steps[2].ctg == 445);
  CHECK(t.total_return() == -6);
  CHECK(to_go_consistent(t));
  auto broken = t;
  broken.steps[1].rtg += 1e-12;
  CHECK_FALSE(to_go_consistent(broken));
}

TEST_CASE("rollout return equals summed reward") {
  EnvConfig c;
  const auto t = rollout(greedy_policy(), c, MobilityParams{}, 20, 4);
  double sum = 0.0;
  for (const auto& st : t.steps) sum += st.reward;
  CHECK(t.steps.size() == static_cast<std::size_t>(c.T));
  CHECK(t.total_return() == doctest::Approx(sum).epsilon(1e-12));
  CHECK(to_go_consistent(t));
}

TEST_CASE("greedy expert target choice") {
  EnvConfig c;
  SUBCASE("single user") {
    EnvState s;
    s.uav_pos = {0, 0};
    s.users.push_back({5, {30, 40}, {}, {}, 3});
    const auto a = greedy_expert(s, c);
    CHECK(a.d == doctest::Approx(50));
    CHECK(a.phi == doctest::Approx(std::atan2(40, 30)));
    CHECK(decode_user_selection(a.xi_raw, 1) == 0);
  }
  SUBCASE("tie on AoI goes to the nearer user") {
    EnvState s;
    s.uav_pos = {0, 0};
    s.users.push_back({0, {0, 10}, {}, {}, 2});
    s.users.push_back({1, {120, 0}, {}, {}, 9});
    s.users.push_back({2, {0, -50}, {}, {}, 9});
    order_users(s.users, s.uav_pos);
    const auto a = greedy_expert(s, c);
    CHECK(s.users[decode_user_selection(a.xi_raw, 3)].id == 2);
    CHECK(a.d == doctest::Approx(50));
    CHECK(a.phi == doctest::Approx(1.5 * std::numbers::pi));
  }
}

TEST_CASE("greedy expert picks a maximal-AoI user on fuzzed states") {
  EnvConfig c;
  std::mt19937_64 gen(17);
  for (int i = 0; i < 500; ++i) {
    auto s = apdt::testing::random_state(c, gen, 1 + gen() % 15);
    std::int64_t best = 0;
    for (const auto& u : s.users) best = std::max(best, u.aoi);
    const auto a = greedy_expert(s, c);
    const auto& chosen = s.users[decode_user_selection(a.xi_raw, s.users.size())];
    CHECK(chosen.aoi == best);
    for (const auto& u : s.users) {
      if (u.aoi == best) CHECK(distance(chosen.pos, s.uav_pos) <= distance(u.pos, s.uav_pos));
    }
    CHECK_NOTHROW(validate_action(a, c));
  }
}

TEST_CASE("greedy expert beats random play on every seed") {
  EnvConfig c;
  MobilityParams mob;
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const double g = mean_aoi(rollout(greedy_policy(), c, mob, 20, seed));
    const double r = mean_aoi(rollout(random_policy(), c, mob, 20, seed));
    CHECK(g <= r);
  }
}

TEST_CASE("lookahead oracle") {
  EnvConfig c;
  c.initial_users = 1;
  const MobilityParams frozen = fixed_population();

  SUBCASE("dominant fly-to-user action") {
    Environment env(c, frozen, 3);
    const auto& s = env.state();
    ActionCommand exact{std::min(c.d_max, distance(s.uav_pos, s.users[0].pos)),
                        bearing(s.uav_pos, s.users[0].pos), 0.0};
    ActionCommand away{c.d_max, std::fmod(exact.phi + std::numbers::pi, 2 * std::numbers::pi),
                       0.0};
    // Start the UAV 20 m from the user so the straight flight serves it.
    EnvConfig near = c;
    near.uav_start = {s.users[0].pos.x > 0 ? s.users[0].pos.x - 20 : s.users[0].pos.x + 20,
                      s.users[0].pos.y};
    Environment env2(near, frozen, 3);
    const auto& s2 = env2.state();
    exact = {distance(s2.uav_pos, s2.users[0].pos), bearing(s2.uav_pos, s2.users[0].pos), 0.0};
    away = {c.d_max, std::fmod(exact.phi + std::numbers::pi, 2 * std::numbers::pi), 0.0};
    const std::vector<ActionCommand> grid{away, exact};
    CHECK(lookahead_oracle(env2, 1, grid) == exact);
  }

  SUBCASE("depth-1 oracle never trails the greedy expert") {
    EnvConfig multi;
    const auto base_grid = action_grid(multi, 3, 4, 3);
    std::mt19937_64 gen(5);
    for (int i = 0; i < 100; ++i) {
      Environment env(multi, MobilityParams{}, gen());
      const ActionCommand g = greedy_expert(env.state(), multi);
      auto grid = base_grid;
      grid.push_back(g);
      const ActionCommand o = lookahead_oracle(env, 1, grid);
      const std::vector<ActionCommand> po{o}, pg{g};
      CHECK(plan_objective(env, po) <= plan_objective(env, pg));
    }
  }

  SUBCASE("depth 2 never worse than depth 1") {
    EnvConfig multi;
    multi.initial_users = 6;
    const auto grid = action_grid(multi, 2, 4, 3);
    std::mt19937_64 gen(6);
    for (int i = 0; i < 5; ++i) {
      Environment env(multi, MobilityParams{}, gen());
      auto best_two = [&](const ActionCommand& first) {
        double best = 1e300;
        for (const auto& b : grid) {
          const std::vector<ActionCommand> p{first, b};
          best = std::min(best, plan_objective(env, p));
        }
        return best;
      };
      const auto a1 = lookahead_oracle(env, 1, grid);
      const auto a2 = lookahead_oracle(env, 2, grid);
      CHECK(best_two(a2) <= best_two(a1));
    }
  }

  Environment env(c, frozen, 1);
  const auto big = action_grid(c, 10, 11, 10);
  CHECK_THROWS_AS(lookahead_oracle(env, 3, big), std::length_error);
  CHECK_THROWS_AS(lookahead_oracle(env, 0, big), std::invalid_argument);
}

TEST_CASE("all-hover data under the reference budget drops nothing") {
  EnvConfig c;
  DatasetReport rep;
  const auto trajs = collect_episodes(5, hover_policy(), c, MobilityParams{}, 20, 1, &rep);
  CHECK(rep.dropped == 0);
  CHECK(rep.kept == 5);
  for (const auto& t : trajs) CHECK(t.total_cost() == doctest::Approx(40000));
}

TEST_CASE("infeasible episodes are dropped") {
  EnvConfig c;
  c.E_max = 42000;
  DatasetReport rep;
  const auto trajs = collect_episodes(4, max_flight_policy(), c, MobilityParams{}, 20, 1, &rep);
  CHECK(rep.dropped == 4);
  CHECK(trajs.empty());
  CHECK_THROWS(collect_episodes(0, hover_policy(), c, MobilityParams{}, 20, 1, &rep));
}

TEST_CASE("JSONL round trip is lossless and keeps tags apart") {
  EnvConfig c;
  c.T = 12;
  const auto dir = apdt::testing::scratch_dir("dataset");
  std::vector<Trajectory> all;
  for (int tag : {11, 13}) {
    EnvConfig e = c;
    e.initial_users = tag;
    const auto trajs = collect_episodes(3, random_policy(), e, fixed_population(), tag, 9, nullptr);
    const auto path = dir / ("env_" + std::to_string(tag) + ".jsonl");
    write_dataset(path, trajs);
    const auto back = read_dataset(path);
    CHECK(back == trajs);
    for (const auto& t : trajs) CHECK(deserialize_trajectory(serialize_trajectory(t)) == t);
    all.insert(all.end(), back.begin(), back.end());
  }
  std::map<int, int> counts;
  for (const auto& t : all) {
    ++counts[t.env_tag];
    CHECK(t.steps.front().state.users.size() == static_cast<std::size_t>(t.env_tag));
  }
  CHECK(counts[11] == 3);
  CHECK(counts[13] == 3);
}

TEST_CASE("reading rejects tampered files with a line number") {
  EnvConfig c;
  c.T = 5;
  const auto dir = apdt::testing::scratch_dir("dataset_bad");
  const auto trajs = collect_episodes(2, hover_policy(), c, MobilityParams{}, 1, 2, nullptr);
  auto bad = trajs;
  bad[1].steps[2].rtg -= 1.0;
  std::ofstream(dir / "bad.jsonl") << serialize_trajectory(trajs[0]) << "\n"
                                   << serialize_trajectory(bad[1]) << "\n";
  try {
    read_dataset(dir / "bad.jsonl");
    FAIL("expected an error");
  } catch (const std::runtime_error& e) {
    CHECK(std::string(e.what()).find(":2:") != std::string::npos);
  }
  std::ofstream(dir / "junk.jsonl") << "{not json\n";
  CHECK_THROWS(read_dataset(dir / "junk.jsonl"));
  CHECK_THROWS(read_dataset(dir / "missing.jsonl"));
}

TEST_CASE("token layout") {
  EnvConfig c;
  c.T = 10;
  const auto traj = rollout(greedy_policy(), c, MobilityParams{}, 20, 3);
  auto seq = build_sequence(traj, 2, nullptr, c);
  REQUIRE(seq.tokens.size() == 8);
  const TokenType order[] = {TokenType::kReturn, TokenType::kCost, TokenType::kState,
                             TokenType::kAction};
  for (std::size_t i = 0; i < 8; ++i) CHECK(seq.tokens[i].type == order[i % 4]);
  CHECK_NOTHROW(check_layout(seq));

  Rng rng(1);
  const std::vector<Trajectory> src{traj};
  const auto prompt = sample_prompt(std::span<const Trajectory>(src), 5, rng);
  seq = build_sequence(traj, 2, &prompt, c, 3);
  CHECK(seq.tokens.size() == 28);
  CHECK(seq.prompt_steps == 5);
  for (std::size_t i = 0; i < 20; ++i) {
    CHECK(seq.tokens[i].type == order[i % 4]);
    if (seq.tokens[i].type == TokenType::kState) {
      CHECK(std::get<StateSnapshot>(seq.tokens[i].value) == prompt.steps[i / 4].state);
    }
  }
  CHECK(std::get<StateSnapshot>(seq.tokens[22].value) == traj.steps[3].state);
  CHECK_NOTHROW(check_layout(seq));

  auto broken = seq;
  std::swap(broken.tokens[0], broken.tokens[1]);
  CHECK_THROWS(check_layout(broken));
  broken = seq;
  broken.tokens[4].timestep = 0;
  broken.tokens[5].timestep = 0;
  CHECK_THROWS(check_layout(broken));
}

TEST_CASE("action normalisation round trip") {
  EnvConfig c;
  std::mt19937_64 gen(2);
  for (int i = 0; i < 1000; ++i) {
    const auto a = apdt::testing::random_admissible(c, gen);
    const auto v = normalize_action(a, c);
    for (double x : v) CHECK(std::abs(x) <= 1.0);
    const auto b = denormalize_action(v, c);
    CHECK(b.d == doctest::Approx(a.d));
    CHECK(b.phi == doctest::Approx(a.phi));
    CHECK(b.xi_raw == a.xi_raw);
    CHECK_NOTHROW(validate_action(b, c));
  }
  CHECK_NOTHROW(validate_action(denormalize_action({1.0, 1.0, 1.0}, c), c));
  CHECK_NOTHROW(validate_action(denormalize_action({-1.0, -1.0, -1.0}, c), c));
}

TEST_CASE("prompt sampling") {
  EnvConfig c;
  c.T = 10;
  const std::size_t K = 5;
  SUBCASE("single length-K source returns that segment") {
    c.T = 5;
    const std::vector<Trajectory> src{rollout(greedy_policy(), c, MobilityParams{}, 1, 4)};
    Rng rng(3);
    for (int i = 0; i < 20; ++i) {
      const auto p = sample_prompt(std::span<const Trajectory>(src), K, rng);
      CHECK(p.steps == src[0].steps);
    }
  }
  SUBCASE("offsets are uniform and consecutive") {
    const std::vector<Trajectory> src{rollout(greedy_policy(), c, MobilityParams{}, 1, 4)};
    Rng rng(8);
    std::vector<int> hist(K + 1, 0);
    const int n = 10000;
    for (int i = 0; i < n; ++i) {
      const auto p = sample_prompt(std::span<const Trajectory>(src), K, rng);
      const int off = p.steps.front().state.t - 1;
      for (std::size_t j = 1; j < K; ++j) {
        CHECK(p.steps[j].state.t == p.steps[j - 1].state.t + 1);
      }
      ++hist[static_cast<std::size_t>(off)];
    }
    double chi2 = 0.0;
    const double expected = static_cast<double>(n) / (K + 1);
    for (int h : hist) chi2 += (h - expected) * (h - expected) / expected;
    // chi-square with 5 degrees of freedom, p = 0.01 critical value.
    CHECK(chi2 < 15.086);
  }
  std::vector<Trajectory> none;
  Rng rng(1);
  CHECK_THROWS(sample_prompt(std::span<const Trajectory>(none), K, rng));
}
