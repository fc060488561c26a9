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

#include "apdt/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <numbers>
#include <stdexcept>

#include <json.hpp>

#include "apdt/file_util.hpp"

namespace apdt {

using nlohmann::json;

StateSnapshot snapshot(const EnvState& state) {
  StateSnapshot s;
  s.t = state.t;
  s.uav = state.uav_pos;
  s.users.reserve(state.users.size());
  for (const auto& u : state.users) s.users.push_back({u.id, u.pos, u.aoi});
  return s;
}

void compute_to_go(Trajectory& traj) {
  double r_acc = 0.0;
  double c_acc = 0.0;
  for (std::size_t i = traj.steps.size(); i-- > 0;) {
    auto& st = traj.steps[i];
    if (i + 1 == traj.steps.size()) {
      r_acc = st.reward;
      c_acc = st.cost;
    } else {
      r_acc = st.reward + r_acc;
      c_acc = st.cost + c_acc;
    }
    st.rtg = r_acc;
    st.ctg = c_acc;
  }
}

bool to_go_consistent(const Trajectory& traj) {
  Trajectory copy = traj;
  compute_to_go(copy);
  for (std::size_t i = 0; i < traj.steps.size(); ++i) {
    if (copy.steps[i].rtg != traj.steps[i].rtg || copy.steps[i].ctg != traj.steps[i].ctg) {
      return false;
    }
  }
  return true;
}

// ---------------------------------------------------------------------------

double bearing(const Vec2& from, const Vec2& to) {
  double phi = std::atan2(to.y - from.y, to.x - from.x);
  if (phi < 0.0) phi += 2.0 * std::numbers::pi;
  if (phi >= 2.0 * std::numbers::pi) phi = 0.0;
  return phi;
}

namespace {

std::size_t greedy_target(const EnvState& state) {
  if (state.users.empty()) throw std::invalid_argument("greedy_expert: empty user set");
  std::size_t best = 0;
  for (std::size_t i = 1; i < state.users.size(); ++i) {
    const auto& a = state.users[i];
    const auto& b = state.users[best];
    if (a.aoi != b.aoi) {
      if (a.aoi > b.aoi) best = i;
      continue;
    }
    const double da = distance(a.pos, state.uav_pos);
    const double db = distance(b.pos, state.uav_pos);
    if (da < db || (da == db && a.id < b.id)) best = i;
  }
  return best;
}

}  // namespace

ActionCommand greedy_expert(const EnvState& state, const EnvConfig& cfg) {
  const std::size_t idx = greedy_target(state);
  const UserRecord& target = state.users[idx];
  ActionCommand a;
  a.d = std::min(cfg.d_max, distance(state.uav_pos, target.pos));
  a.phi = bearing(state.uav_pos, target.pos);
  a.xi_raw = encode_user_selection(idx, state.users.size());

  const double slots_after = static_cast<double>(cfg.T - state.t);
  const double fly_cost = slot_energy(slot_times(a.d, cfg), cfg);
  const double projected = state.energy_spent + fly_cost + slots_after * cfg.P_h * cfg.delta;
  if (projected >= cfg.E_max) a.d = 0.0;
  return a;
}

ActionCommand random_action(const EnvState&, const EnvConfig& cfg, Rng& rng) {
  std::uniform_real_distribution<double> ud(0.0, cfg.d_max);
  std::uniform_real_distribution<double> uphi(0.0, 2.0 * std::numbers::pi);
  std::uniform_real_distribution<double> uxi(-1.0, 1.0);
  ActionCommand a;
  a.d = ud(rng);
  a.phi = uphi(rng);
  a.xi_raw = uxi(rng);
  return a;
}

ActionCommand max_flight_action(const EnvState& state, const EnvConfig& cfg) {
  const std::size_t idx = greedy_target(state);
  ActionCommand a;
  a.d = cfg.d_max;
  a.phi = bearing(state.uav_pos, state.users[idx].pos);
  a.xi_raw = encode_user_selection(idx, state.users.size());
  if (propagate_uav(state.uav_pos, a.d, a.phi, cfg).distance < cfg.d_max) {
    a.phi = std::fmod(a.phi + std::numbers::pi, 2.0 * std::numbers::pi);
  }
  return a;
}

Policy greedy_policy() {
  return [](const EnvState& s, const EnvConfig& c, Rng&) { return greedy_expert(s, c); };
}

Policy random_policy() {
  return [](const EnvState& s, const EnvConfig& c, Rng& r) { return random_action(s, c, r); };
}

Policy max_flight_policy() {
  return [](const EnvState& s, const EnvConfig& c, Rng&) { return max_flight_action(s, c); };
}

Policy hover_policy() {
  return [](const EnvState&, const EnvConfig&, Rng&) { return ActionCommand{}; };
}

double plan_objective(const Environment& env, std::span<const ActionCommand> plan) {
  Environment sim = env;
  double total = 0.0;
  for (const auto& a : plan) {
    if (sim.done()) break;
    total += -sim.step(a).reward;
  }
  return total;
}

ActionCommand lookahead_oracle(const Environment& env, int depth,
                               std::span<const ActionCommand> grid) {
  if (depth < 1 || depth > 3) throw std::invalid_argument("lookahead_oracle: depth in 1..3");
  if (grid.empty()) throw std::invalid_argument("lookahead_oracle: empty grid");
  double plans = 1.0;
  for (int i = 0; i < depth; ++i) plans *= static_cast<double>(grid.size());
  if (plans > 1e6) throw std::length_error("lookahead_oracle: plan budget exceeded");

  std::vector<std::size_t> idx(static_cast<std::size_t>(depth), 0);
  std::vector<ActionCommand> plan(idx.size());
  double best = std::numeric_limits<double>::infinity();
  std::size_t best_first = 0;
  while (true) {
    for (std::size_t i = 0; i < idx.size(); ++i) plan[i] = grid[idx[i]];
    const double obj = plan_objective(env, plan);
    if (obj < best) {
      best = obj;
      best_first = idx[0];
    }
    // Odometer with the last position varying fastest.
    std::size_t pos = idx.size();
    while (pos > 0) {
      --pos;
      if (++idx[pos] < grid.size()) break;
      idx[pos] = 0;
      if (pos == 0) return grid[best_first];
    }
  }
}

std::vector<ActionCommand> action_grid(const EnvConfig& cfg, int n_d, int n_phi, int n_xi) {
  std::vector<ActionCommand> grid;
  for (int i = 0; i < n_d; ++i) {
    const double d = n_d == 1 ? 0.0 : cfg.d_max * i / (n_d - 1);
    for (int j = 0; j < n_phi; ++j) {
      const double phi = 2.0 * std::numbers::pi * j / n_phi;
      for (int k = 0; k < n_xi; ++k) {
        const double xi = n_xi == 1 ? 0.0 : -1.0 + 2.0 * k / (n_xi - 1);
        grid.push_back({d, phi, xi});
      }
    }
  }
  return grid;
}

// ---------------------------------------------------------------------------

Trajectory rollout(const Policy& policy, const EnvConfig& env_cfg, const MobilityParams& mob,
                   int env_tag, std::uint64_t seed) {
  Environment env(env_cfg, mob, seed);
  Rng policy_rng(seed ^ 0x9e3779b97f4a7c15ULL);
  Trajectory traj;
  traj.env_tag = env_tag;
  traj.seed = seed;
  traj.steps.reserve(static_cast<std::size_t>(env_cfg.T));
  while (!env.done()) {
    const EnvState& s = env.state();
    const ActionCommand a = s.users.empty() ? ActionCommand{} : policy(s, env_cfg, policy_rng);
    Transition tr;
    tr.state = snapshot(s);
    tr.action = a;
    const StepOutcome out = env.step(a);
    tr.reward = out.reward;
    tr.cost = out.cost;
    traj.steps.push_back(std::move(tr));
  }
  compute_to_go(traj);
  return traj;
}

std::uint64_t episode_seed(std::uint64_t base_seed, std::uint64_t index) {
  // splitmix64 finaliser
  std::uint64_t z = base_seed + 0x9e3779b97f4a7c15ULL * (index + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

std::vector<Trajectory> collect_episodes(std::size_t n_episodes, const Policy& policy,
                                         const EnvConfig& env_cfg, const MobilityParams& mob,
                                         int env_tag, std::uint64_t seed, DatasetReport* report) {
  if (n_episodes == 0) throw std::invalid_argument("collect_episodes: n_episodes must be >= 1");
  std::vector<Trajectory> kept;
  DatasetReport rep;
  for (std::size_t i = 0; i < n_episodes; ++i) {
    Trajectory traj = rollout(policy, env_cfg, mob, env_tag, episode_seed(seed, i));
    if (traj.total_cost() < env_cfg.E_max) {
      rep.mean_return += traj.total_return();
      rep.mean_cost += traj.total_cost();
      kept.push_back(std::move(traj));
    } else {
      ++rep.dropped;
    }
  }
  rep.kept = kept.size();
  if (rep.kept > 0) {
    rep.mean_return /= static_cast<double>(rep.kept);
    rep.mean_cost /= static_cast<double>(rep.kept);
  }
  if (report) *report = rep;
  return kept;
}

DatasetReport build_dataset(std::size_t n_episodes, const Policy& policy,
                            const EnvConfig& env_cfg, const MobilityParams& mob, int env_tag,
                            std::uint64_t seed, const std::filesystem::path& path) {
  DatasetReport rep;
  const auto trajs = collect_episodes(n_episodes, policy, env_cfg, mob, env_tag, seed, &rep);
  write_dataset(path, trajs);
  return rep;
}

std::string serialize_trajectory(const Trajectory& traj) {
  json steps = json::array();
  for (const auto& st : traj.steps) {
    json users = json::array();
    for (const auto& u : st.state.users) {
      users.push_back({{"id", u.id}, {"pos", {u.pos.x, u.pos.y}}, {"aoi", u.aoi}});
    }
    steps.push_back({{"t", st.state.t},
                     {"uav", {st.state.uav.x, st.state.uav.y}},
                     {"users", std::move(users)},
                     {"action", {st.action.d, st.action.phi, st.action.xi_raw}},
                     {"reward", st.reward},
                     {"cost", st.cost},
                     {"rtg", st.rtg},
                     {"ctg", st.ctg}});
  }
  json j = {{"env_tag", traj.env_tag}, {"seed", traj.seed}, {"steps", std::move(steps)}};
  return j.dump();
}

Trajectory deserialize_trajectory(const std::string& line) {
  const json j = json::parse(line);
  Trajectory traj;
  traj.env_tag = j.at("env_tag").get<int>();
  traj.seed = j.at("seed").get<std::uint64_t>();
  for (const auto& js : j.at("steps")) {
    Transition st;
    st.state.t = js.at("t").get<int>();
    st.state.uav = {js.at("uav").at(0).get<double>(), js.at("uav").at(1).get<double>()};
    for (const auto& ju : js.at("users")) {
      st.state.users.push_back({ju.at("id").get<std::int64_t>(),
                                {ju.at("pos").at(0).get<double>(), ju.at("pos").at(1).get<double>()},
                                ju.at("aoi").get<std::int64_t>()});
    }
    const auto& ja = js.at("action");
    st.action = {ja.at(0).get<double>(), ja.at(1).get<double>(), ja.at(2).get<double>()};
    st.reward = js.at("reward").get<double>();
    st.cost = js.at("cost").get<double>();
    st.rtg = js.at("rtg").get<double>();
    st.ctg = js.at("ctg").get<double>();
    traj.steps.push_back(std::move(st));
  }
  return traj;
}

void write_dataset(const std::filesystem::path& path, std::span<const Trajectory> trajs) {
  std::string body;
  for (const auto& t : trajs) {
    body += serialize_trajectory(t);
    body += '\n';
  }
  write_file_atomic(path, body);
}

std::vector<Trajectory> read_dataset(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open dataset file: " + path.string());
  std::vector<Trajectory> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    Trajectory traj;
    try {
      traj = deserialize_trajectory(line);
    } catch (const json::exception& e) {
      throw std::runtime_error(path.string() + ":" + std::to_string(lineno) + ": " + e.what());
    }
    if (!to_go_consistent(traj)) {
      throw std::runtime_error(path.string() + ":" + std::to_string(lineno) +
                               ": return/cost-to-go recurrence violated");
    }
    out.push_back(std::move(traj));
  }
  return out;
}

// ---------------------------------------------------------------------------

ActionVec normalize_action(const ActionCommand& a, const EnvConfig& cfg) {
  return {2.0 * a.d / cfg.d_max - 1.0, a.phi / std::numbers::pi - 1.0, a.xi_raw};
}

ActionCommand denormalize_action(const ActionVec& a, const EnvConfig& cfg) {
  ActionCommand out;
  out.d = std::clamp((a[0] + 1.0) / 2.0 * cfg.d_max, 0.0, cfg.d_max);
  double phi = (a[1] + 1.0) * std::numbers::pi;
  phi = std::fmod(phi, 2.0 * std::numbers::pi);
  if (phi < 0.0) phi += 2.0 * std::numbers::pi;
  if (!(phi < 2.0 * std::numbers::pi)) phi = 0.0;
  out.phi = phi;
  out.xi_raw = std::clamp(a[2], -1.0, 1.0);
  return out;
}

void check_layout(const TokenSequence& seq) {
  if (seq.tokens.size() % 4 != 0) {
    throw std::invalid_argument("token sequence length is not a multiple of 4");
  }
  int prev_step = -1;
  for (std::size_t i = 0; i < seq.tokens.size(); ++i) {
    const Token& tok = seq.tokens[i];
    if (static_cast<std::size_t>(tok.type) != i % 4) {
      throw std::invalid_argument("token types must cycle R, C, s, a");
    }
    const bool payload_ok =
        (tok.type == TokenType::kReturn || tok.type == TokenType::kCost)
            ? std::holds_alternative<double>(tok.value)
            : tok.type == TokenType::kState ? std::holds_alternative<StateSnapshot>(tok.value)
                                            : std::holds_alternative<ActionVec>(tok.value);
    if (!payload_ok) throw std::invalid_argument("token payload does not match its type");
    if (i % 4 == 0) {
      if (tok.timestep < prev_step) throw std::invalid_argument("timesteps must not decrease");
      prev_step = tok.timestep;
    } else if (tok.timestep != prev_step) {
      throw std::invalid_argument("tokens of one step must share a timestep");
    }
  }
  if (seq.prompt_steps < 0 || static_cast<std::size_t>(seq.prompt_steps) > seq.steps()) {
    throw std::invalid_argument("prompt_steps exceeds sequence length");
  }
}

void append_step(TokenSequence& seq, double rtg, double ctg, const StateSnapshot& state,
                 const ActionVec& action) {
  const int ts = static_cast<int>(seq.steps());
  seq.tokens.push_back({TokenType::kReturn, ts, rtg});
  seq.tokens.push_back({TokenType::kCost, ts, ctg});
  seq.tokens.push_back({TokenType::kState, ts, state});
  seq.tokens.push_back({TokenType::kAction, ts, action});
}

TokenSequence build_sequence(const Trajectory& traj, std::size_t window,
                             const PromptSegment* prompt, const EnvConfig& cfg,
                             std::optional<std::size_t> start) {
  if (window == 0) throw std::invalid_argument("build_sequence: window must be >= 1");
  if (window > traj.steps.size()) {
    throw std::invalid_argument("build_sequence: window longer than trajectory");
  }
  const std::size_t first = start.value_or(traj.steps.size() - window);
  if (first + window > traj.steps.size()) {
    throw std::out_of_range("build_sequence: window runs past trajectory end");
  }
  TokenSequence seq;
  const std::size_t n_prompt = prompt ? prompt->size() : 0;
  seq.tokens.reserve(4 * (n_prompt + window));
  if (prompt) {
    for (const auto& st : prompt->steps) {
      append_step(seq, st.rtg, st.ctg, st.state, normalize_action(st.action, cfg));
    }
    seq.prompt_steps = static_cast<int>(n_prompt);
  }
  for (std::size_t i = first; i < first + window; ++i) {
    const auto& st = traj.steps[i];
    append_step(seq, st.rtg, st.ctg, st.state, normalize_action(st.action, cfg));
  }
  return seq;
}

PromptSegment sample_prompt(std::span<const Trajectory> source, std::size_t K, Rng& rng) {
  std::size_t total = 0;
  for (const auto& t : source) {
    if (t.steps.size() >= K) total += t.steps.size() - K + 1;
  }
  if (total == 0) throw std::invalid_argument("sample_prompt: no trajectory of length >= K");
  std::uniform_int_distribution<std::size_t> pick(0, total - 1);
  std::size_t r = pick(rng);
  for (const auto& t : source) {
    if (t.steps.size() < K) continue;
    const std::size_t n = t.steps.size() - K + 1;
    if (r < n) {
      PromptSegment seg;
      seg.steps.assign(t.steps.begin() + static_cast<std::ptrdiff_t>(r),
                       t.steps.begin() + static_cast<std::ptrdiff_t>(r + K));
      return seg;
    }
    r -= n;
  }
  throw std::logic_error("sample_prompt: unreachable");
}

PromptSegment sample_prompt(std::span<const PromptSegment> source, std::size_t K, Rng& rng) {
  std::vector<std::size_t> eligible;
  for (std::size_t i = 0; i < source.size(); ++i) {
    if (source[i].size() >= K) eligible.push_back(i);
  }
  if (eligible.empty()) throw std::invalid_argument("sample_prompt: no segment of length >= K");
  std::uniform_int_distribution<std::size_t> pick(0, eligible.size() - 1);
  const PromptSegment& src = source[eligible[pick(rng)]];
  PromptSegment seg;
  seg.steps.assign(src.steps.begin(), src.steps.begin() + static_cast<std::ptrdiff_t>(K));
  return seg;
}

}  // namespace apdt
