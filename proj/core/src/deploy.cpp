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

#include "apdt/deploy.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <limits>
#include <ostream>
#include <stdexcept>

#include "apdt/mobility.hpp"

namespace apdt {

OnlineBuffer::OnlineBuffer(std::size_t capacity) : capacity_(capacity) {
  if (capacity == 0) throw std::invalid_argument("OnlineBuffer: capacity must be >= 1");
}

std::size_t OnlineBuffer::push(PromptSegment segment) {
  segments_.push_back(std::move(segment));
  std::size_t evicted = 0;
  while (segments_.size() > capacity_) {
    segments_.pop_front();
    ++evicted;
  }
  return evicted;
}

PromptSegment OnlineBuffer::sample(std::size_t K, Rng& rng) const {
  const std::vector<PromptSegment> view(segments_.begin(), segments_.end());
  return sample_prompt(std::span<const PromptSegment>(view), K, rng);
}

std::vector<PromptSegment> slice_segments(const Trajectory& traj, std::size_t K) {
  std::vector<PromptSegment> out;
  if (K == 0) return out;
  for (std::size_t start = 0; start + K <= traj.steps.size(); start += K) {
    PromptSegment seg;
    seg.steps.assign(traj.steps.begin() + static_cast<std::ptrdiff_t>(start),
                     traj.steps.begin() + static_cast<std::ptrdiff_t>(start + K));
    out.push_back(std::move(seg));
  }
  return out;
}

EpisodeMetrics episode_metrics(const Trajectory& traj, const std::vector<bool>& served,
                               const EnvConfig& cfg) {
  EpisodeMetrics m;
  double energy = 0.0;
  double aoi_sum = 0.0;
  for (const auto& st : traj.steps) {
    m.aoi_trace.push_back(-st.reward);
    aoi_sum += -st.reward;
    energy += st.cost;
  }
  for (bool ok : served) m.served_success += ok ? 1 : 0;
  m.avg_aoi = traj.steps.empty() ? 0.0 : aoi_sum / static_cast<double>(traj.steps.size());
  m.total_energy = energy;
  m.energy_violation = energy >= cfg.E_max;
  return m;
}

Targets choose_targets(std::span<const double> returns, const EnvConfig& cfg) {
  if (returns.empty()) throw std::invalid_argument("choose_targets: empty source");
  const double best = *std::max_element(returns.begin(), returns.end());
  return {best + 0.05 * std::abs(best), 0.95 * cfg.E_max};
}

Targets choose_targets(std::span<const Trajectory> source, const EnvConfig& cfg) {
  std::vector<double> returns;
  returns.reserve(source.size());
  for (const auto& t : source) returns.push_back(t.total_return());
  return choose_targets(std::span<const double>(returns), cfg);
}

OnlineEpisode online_episode(const Model& model, const EnvConfig& env_cfg,
                             const MobilityParams& mob, OnlineBuffer& buffer,
                             const DeployOptions& opts, std::uint64_t seed) {
  const auto K = static_cast<std::size_t>(model.config.prompt_len);
  if (K > 0 && buffer.empty() && opts.bootstrap == nullptr) {
    throw std::logic_error("online_episode: prompt buffer is empty and no bootstrap source given");
  }
  Rng prompt_rng(seed ^ 0xa0761d6478bd642fULL);
  std::optional<PromptSegment> prompt;
  if (K > 0) {
    prompt = buffer.empty() ? sample_prompt(*opts.bootstrap, K, prompt_rng)
                            : buffer.sample(K, prompt_rng);
  }

  Environment env(env_cfg, mob, seed);
  OnlineEpisode ep;
  Trajectory& traj = ep.trajectory;
  traj.env_tag = static_cast<int>(std::lround(env_cfg.rho));
  traj.seed = seed;
  std::vector<Transition> conditioned;  // the online sequence with running R, C tokens
  std::vector<bool> served;
  double R = opts.targets.ret;
  double C = opts.targets.cost;
  const auto window = static_cast<std::size_t>(model.config.context_window);

  while (!env.done()) {
    const StateSnapshot s = snapshot(env.state());
    ep.r_tokens.push_back(R);
    ep.c_tokens.push_back(C);

    TokenSequence seq;
    if (prompt) {
      for (const auto& st : prompt->steps) {
        append_step(seq, st.rtg, st.ctg, st.state, normalize_action(st.action, env_cfg));
      }
      seq.prompt_steps = static_cast<int>(K);
    }
    const std::size_t first = conditioned.size() + 1 > window ? conditioned.size() + 1 - window : 0;
    for (std::size_t i = first; i < conditioned.size(); ++i) {
      const auto& st = conditioned[i];
      append_step(seq, st.rtg, st.ctg, st.state, normalize_action(st.action, env_cfg));
    }
    append_step(seq, R, C, s, ActionVec{0.0, 0.0, 0.0});

    const ForwardResult res = forward(model, seq);
    const std::size_t last = res.actions.rows() - 1;
    const ActionCommand a =
        denormalize_action({res.actions(last, 0), res.actions(last, 1), res.actions(last, 2)},
                           env_cfg);
    const StepOutcome out = env.step(a);

    Transition tr;
    tr.state = s;
    tr.action = a;
    tr.reward = out.reward;
    tr.cost = out.cost;
    tr.rtg = R;
    tr.ctg = C;
    conditioned.push_back(tr);
    traj.steps.push_back(tr);
    served.push_back(out.served_ok);

    R -= out.reward;
    C -= out.cost;
  }
  compute_to_go(traj);
  ep.metrics = episode_metrics(traj, served, env_cfg);

  if (opts.update_buffer && K > 0) {
    Trajectory online;
    online.steps = std::move(conditioned);
    for (auto& seg : slice_segments(online, K)) ep.evicted += buffer.push(std::move(seg));
  }
  return ep;
}

EvalSummary evaluate(const EpisodeRunner& runner, std::span<const std::uint64_t> seeds) {
  if (seeds.empty()) throw std::invalid_argument("evaluate: need at least one episode");
  EvalSummary s;
  for (auto seed : seeds) {
    try {
      s.episodes.push_back(runner(seed));
      s.seeds.push_back(seed);
    } catch (const std::length_error&) {
      ++s.skipped;
    }
  }
  const auto n = static_cast<double>(s.episodes.size());
  if (s.episodes.empty()) return s;
  for (const auto& e : s.episodes) {
    s.mean_aoi += e.avg_aoi;
    s.mean_energy += e.total_energy;
    s.violation_rate += e.energy_violation ? 1.0 : 0.0;
  }
  s.mean_aoi /= n;
  s.mean_energy /= n;
  s.violation_rate /= n;
  double var = 0.0;
  for (const auto& e : s.episodes) var += (e.avg_aoi - s.mean_aoi) * (e.avg_aoi - s.mean_aoi);
  s.std_aoi = s.episodes.size() > 1 ? std::sqrt(var / (n - 1.0)) : 0.0;
  return s;
}

EpisodeRunner policy_runner(Policy policy, EnvConfig env_cfg, MobilityParams mob) {
  return [policy = std::move(policy), env_cfg = std::move(env_cfg), mob](std::uint64_t seed) {
    Environment env(env_cfg, mob, seed);
    Rng policy_rng(seed ^ 0x9e3779b97f4a7c15ULL);
    Trajectory traj;
    std::vector<bool> served;
    while (!env.done()) {
      const EnvState& s = env.state();
      const ActionCommand a = s.users.empty() ? ActionCommand{} : policy(s, env_cfg, policy_rng);
      const StepOutcome out = env.step(a);
      Transition tr;
      tr.reward = out.reward;
      tr.cost = out.cost;
      traj.steps.push_back(std::move(tr));
      served.push_back(out.served_ok);
    }
    return episode_metrics(traj, served, env_cfg);
  };
}

EpisodeRunner model_runner(const Model& model, EnvConfig env_cfg, MobilityParams mob,
                           OnlineBuffer& buffer, DeployOptions opts) {
  return [&model, &buffer, env_cfg = std::move(env_cfg), mob, opts](std::uint64_t seed) {
    return online_episode(model, env_cfg, mob, buffer, opts, seed).metrics;
  };
}

std::vector<std::uint64_t> make_seeds(std::uint64_t base, std::size_t n) {
  std::vector<std::uint64_t> seeds(n);
  for (std::size_t i = 0; i < n; ++i) seeds[i] = episode_seed(base, i);
  return seeds;
}

Scenario density_scenario(const EnvConfig& base, const MobilityParams& mob_base, double rho) {
  Scenario sc;
  sc.env = base;
  sc.env.rho = rho;
  sc.env.initial_users = static_cast<int>(std::lround(rho));
  const double dp = mob_base.departure_prob > 0.0 ? mob_base.departure_prob : 0.02;
  sc.mob = calibrate_density(rho, dp, mob_base);
  return sc;
}

void write_metrics_csv(std::ostream& out, const EvalSummary& summary) {
  out << "episode,seed,avg_aoi,total_energy_J,violated,served_success\n";
  out << std::setprecision(17);
  for (std::size_t i = 0; i < summary.episodes.size(); ++i) {
    const auto& e = summary.episodes[i];
    out << i << ',' << summary.seeds[i] << ',' << e.avg_aoi << ',' << e.total_energy << ','
        << (e.energy_violation ? 1 : 0) << ',' << e.served_success << '\n';
  }
}

std::vector<AblationRow> run_ablation(const Model& attention, const Model& padded,
                                      const AblationSpec& spec) {
  if (attention.config.encoder != StateEncoder::kAttention ||
      padded.config.encoder != StateEncoder::kPadded) {
    throw std::invalid_argument("run_ablation: expected one attention and one padded model");
  }
  std::vector<AblationRow> rows;
  for (std::size_t i = 0; i < spec.densities.size(); ++i) {
    const double rho = spec.densities[i];
    const Scenario sc = density_scenario(spec.env, spec.mob, rho);
    const auto seeds = make_seeds(spec.seed + i, spec.episodes);
    for (const Model* m : {&attention, &padded}) {
      OnlineBuffer buffer(spec.deploy.buffer_capacity);
      const EvalSummary s = evaluate(model_runner(*m, sc.env, sc.mob, buffer, spec.deploy), seeds);
      // An all-skipped density has no statistics to report.
      const double nan = std::numeric_limits<double>::quiet_NaN();
      const bool none = s.episodes.empty();
      rows.push_back({rho, to_string(m->config.encoder), none ? nan : s.mean_aoi,
                      none ? nan : s.std_aoi, none ? nan : s.violation_rate, s.skipped});
    }
  }
  return rows;
}

void write_ablation_csv(std::ostream& out, std::span<const AblationRow> rows) {
  out << "density,policy,mean_aoi,std_aoi,violation_rate\n";
  out << std::setprecision(17);
  for (const auto& r : rows) {
    out << r.density << ',' << r.policy << ',' << r.mean_aoi << ',' << r.std_aoi << ','
        << r.violation_rate << '\n';
  }
}

bool online_plateau(std::span<const double> episode_aoi, std::size_t window, double tolerance) {
  if (window == 0 || episode_aoi.size() < 2 * window) return false;
  const std::size_t n = episode_aoi.size();
  double recent = 0.0;
  double before = 0.0;
  for (std::size_t i = n - window; i < n; ++i) recent += episode_aoi[i];
  for (std::size_t i = n - 2 * window; i < n - window; ++i) before += episode_aoi[i];
  recent /= static_cast<double>(window);
  before /= static_cast<double>(window);
  return before - recent < tolerance * before;
}

}  // namespace apdt
