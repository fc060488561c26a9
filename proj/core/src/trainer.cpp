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

#include "apdt/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <ostream>
#include <sstream>
#include <stdexcept>

namespace apdt {

std::string to_string(OptimizerKind k) { return k == OptimizerKind::kAdam ? "adam" : "sgd"; }

OptimizerKind optimizer_from_string(std::string_view s) {
  if (s == "adam") return OptimizerKind::kAdam;
  if (s == "sgd") return OptimizerKind::kSgd;
  throw std::invalid_argument("unknown optimizer: " + std::string(s));
}

void validate(const TrainConfig& cfg) {
  if (!(cfg.learning_rate >= 0.0)) throw std::invalid_argument("train: learning_rate must be >= 0");
  if (cfg.optimizer == OptimizerKind::kAdam) {
    if (!(cfg.beta1 >= 0.0 && cfg.beta1 < 1.0) || !(cfg.beta2 >= 0.0 && cfg.beta2 < 1.0)) {
      throw std::invalid_argument("train: decay rates must lie in [0, 1)");
    }
    if (!(cfg.epsilon > 0.0)) throw std::invalid_argument("train: epsilon must be positive");
  }
  if (!(cfg.grad_clip_norm > 0.0)) throw std::invalid_argument("train: grad_clip_norm must be > 0");
  if (cfg.batch_size == 0) throw std::invalid_argument("train: batch_size must be >= 1");
}

OptimizerState make_optimizer_state(const ModelParams& params) {
  return {zeros_like(params), zeros_like(params), 0};
}

void optimizer_update(std::span<double> x, std::span<const double> grad, std::span<double> m,
                      std::span<double> v, std::uint64_t t, const TrainConfig& cfg) {
  const double lr = cfg.learning_rate;
  if (cfg.optimizer == OptimizerKind::kSgd) {
    for (std::size_t i = 0; i < x.size(); ++i) x[i] -= lr * grad[i];
    return;
  }
  const double b1 = cfg.beta1;
  const double b2 = cfg.beta2;
  const double c1 = 1.0 - std::pow(b1, static_cast<double>(t));
  const double c2 = 1.0 - std::pow(b2, static_cast<double>(t));
  for (std::size_t i = 0; i < x.size(); ++i) {
    m[i] = b1 * m[i] + (1.0 - b1) * grad[i];
    v[i] = b2 * v[i] + (1.0 - b2) * grad[i] * grad[i];
    const double mhat = m[i] / c1;
    const double vhat = v[i] / c2;
    x[i] -= lr * mhat / (std::sqrt(vhat) + cfg.epsilon);
  }
}

void optimizer_step(ModelParams& params, const ModelParams& grads, OptimizerState& state,
                    const TrainConfig& cfg) {
  bool finite = true;
  grads.for_each([&](std::string_view, const Tensor& g) {
    for (std::size_t i = 0; i < g.size(); ++i) finite = finite && std::isfinite(g[i]);
  });
  if (!finite) throw std::domain_error("optimizer_step: non-finite gradient");

  std::vector<Tensor*> xs, ms, vs;
  std::vector<const Tensor*> gs;
  params.for_each([&](std::string_view, Tensor& t) { xs.push_back(&t); });
  state.m.for_each([&](std::string_view, Tensor& t) { ms.push_back(&t); });
  state.v.for_each([&](std::string_view, Tensor& t) { vs.push_back(&t); });
  grads.for_each([&](std::string_view, const Tensor& t) { gs.push_back(&t); });
  if (xs.size() != gs.size() || xs.size() != ms.size()) {
    throw std::invalid_argument("optimizer_step: parameter/gradient layout mismatch");
  }
  ++state.t;
  for (std::size_t k = 0; k < xs.size(); ++k) {
    if (xs[k]->size() != gs[k]->size()) {
      throw std::invalid_argument("optimizer_step: shape mismatch");
    }
    optimizer_update(xs[k]->span(), gs[k]->span(), ms[k]->span(), vs[k]->span(), state.t, cfg);
  }
}

double global_norm(const ModelParams& grads) {
  double acc = 0.0;
  grads.for_each([&](std::string_view, const Tensor& g) {
    for (std::size_t i = 0; i < g.size(); ++i) acc += g[i] * g[i];
  });
  return std::sqrt(acc);
}

double clip_global_norm(ModelParams& grads, double max_norm) {
  const double norm = global_norm(grads);
  if (norm > max_norm) {
    const double s = max_norm / norm;
    grads.for_each([&](std::string_view, Tensor& g) {
      for (std::size_t i = 0; i < g.size(); ++i) g[i] *= s;
    });
  }
  return norm;
}

// ---------------------------------------------------------------------------

Trainer::Trainer(Model model, TrainConfig tcfg, EnvConfig env_cfg)
    : model_(std::move(model)),
      tcfg_(tcfg),
      env_cfg_(std::move(env_cfg)),
      opt_(make_optimizer_state(model_.params)),
      rng_(tcfg.seed) {
  validate(tcfg_);
}

Trainer::Trainer(Model model, TrainConfig tcfg, EnvConfig env_cfg, const TrainerState& state)
    : Trainer(std::move(model), tcfg, std::move(env_cfg)) {
  opt_ = state.opt;
  step_ = state.step;
  loss_history_ = state.loss_history;
  std::istringstream in(state.rng_state);
  in >> rng_;
  if (!in) throw std::runtime_error("trainer: cannot restore random stream state");
}

TrainerState Trainer::state() const {
  TrainerState s;
  s.opt = opt_;
  s.step = step_;
  std::ostringstream out;
  out << rng_;
  s.rng_state = out.str();
  s.loss_history = loss_history_;
  return s;
}

TokenSequence Trainer::sample_sequence(const Trajectory& traj,
                                       std::span<const Trajectory> prompt_source,
                                       Rng& rng) const {
  const std::size_t len = traj.steps.size();
  const std::size_t window =
      std::min(len, static_cast<std::size_t>(model_.config.context_window));
  std::uniform_int_distribution<std::size_t> start_dist(0, len - window);
  const std::size_t start = start_dist(rng);
  const auto K = static_cast<std::size_t>(model_.config.prompt_len);
  if (K == 0) return build_sequence(traj, window, nullptr, env_cfg_, start);
  const PromptSegment prompt = sample_prompt(prompt_source, K, rng);
  return build_sequence(traj, window, &prompt, env_cfg_, start);
}

namespace {

struct BatchLoss {
  double loss = 0.0;
  ModelParams grads;
};

std::vector<TokenSequence> draw_batch(const Trainer& trainer, std::span<const EnvDataset> data,
                                      std::span<const EnvDataset> prompts, std::size_t batch_size,
                                      Rng& rng) {
  if (data.empty()) throw std::invalid_argument("pretrain: no datasets");
  if (prompts.size() != data.size()) {
    throw std::invalid_argument("pretrain: need one prompt set per dataset");
  }
  std::vector<TokenSequence> batch;
  batch.reserve(data.size() * batch_size);
  for (std::size_t n = 0; n < data.size(); ++n) {
    const auto& trajs = data[n].trajectories;
    if (trajs.empty()) {
      throw std::invalid_argument("pretrain: empty dataset for env tag " +
                                  std::to_string(data[n].env_tag));
    }
    std::uniform_int_distribution<std::size_t> pick(0, trajs.size() - 1);
    for (std::size_t b = 0; b < batch_size; ++b) {
      const Trajectory& traj = trajs[pick(rng)];
      batch.push_back(trainer.sample_sequence(traj, prompts[n].trajectories, rng));
    }
  }
  return batch;
}

BatchLoss batch_loss(const Model& model, const std::vector<TokenSequence>& batch,
                     bool want_grads) {
  std::size_t n_actions = 0;
  for (const auto& s : batch) n_actions += s.steps() - static_cast<std::size_t>(s.prompt_steps);
  if (n_actions == 0) throw std::invalid_argument("pretrain: batch has no action targets");
  const double scale = 1.0 / (3.0 * static_cast<double>(n_actions));
  BatchLoss out;
  out.grads = zeros_like(model.params);
  double sse = 0.0;
  for (const auto& seq : batch) {
    if (want_grads) {
      sse += accumulate_gradients(model, seq, scale, out.grads);
    } else {
      const ForwardResult res = forward(model, seq);
      const Tensor pred = main_rows(res, seq.prompt_steps);
      sse += mse_loss(pred, expert_actions(seq)) * static_cast<double>(pred.size());
    }
  }
  out.loss = sse * scale;
  return out;
}

}  // namespace

TrainStepRecord Trainer::train_step(std::span<const EnvDataset> data,
                                    std::span<const EnvDataset> prompts) {
  const std::vector<TokenSequence> batch = draw_batch(*this, data, prompts, tcfg_.batch_size, rng_);
  BatchLoss bl = batch_loss(model_, batch, true);
  if (!std::isfinite(bl.loss)) throw std::runtime_error("pretrain: non-finite loss");
  TrainStepRecord rec;
  rec.step = step_ + 1;
  rec.loss = bl.loss;
  rec.grad_norm = clip_global_norm(bl.grads, tcfg_.grad_clip_norm);
  rec.lr = tcfg_.learning_rate;
  optimizer_step(model_.params, bl.grads, opt_, tcfg_);
  ++step_;
  loss_history_.push_back(rec.loss);
  return rec;
}

double Trainer::evaluate(std::span<const EnvDataset> data, std::span<const EnvDataset> prompts,
                         std::uint64_t seed) const {
  Rng rng(seed);
  const auto batch = draw_batch(*this, data, prompts, tcfg_.batch_size, rng);
  return batch_loss(model_, batch, false).loss;
}

bool Trainer::plateaued() const {
  const std::size_t w = tcfg_.plateau_window;
  if (w == 0 || loss_history_.size() < 2 * w) return false;
  const auto end = loss_history_.end();
  double recent = 0.0;
  double before = 0.0;
  for (auto it = end - static_cast<std::ptrdiff_t>(w); it != end; ++it) recent += *it;
  for (auto it = end - static_cast<std::ptrdiff_t>(2 * w); it != end - static_cast<std::ptrdiff_t>(w);
       ++it) {
    before += *it;
  }
  recent /= static_cast<double>(w);
  before /= static_cast<double>(w);
  return before - recent < tcfg_.plateau_tolerance * before;
}

std::vector<TrainStepRecord> Trainer::run(
    std::span<const EnvDataset> data, std::span<const EnvDataset> prompts,
    const std::function<void(const TrainStepRecord&)>& on_step,
    const std::function<void(const EvalRecord&)>& on_eval) {
  std::vector<TrainStepRecord> curve;
  const std::uint64_t eval_seed = tcfg_.seed ^ 0x5eed5eed5eed5eedULL;
  while (step_ < tcfg_.max_steps && !plateaued()) {
    const ModelParams last_good = model_.params;
    const OptimizerState last_opt = opt_;
    TrainStepRecord rec;
    try {
      rec = train_step(data, prompts);
    } catch (const std::runtime_error&) {
      model_.params = last_good;
      opt_ = last_opt;
      throw;
    } catch (const std::domain_error& e) {
      model_.params = last_good;
      opt_ = last_opt;
      throw std::runtime_error(std::string("pretrain: ") + e.what());
    }
    curve.push_back(rec);
    if (on_step) on_step(rec);
    if (tcfg_.eval_every > 0 && step_ % tcfg_.eval_every == 0) {
      const double ev = evaluate(data, prompts, eval_seed);
      if (!std::isfinite(ev)) {
        throw std::runtime_error("pretrain: non-finite held-out loss at step " +
                                 std::to_string(step_));
      }
      if (on_eval) on_eval({step_, ev});
    }
  }
  return curve;
}

PretrainResult pretrain(Model model, std::span<const EnvDataset> data,
                        std::span<const EnvDataset> prompts, const TrainConfig& tcfg,
                        const EnvConfig& env_cfg) {
  Trainer trainer(std::move(model), tcfg, env_cfg);
  PretrainResult res;
  res.curve = trainer.run(data, prompts, {}, [&](const EvalRecord& e) { res.evals.push_back(e); });
  res.model = trainer.model();
  return res;
}

void write_telemetry_header(std::ostream& out) { out << "step,loss,grad_norm,lr\n"; }

void write_telemetry_row(std::ostream& out, const TrainStepRecord& rec) {
  out << rec.step << ',' << std::setprecision(17) << rec.loss << ',' << rec.grad_norm << ','
      << rec.lr << '\n';
}

}  // namespace apdt
