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

#include <benchmark/benchmark.h>

#include "apdt/dataset.hpp"
#include "apdt/env.hpp"
#include "apdt/mobility.hpp"
#include "apdt/model.hpp"
#include "apdt/trainer.hpp"

namespace {

using namespace apdt;

void BM_EnvStep(benchmark::State& st) {
  EnvConfig cfg;
  cfg.initial_users = static_cast<int>(st.range(0));
  cfg.T = 1 << 30;
  Environment env(cfg, calibrate_density(static_cast<double>(st.range(0))), 1);
  for (auto _ : st) {
    const ActionCommand a = greedy_expert(env.state(), cfg);
    benchmark::DoNotOptimize(env.step(a));
  }
}
BENCHMARK(BM_EnvStep)->Arg(10)->Arg(20)->Arg(40);

Trajectory sample_trajectory(int T) {
  EnvConfig cfg;
  cfg.T = T;
  return rollout(greedy_policy(), cfg, MobilityParams{}, 20, 2);
}

void BM_EncodeState(benchmark::State& st) {
  const ModelConfig mc;
  const Model m = make_model(mc, {}, 3);
  const Trajectory tr = sample_trajectory(1);
  for (auto _ : st) {
    benchmark::DoNotOptimize(encode_state(tr.steps[0].state, m.params, mc, m.norm));
  }
}
BENCHMARK(BM_EncodeState);

void BM_Forward(benchmark::State& st) {
  ModelConfig mc;
  mc.d_model = static_cast<int>(st.range(0));
  mc.d_k = mc.d_model / 2;
  const Model m = make_model(mc, {}, 4);
  EnvConfig cfg;
  const Trajectory tr = sample_trajectory(mc.context_window + mc.prompt_len);
  PromptSegment prompt;
  prompt.steps.assign(tr.steps.begin(), tr.steps.begin() + mc.prompt_len);
  const TokenSequence seq = build_sequence(tr, mc.context_window, &prompt, cfg);
  for (auto _ : st) benchmark::DoNotOptimize(forward(m, seq));
}
BENCHMARK(BM_Forward)->Arg(32)->Arg(64);

void BM_ForwardBackward(benchmark::State& st) {
  ModelConfig mc;
  mc.d_model = static_cast<int>(st.range(0));
  mc.d_k = mc.d_model / 2;
  const Model m = make_model(mc, {}, 5);
  EnvConfig cfg;
  const Trajectory tr = sample_trajectory(mc.context_window);
  const TokenSequence seq = build_sequence(tr, mc.context_window, nullptr, cfg);
  ModelParams grads = zeros_like(m.params);
  for (auto _ : st) benchmark::DoNotOptimize(accumulate_gradients(m, seq, 1.0, grads));
}
BENCHMARK(BM_ForwardBackward)->Arg(32)->Arg(64);

void BM_TrainStep(benchmark::State& st) {
  EnvConfig cfg;
  cfg.T = 20;
  cfg.initial_users = 6;
  std::vector<EnvDataset> data{
      {6, collect_episodes(8, greedy_policy(), cfg, fixed_population(), 6, 6, nullptr)}};
  ModelConfig mc;
  mc.d_model = 32;
  mc.d_k = 16;
  mc.context_window = 10;
  TrainConfig tc;
  tc.batch_size = static_cast<std::size_t>(st.range(0));
  tc.max_steps = 1u << 30;
  Trainer trainer(make_model(mc, Normalizers::from_env(cfg), 7), tc, cfg);
  for (auto _ : st) benchmark::DoNotOptimize(trainer.train_step(data, data));
}
BENCHMARK(BM_TrainStep)->Arg(1)->Arg(8)->Unit(benchmark::kMillisecond);

}  // namespace

BENCHMARK_MAIN();
