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

#include <cstdlib>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include "apdt/config.hpp"
#include "commands.hpp"

namespace {

using namespace apdt;
using namespace apdt::cli;

struct Globals {
  std::string config_path;
  std::optional<std::uint64_t> seed;
};

ExperimentConfig resolve_config(const Globals& g) {
  ExperimentConfig cfg = g.config_path.empty() ? ExperimentConfig{} : load_config(g.config_path);
  apply_seed_override(cfg, std::getenv("APDT_SEED"));
  if (g.seed) set_seed(cfg, *g.seed);
  validate(cfg);
  return cfg;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"UAV data-collection decision transformer"};
  app.require_subcommand(1);
  Globals g;
  app.add_option("--config", g.config_path, "TOML experiment config")->check(CLI::ExistingFile);
  app.add_option("--seed", g.seed, "Seed (overrides config and APDT_SEED)");

  GenDataOptions gen;
  std::string gen_out;
  auto* gen_cmd = app.add_subcommand("gen-data", "Roll out an expert and write JSONL datasets");
  gen_cmd->add_option("--episodes", gen.episodes, "Episodes per environment");
  gen_cmd->add_option("--policy", gen.policy, "greedy or random")
      ->check(CLI::IsMember({"greedy", "random"}));
  gen_cmd->add_option("--env-tags", gen.env_tags, "User counts, one dataset each")->delimiter(',');
  gen_cmd->add_option("--out", gen_out, "Output directory");

  PretrainOptions pre;
  std::string pre_data, pre_out, pre_resume, pre_tel;
  auto* pre_cmd = app.add_subcommand("pretrain", "Offline pre-training");
  pre_cmd->add_option("--data", pre_data, "Dataset directory");
  pre_cmd->add_option("--out", pre_out, "Checkpoint path");
  pre_cmd->add_option("--resume", pre_resume, "Checkpoint to resume from");
  pre_cmd->add_option("--telemetry", pre_tel, "Loss CSV path");
  pre_cmd->add_option("--steps", pre.steps, "Override train.max_steps");

  DeployCmdOptions dep;
  std::string dep_ckpt, dep_data, dep_out;
  auto* dep_cmd = app.add_subcommand("deploy", "Online prompt-conditioned deployment");
  dep_cmd->add_option("--checkpoint", dep_ckpt, "Model checkpoint");
  dep_cmd->add_option("--data", dep_data, "Offline datasets (bootstrap prompts and targets)");
  dep_cmd->add_option("--episodes", dep.episodes, "Episodes per density");
  dep_cmd->add_option("--density", dep.densities, "User densities")->delimiter(',');
  dep_cmd->add_option("--out", dep_out, "Output directory");

  EvalOptions ev;
  std::string ev_ckpt, ev_data, ev_out;
  std::optional<std::size_t> ev_episodes;
  std::optional<double> ev_density;
  auto* ev_cmd = app.add_subcommand("eval", "Evaluate a policy");
  ev_cmd->add_option("--policy", ev.policy, "greedy, random, max-flight, hover or apdt")
      ->required()
      ->check(CLI::IsMember({"greedy", "random", "max-flight", "hover", "apdt"}));
  ev_cmd->add_option("--checkpoint", ev_ckpt, "Model checkpoint (apdt)");
  ev_cmd->add_option("--data", ev_data, "Offline datasets (apdt)");
  ev_cmd->add_option("--episodes", ev_episodes, "Episodes");
  ev_cmd->add_option("--density", ev_density, "User density");
  ev_cmd->add_option("--out", ev_out, "Metrics CSV path");

  GradCheckOptions gc;
  auto* gc_cmd = app.add_subcommand("grad-check", "Finite-difference check of all gradients");
  gc_cmd->add_option("--d-model", gc.d_model, "Model width")->check(CLI::PositiveNumber);
  gc_cmd->add_option("--layers", gc.n_layers, "Blocks")->check(CLI::PositiveNumber);
  gc_cmd->add_option("--tolerance", gc.tolerance, "Maximum relative error");

  AblateOptions ab;
  std::string ab_attn, ab_pad, ab_data, ab_out;
  std::optional<std::size_t> ab_episodes;
  auto* ab_cmd = app.add_subcommand("ablate", "Attention versus zero-padded encoder");
  ab_cmd->add_option("--checkpoint-attn", ab_attn, "Attention-encoder checkpoint")->required();
  ab_cmd->add_option("--checkpoint-padded", ab_pad, "Zero-padded checkpoint")->required();
  ab_cmd->add_option("--densities", ab.densities, "User densities")
      ->delimiter(',')
      ->required();
  ab_cmd->add_option("--episodes", ab_episodes, "Episodes per density");
  ab_cmd->add_option("--data", ab_data, "Offline datasets");
  ab_cmd->add_option("--out", ab_out, "Output directory");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  }

  try {
    const ExperimentConfig cfg = resolve_config(g);
    const auto or_default = [](const std::string& v, const std::filesystem::path& d) {
      return v.empty() ? d : std::filesystem::path(v);
    };
    const auto& paths = cfg.paths;

    if (*gen_cmd) {
      if (gen_cmd->count("--episodes") == 0) gen.episodes = cfg.data.episodes;
      if (gen.policy.empty()) gen.policy = cfg.data.policy;
      if (gen.env_tags.empty()) gen.env_tags = cfg.data.env_tags;
      gen.out_dir = or_default(gen_out, paths.data_dir);
      return cmd_gen_data(cfg, gen);
    }
    if (*pre_cmd) {
      pre.data_dir = or_default(pre_data, paths.data_dir);
      pre.out = or_default(pre_out, paths.checkpoint);
      if (!pre_resume.empty()) pre.resume = pre_resume;
      pre.telemetry = or_default(pre_tel, paths.output_dir / "loss.csv");
      return cmd_pretrain(cfg, pre);
    }
    if (*dep_cmd) {
      dep.checkpoint = or_default(dep_ckpt, paths.checkpoint);
      dep.data_dir = or_default(dep_data, paths.data_dir);
      dep.out_dir = or_default(dep_out, paths.output_dir);
      if (dep_cmd->count("--episodes") == 0) dep.episodes = cfg.deploy.episodes;
      if (dep.densities.empty()) dep.densities = {cfg.deploy.density};
      return cmd_deploy(cfg, dep);
    }
    if (*ev_cmd) {
      if (!ev_ckpt.empty()) ev.checkpoint = ev_ckpt;
      ev.data_dir = or_default(ev_data, paths.data_dir);
      ev.out = or_default(ev_out, paths.output_dir / ("eval_" + ev.policy + ".csv"));
      ev.episodes = ev_episodes.value_or(cfg.deploy.episodes);
      ev.density = ev_density.value_or(cfg.deploy.density);
      return cmd_eval(cfg, ev);
    }
    if (*gc_cmd) return cmd_grad_check(cfg, gc);
    if (*ab_cmd) {
      ab.checkpoint_attn = ab_attn;
      ab.checkpoint_padded = ab_pad;
      ab.data_dir = or_default(ab_data, paths.data_dir);
      ab.out_dir = or_default(ab_out, paths.output_dir);
      ab.episodes = ab_episodes.value_or(cfg.deploy.episodes);
      return cmd_ablate(cfg, ab);
    }
  } catch (const std::exception& e) {
    std::cerr << "apdt: error: " << e.what() << "\n";
    return 1;
  }
  return 1;
}
