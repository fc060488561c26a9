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

#include "apdt/config.hpp"

#include <cerrno>
#include <cstdlib>
#include <iomanip>
#include <limits>
#include <set>
#include <sstream>
#include <stdexcept>

#include <toml.hpp>

#include "apdt/env.hpp"
#include "apdt/file_util.hpp"
#include "apdt/mobility.hpp"

namespace apdt {

namespace {

// Reads typed keys from one table and remembers which keys were consumed so
// leftovers can be reported.
class Section {
 public:
  Section(const toml::table* table, std::string name) : table_(table), name_(std::move(name)) {}

  void get(std::string_view key, double& out) {
    if (const auto* node = find(key)) {
      if (auto v = node->value<double>()) {
        out = *v;
      } else {
        fail(key, "a number");
      }
    }
  }

  void get(std::string_view key, int& out) {
    std::int64_t v = out;
    get_int(key, v);
    if (v < std::numeric_limits<int>::min() || v > std::numeric_limits<int>::max()) {
      fail(key, "a 32-bit integer");
    }
    out = static_cast<int>(v);
  }

  void get(std::string_view key, std::size_t& out) {
    std::int64_t v = static_cast<std::int64_t>(out);
    get_int(key, v);
    if (v < 0) fail(key, "a non-negative integer");
    out = static_cast<std::size_t>(v);
  }

  void get(std::string_view key, std::string& out) {
    if (const auto* node = find(key)) {
      if (auto v = node->value<std::string>()) {
        out = *v;
      } else {
        fail(key, "a string");
      }
    }
  }

  void get(std::string_view key, std::filesystem::path& out) {
    std::string s = out.string();
    get(key, s);
    out = s;
  }

  void get(std::string_view key, Vec2& out) {
    if (const auto* node = find(key)) {
      const auto* arr = node->as_array();
      if (!arr || arr->size() != 2) fail(key, "a two-element array");
      auto x = (*arr)[0].value<double>();
      auto y = (*arr)[1].value<double>();
      if (!x || !y) fail(key, "a two-element numeric array");
      out = {*x, *y};
    }
  }

  void get(std::string_view key, std::vector<int>& out) {
    if (const auto* node = find(key)) {
      const auto* arr = node->as_array();
      if (!arr) fail(key, "an integer array");
      out.clear();
      for (const auto& el : *arr) {
        auto v = el.value<std::int64_t>();
        if (!v) fail(key, "an integer array");
        out.push_back(static_cast<int>(*v));
      }
    }
  }

  void finish() const {
    if (!table_) return;
    for (const auto& [k, v] : *table_) {
      if (!used_.count(std::string(k.str()))) {
        throw std::invalid_argument("config: unknown key '" + std::string(k.str()) + "' in [" +
                                    name_ + "]");
      }
    }
  }

 private:
  const toml::node* find(std::string_view key) {
    if (!table_) return nullptr;
    used_.insert(std::string(key));
    return table_->get(key);
  }

  void get_int(std::string_view key, std::int64_t& out) {
    if (const auto* node = find(key)) {
      if (!node->is_integer()) fail(key, "an integer");
      out = *node->value<std::int64_t>();
    }
  }

  [[noreturn]] void fail(std::string_view key, const char* what) const {
    throw std::invalid_argument("config: [" + name_ + "]." + std::string(key) + " must be " +
                                what);
  }

  const toml::table* table_;
  std::string name_;
  std::set<std::string> used_;
};

const toml::table* sub_table(const toml::table& root, std::string_view name) {
  const toml::node* node = root.get(name);
  if (!node) return nullptr;
  const auto* t = node->as_table();
  if (!t) throw std::invalid_argument("config: '" + std::string(name) + "' must be a table");
  return t;
}

}  // namespace

void set_seed(ExperimentConfig& cfg, std::uint64_t seed) {
  cfg.seed = seed;
  cfg.env.seed = seed;
  cfg.train.seed = seed;
}

void validate(const ExperimentConfig& cfg) {
  validate(cfg.env);
  validate(cfg.mobility);
  validate(cfg.model);
  validate(cfg.train);
  if (cfg.deploy.buffer_capacity == 0) {
    throw std::invalid_argument("config: deploy.buffer_capacity must be >= 1");
  }
  if (!(cfg.deploy.density > 0.0)) throw std::invalid_argument("config: deploy.density must be > 0");
  if (cfg.data.policy != "greedy" && cfg.data.policy != "random") {
    throw std::invalid_argument("config: data.policy must be 'greedy' or 'random'");
  }
  for (int tag : cfg.data.env_tags) {
    if (tag < 0) throw std::invalid_argument("config: data.env_tags must be non-negative");
  }
}

ExperimentConfig parse_config(std::string_view toml_text, std::string_view source) {
  toml::table root;
  try {
    root = toml::parse(toml_text, source);
  } catch (const toml::parse_error& e) {
    std::ostringstream msg;
    msg << "config: " << source << ":" << e.source().begin.line << ": " << e.description();
    throw std::invalid_argument(msg.str());
  }

  ExperimentConfig cfg;
  static const std::set<std::string> kTables{"env", "mobility", "model", "train",
                                             "data", "deploy", "paths"};
  for (const auto& [k, v] : root) {
    const std::string key(k.str());
    if (key == "seed") continue;
    if (!kTables.count(key)) {
      throw std::invalid_argument("config: unknown " + std::string(v.is_table() ? "table" : "key") +
                                  " '" + key + "'");
    }
  }
  if (const auto* node = root.get("seed")) {
    auto v = node->value<std::int64_t>();
    if (!node->is_integer() || !v || *v < 0) {
      throw std::invalid_argument("config: seed must be a non-negative integer");
    }
    cfg.seed = static_cast<std::uint64_t>(*v);
  }

  Section env(sub_table(root, "env"), "env");
  EnvConfig& e = cfg.env;
  env.get("x_max", e.x_max);
  env.get("y_max", e.y_max);
  env.get("T", e.T);
  env.get("delta", e.delta);
  env.get("H", e.H);
  env.get("d_max", e.d_max);
  env.get("V_max", e.V_max);
  env.get("P_f", e.P_f);
  env.get("P_h", e.P_h);
  env.get("E_max", e.E_max);
  env.get("B", e.B);
  env.get("P_u", e.P_u);
  env.get("sigma2", e.sigma2);
  env.get("N_u", e.N_u);
  env.get("beta0", e.beta0);
  env.get("rho", e.rho);
  env.get("uav_start", e.uav_start);
  env.get("initial_users", e.initial_users);
  env.finish();

  Section mob(sub_table(root, "mobility"), "mobility");
  MobilityParams& m = cfg.mobility;
  mob.get("alpha", m.alpha);
  mob.get("mean_speed", m.mean_speed);
  mob.get("speed_std", m.speed_std);
  mob.get("arrival_rate", m.arrival_rate);
  mob.get("departure_prob", m.departure_prob);
  mob.finish();

  Section model(sub_table(root, "model"), "model");
  ModelConfig& mc = cfg.model;
  model.get("d_model", mc.d_model);
  model.get("d_k", mc.d_k);
  model.get("n_layers", mc.n_layers);
  model.get("n_heads", mc.n_heads);
  model.get("context_window", mc.context_window);
  model.get("prompt_len", mc.prompt_len);
  model.get("u_max", mc.u_max);
  std::string encoder = to_string(mc.encoder);
  model.get("encoder", encoder);
  mc.encoder = state_encoder_from_string(encoder);
  model.finish();

  Section train(sub_table(root, "train"), "train");
  TrainConfig& tc = cfg.train;
  train.get("learning_rate", tc.learning_rate);
  train.get("batch_size", tc.batch_size);
  train.get("beta1", tc.beta1);
  train.get("beta2", tc.beta2);
  train.get("epsilon", tc.epsilon);
  train.get("max_steps", tc.max_steps);
  train.get("eval_every", tc.eval_every);
  train.get("grad_clip_norm", tc.grad_clip_norm);
  std::string opt = to_string(tc.optimizer);
  train.get("optimizer", opt);
  tc.optimizer = optimizer_from_string(opt);
  train.get("plateau_window", tc.plateau_window);
  train.get("plateau_tolerance", tc.plateau_tolerance);
  train.finish();

  Section data(sub_table(root, "data"), "data");
  data.get("episodes", cfg.data.episodes);
  data.get("policy", cfg.data.policy);
  data.get("env_tags", cfg.data.env_tags);
  data.finish();

  Section deploy(sub_table(root, "deploy"), "deploy");
  deploy.get("buffer_capacity", cfg.deploy.buffer_capacity);
  deploy.get("episodes", cfg.deploy.episodes);
  deploy.get("density", cfg.deploy.density);
  deploy.finish();

  Section paths(sub_table(root, "paths"), "paths");
  paths.get("data_dir", cfg.paths.data_dir);
  paths.get("checkpoint", cfg.paths.checkpoint);
  paths.get("output_dir", cfg.paths.output_dir);
  paths.finish();

  set_seed(cfg, cfg.seed);
  validate(cfg);
  return cfg;
}

ExperimentConfig load_config(const std::filesystem::path& path) {
  return parse_config(read_file(path), path.string());
}

void apply_seed_override(ExperimentConfig& cfg, const char* env_value) {
  if (env_value == nullptr || *env_value == '\0') return;
  const std::string s(env_value);
  if (s.find_first_not_of("0123456789") != std::string::npos) {
    throw std::invalid_argument("APDT_SEED must be a non-negative integer, got '" + s + "'");
  }
  errno = 0;
  const unsigned long long v = std::strtoull(s.c_str(), nullptr, 10);
  if (errno == ERANGE) throw std::invalid_argument("APDT_SEED out of range: '" + s + "'");
  set_seed(cfg, static_cast<std::uint64_t>(v));
}

std::string to_toml(const ExperimentConfig& cfg) {
  std::ostringstream o;
  o << std::setprecision(17);
  const auto& e = cfg.env;
  const auto& m = cfg.mobility;
  const auto& mc = cfg.model;
  const auto& tc = cfg.train;
  auto q = [](const std::string& s) { return toml::value<std::string>(s); };
  o << "seed = " << cfg.seed << "\n\n";
  o << "[env]\n"
    << "x_max = " << e.x_max << "\ny_max = " << e.y_max << "\nT = " << e.T
    << "\ndelta = " << e.delta << "\nH = " << e.H << "\nd_max = " << e.d_max
    << "\nV_max = " << e.V_max << "\nP_f = " << e.P_f << "\nP_h = " << e.P_h
    << "\nE_max = " << e.E_max << "\nB = " << e.B << "\nP_u = " << e.P_u
    << "\nsigma2 = " << e.sigma2 << "\nN_u = " << e.N_u << "\nbeta0 = " << e.beta0
    << "\nrho = " << e.rho << "\nuav_start = [" << e.uav_start.x << ", " << e.uav_start.y
    << "]\ninitial_users = " << e.initial_users << "\n\n";
  o << "[mobility]\n"
    << "alpha = " << m.alpha << "\nmean_speed = " << m.mean_speed
    << "\nspeed_std = " << m.speed_std << "\narrival_rate = " << m.arrival_rate
    << "\ndeparture_prob = " << m.departure_prob << "\n\n";
  o << "[model]\n"
    << "d_model = " << mc.d_model << "\nd_k = " << mc.d_k << "\nn_layers = " << mc.n_layers
    << "\nn_heads = " << mc.n_heads << "\ncontext_window = " << mc.context_window
    << "\nprompt_len = " << mc.prompt_len << "\nu_max = " << mc.u_max
    << "\nencoder = " << q(to_string(mc.encoder)) << "\n\n";
  o << "[train]\n"
    << "learning_rate = " << tc.learning_rate << "\nbatch_size = " << tc.batch_size
    << "\nbeta1 = " << tc.beta1 << "\nbeta2 = " << tc.beta2 << "\nepsilon = " << tc.epsilon
    << "\nmax_steps = " << tc.max_steps << "\neval_every = " << tc.eval_every
    << "\ngrad_clip_norm = " << tc.grad_clip_norm
    << "\noptimizer = " << q(to_string(tc.optimizer))
    << "\nplateau_window = " << tc.plateau_window
    << "\nplateau_tolerance = " << tc.plateau_tolerance << "\n\n";
  o << "[data]\nepisodes = " << cfg.data.episodes << "\npolicy = " << q(cfg.data.policy)
    << "\nenv_tags = [";
  for (std::size_t i = 0; i < cfg.data.env_tags.size(); ++i) {
    o << (i ? ", " : "") << cfg.data.env_tags[i];
  }
  o << "]\n\n";
  o << "[deploy]\nbuffer_capacity = " << cfg.deploy.buffer_capacity
    << "\nepisodes = " << cfg.deploy.episodes << "\ndensity = " << cfg.deploy.density
    << "\n\n";
  o << "[paths]\ndata_dir = " << q(cfg.paths.data_dir.string())
    << "\ncheckpoint = " << q(cfg.paths.checkpoint.string())
    << "\noutput_dir = " << q(cfg.paths.output_dir.string()) << "\n";
  return o.str();
}

}  // namespace apdt
