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

#include "apdt/model.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <limits>
#include <stdexcept>

namespace apdt {

std::string to_string(StateEncoder e) {
  return e == StateEncoder::kAttention ? "attention" : "padded";
}

StateEncoder state_encoder_from_string(std::string_view s) {
  if (s == "attention") return StateEncoder::kAttention;
  if (s == "padded") return StateEncoder::kPadded;
  throw std::invalid_argument("unknown state encoder: " + std::string(s));
}

void validate(const ModelConfig& cfg) {
  if (cfg.d_model < 1 || cfg.n_heads < 1 || cfg.d_model % cfg.n_heads != 0) {
    throw std::invalid_argument("model config: d_model must be a positive multiple of n_heads");
  }
  if (cfg.d_k < 1) throw std::invalid_argument("model config: d_k must be >= 1");
  if (cfg.n_layers < 0) throw std::invalid_argument("model config: n_layers must be >= 0");
  if (cfg.context_window < 1) throw std::invalid_argument("model config: context_window >= 1");
  if (cfg.prompt_len < 0) throw std::invalid_argument("model config: prompt_len must be >= 0");
  if (cfg.u_max < 1) throw std::invalid_argument("model config: u_max must be >= 1");
}

Normalizers Normalizers::from_env(const EnvConfig& env) {
  Normalizers n;
  n.pos_x = env.x_max;
  n.pos_y = env.y_max;
  n.aoi = std::max(1.0, env.T / 4.0);
  n.ret = static_cast<double>(env.T);
  n.cost = env.E_max;
  return n;
}

std::size_t ModelParams::parameter_count() const {
  std::size_t n = 0;
  for_each([&](std::string_view, const Tensor& t) { n += t.size(); });
  return n;
}

ModelParams init_params(const ModelConfig& cfg, std::uint64_t seed) {
  validate(cfg);
  Rng rng(seed);
  std::normal_distribution<double> normal(0.0, 0.02);
  const auto d = static_cast<std::size_t>(cfg.d_model);
  const auto dk = static_cast<std::size_t>(cfg.d_k);
  auto weight = [&](std::size_t r, std::size_t c) {
    Tensor t(r, c);
    for (std::size_t i = 0; i < t.size(); ++i) t[i] = normal(rng);
    return t;
  };
  auto zeros = [](std::size_t r, std::size_t c) { return Tensor(r, c); };
  auto ones = [](std::size_t c) { return Tensor(1, c, 1.0); };

  ModelParams p;
  if (cfg.encoder == StateEncoder::kAttention) {
    p.w_q = weight(2, dk);
    p.b_q = zeros(1, dk);
    p.w_k = weight(3, dk);
    p.b_k = zeros(1, dk);
    p.w_v = weight(3, dk);
    p.b_v = zeros(1, dk);
    p.w_sg = weight(dk, d);
    p.w_sq = weight(2, d);
    p.b_s = zeros(1, d);
    p.no_user = zeros(1, dk);
  } else {
    p.w_pad = weight(3 * static_cast<std::size_t>(cfg.u_max) + 2, d);
    p.b_pad = zeros(1, d);
  }
  p.w_r = weight(1, d);
  p.b_r = zeros(1, d);
  p.w_c = weight(1, d);
  p.b_c = zeros(1, d);
  p.w_a = weight(3, d);
  p.b_a = zeros(1, d);
  p.type_emb = zeros(4, d);
  p.time_emb = zeros(static_cast<std::size_t>(cfg.max_steps()), d);
  for (int l = 0; l < cfg.n_layers; ++l) {
    BlockParams b;
    b.ln1_g = ones(d);
    b.ln1_b = zeros(1, d);
    b.w_qkv = weight(d, 3 * d);
    b.b_qkv = zeros(1, 3 * d);
    b.w_o = weight(d, d);
    b.b_o = zeros(1, d);
    b.ln2_g = ones(d);
    b.ln2_b = zeros(1, d);
    b.w_fc = weight(d, 4 * d);
    b.b_fc = zeros(1, 4 * d);
    b.w_proj = weight(4 * d, d);
    b.b_proj = zeros(1, d);
    p.blocks.push_back(std::move(b));
  }
  p.lnf_g = ones(d);
  p.lnf_b = zeros(1, d);
  p.w_head = weight(d, 3);
  p.b_head = zeros(1, 3);
  return p;
}

ModelParams zeros_like(const ModelParams& p) {
  ModelParams z = p;
  z.for_each([](std::string_view, Tensor& t) { t.fill(0.0); });
  return z;
}

std::uint64_t fingerprint(const ModelParams& p) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  p.for_each([&](std::string_view, const Tensor& t) {
    for (std::size_t i = 0; i < t.size(); ++i) {
      std::uint64_t bits = 0;
      std::memcpy(&bits, t.data() + i, sizeof bits);
      h ^= bits;
      h *= 0x100000001b3ULL;
    }
  });
  return h;
}

Model make_model(const ModelConfig& cfg, const Normalizers& norm, std::uint64_t seed) {
  return Model{cfg, norm, init_params(cfg, seed), seed};
}

// ---------------------------------------------------------------------------
// State encoders
// ---------------------------------------------------------------------------

namespace {

void add_row(double* dst, const double* src, std::size_t n) {
  for (std::size_t j = 0; j < n; ++j) dst[j] += src[j];
}

std::vector<double> project_state(const Tensor& aggregate, const double q[2],
                                  const ModelParams& p) {
  const std::size_t d = p.b_s.cols();
  std::vector<double> out(d);
  linear_row(aggregate.data(), p.w_sg, p.b_s, out.data());
  for (std::size_t k = 0; k < 2; ++k) {
    const double* w = p.w_sq.row(k);
    for (std::size_t j = 0; j < d; ++j) out[j] += q[k] * w[j];
  }
  return out;
}

}  // namespace

std::vector<double> encode_state(const StateSnapshot& state, const ModelParams& p,
                                 const ModelConfig& cfg, const Normalizers& norm,
                                 SetAttentionCache* cache) {
  if (p.w_q.empty()) throw std::logic_error("encode_state: model has no attention encoder");
  SetAttentionCache local;
  SetAttentionCache& c = cache ? *cache : local;
  const auto dk = static_cast<std::size_t>(cfg.d_k);
  c.q[0] = state.uav.x / norm.pos_x;
  c.q[1] = state.uav.y / norm.pos_y;
  c.aggregate.resize(1, dk);

  const std::size_t m = state.users.size();
  c.empty = m == 0;
  if (c.empty) {
    std::copy(p.no_user.data(), p.no_user.data() + dk, c.aggregate.data());
    c.feats.resize(0, 3);
    c.weights.clear();
    return project_state(c.aggregate, c.q, p);
  }

  c.feats.resize(m, 3);
  for (std::size_t u = 0; u < m; ++u) {
    const auto& user = state.users[u];
    c.feats(u, 0) = user.pos.x / norm.pos_x;
    c.feats(u, 1) = user.pos.y / norm.pos_y;
    c.feats(u, 2) = static_cast<double>(user.aoi) / norm.aoi;
  }
  c.query.resize(1, dk);
  linear_row(c.q, p.w_q, p.b_q, c.query.data());
  c.keys = linear(c.feats, p.w_k, p.b_k);
  c.values = linear(c.feats, p.w_v, p.b_v);

  const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(dk));
  c.weights.assign(m, 0.0);
  double max_score = -std::numeric_limits<double>::infinity();
  for (std::size_t u = 0; u < m; ++u) {
    double s = 0.0;
    const double* k = c.keys.row(u);
    for (std::size_t j = 0; j < dk; ++j) s += c.query[j] * k[j];
    c.weights[u] = s * inv_sqrt;
    max_score = std::max(max_score, c.weights[u]);
  }
  double denom = 0.0;
  for (auto& w : c.weights) {
    w = std::exp(w - max_score);
    denom += w;
  }
  for (auto& w : c.weights) w /= denom;

  double* g = c.aggregate.data();
  std::fill(g, g + dk, 0.0);
  for (std::size_t u = 0; u < m; ++u) {
    const double* v = c.values.row(u);
    for (std::size_t j = 0; j < dk; ++j) g[j] += c.weights[u] * v[j];
  }
  return project_state(c.aggregate, c.q, p);
}

std::vector<double> encode_state_padded(const StateSnapshot& state, const ModelParams& p,
                                        const ModelConfig& cfg, const Normalizers& norm,
                                        std::vector<double>* input_cache) {
  if (p.w_pad.empty()) throw std::logic_error("encode_state_padded: model has no padded encoder");
  const auto u_max = static_cast<std::size_t>(cfg.u_max);
  if (state.users.size() > u_max) {
    throw std::length_error("encode_state_padded: " + std::to_string(state.users.size()) +
                            " users exceed u_max = " + std::to_string(u_max));
  }
  std::vector<const UserObs*> by_id;
  by_id.reserve(state.users.size());
  for (const auto& u : state.users) by_id.push_back(&u);
  std::sort(by_id.begin(), by_id.end(),
            [](const UserObs* a, const UserObs* b) { return a->id < b->id; });

  std::vector<double> x(3 * u_max + 2, 0.0);
  for (std::size_t i = 0; i < by_id.size(); ++i) {
    x[3 * i + 0] = by_id[i]->pos.x / norm.pos_x;
    x[3 * i + 1] = by_id[i]->pos.y / norm.pos_y;
    x[3 * i + 2] = static_cast<double>(by_id[i]->aoi) / norm.aoi;
  }
  x[3 * u_max + 0] = state.uav.x / norm.pos_x;
  x[3 * u_max + 1] = state.uav.y / norm.pos_y;

  std::vector<double> out(p.b_pad.cols());
  linear_row(x.data(), p.w_pad, p.b_pad, out.data());
  if (input_cache) *input_cache = std::move(x);
  return out;
}

namespace {

void encode_state_backward(const SetAttentionCache& c, const double* d_out, const ModelParams& p,
                           ModelParams& g) {
  const std::size_t d = p.b_s.cols();
  const std::size_t dk = p.no_user.cols();

  // out = aggregate * w_sg + q * w_sq + b_s
  std::vector<double> d_agg(dk, 0.0);
  for (std::size_t k = 0; k < dk; ++k) {
    const double a = c.aggregate[k];
    double* gw = g.w_sg.row(k);
    const double* w = p.w_sg.row(k);
    double acc = 0.0;
    for (std::size_t j = 0; j < d; ++j) {
      gw[j] += a * d_out[j];
      acc += d_out[j] * w[j];
    }
    d_agg[k] = acc;
  }
  for (std::size_t k = 0; k < 2; ++k) {
    double* gw = g.w_sq.row(k);
    for (std::size_t j = 0; j < d; ++j) gw[j] += c.q[k] * d_out[j];
  }
  add_row(g.b_s.data(), d_out, d);

  if (c.empty) {
    add_row(g.no_user.data(), d_agg.data(), dk);
    return;
  }

  const std::size_t m = c.weights.size();
  const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(dk));
  // aggregate = sum_u w_u v_u
  std::vector<double> d_w(m, 0.0);
  Tensor d_values(m, dk);
  for (std::size_t u = 0; u < m; ++u) {
    const double* v = c.values.row(u);
    double* dv = d_values.row(u);
    double acc = 0.0;
    for (std::size_t j = 0; j < dk; ++j) {
      acc += d_agg[j] * v[j];
      dv[j] = c.weights[u] * d_agg[j];
    }
    d_w[u] = acc;
  }
  // softmax
  double dot = 0.0;
  for (std::size_t u = 0; u < m; ++u) dot += c.weights[u] * d_w[u];
  Tensor d_keys(m, dk);
  std::vector<double> d_query(dk, 0.0);
  for (std::size_t u = 0; u < m; ++u) {
    const double de = c.weights[u] * (d_w[u] - dot) * inv_sqrt;
    const double* k = c.keys.row(u);
    double* dkey = d_keys.row(u);
    for (std::size_t j = 0; j < dk; ++j) {
      d_query[j] += de * k[j];
      dkey[j] = de * c.query[j];
    }
  }
  linear_backward(c.feats, p.w_k, d_keys, nullptr, g.w_k, g.b_k);
  linear_backward(c.feats, p.w_v, d_values, nullptr, g.w_v, g.b_v);
  for (std::size_t k = 0; k < 2; ++k) {
    double* gw = g.w_q.row(k);
    for (std::size_t j = 0; j < dk; ++j) gw[j] += c.q[k] * d_query[j];
  }
  add_row(g.b_q.data(), d_query.data(), dk);
}

void padded_backward(const std::vector<double>& x, const double* d_out, ModelParams& g) {
  const std::size_t d = g.b_pad.cols();
  for (std::size_t k = 0; k < x.size(); ++k) {
    if (x[k] == 0.0) continue;
    double* gw = g.w_pad.row(k);
    for (std::size_t j = 0; j < d; ++j) gw[j] += x[k] * d_out[j];
  }
  add_row(g.b_pad.data(), d_out, d);
}

// Causal multi-head self-attention on qkv (n x 3d). Fills probs and out.
void causal_attention(const Tensor& qkv, std::size_t n_heads, std::vector<Tensor>& probs,
                      Tensor& out) {
  const std::size_t n = qkv.rows();
  const std::size_t d = qkv.cols() / 3;
  const std::size_t hd = d / n_heads;
  const double scale = 1.0 / std::sqrt(static_cast<double>(hd));
  out.resize(n, d);
  probs.assign(n_heads, Tensor(n, n));
  for (std::size_t h = 0; h < n_heads; ++h) {
    Tensor& P = probs[h];
    const std::size_t qo = h * hd;
    const std::size_t ko = d + h * hd;
    const std::size_t vo = 2 * d + h * hd;
    for (std::size_t i = 0; i < n; ++i) {
      const double* q = qkv.row(i) + qo;
      double* p = P.row(i);
      double mx = -std::numeric_limits<double>::infinity();
      for (std::size_t j = 0; j <= i; ++j) {
        const double* k = qkv.row(j) + ko;
        double s = 0.0;
        for (std::size_t t = 0; t < hd; ++t) s += q[t] * k[t];
        p[j] = s * scale;
        mx = std::max(mx, p[j]);
      }
      double denom = 0.0;
      for (std::size_t j = 0; j <= i; ++j) {
        p[j] = std::exp(p[j] - mx);
        denom += p[j];
      }
      for (std::size_t j = 0; j <= i; ++j) p[j] /= denom;
      double* o = out.row(i) + qo;
      for (std::size_t j = 0; j <= i; ++j) {
        const double* v = qkv.row(j) + vo;
        for (std::size_t t = 0; t < hd; ++t) o[t] += p[j] * v[t];
      }
    }
  }
}

Tensor causal_attention_backward(const Tensor& qkv, const std::vector<Tensor>& probs,
                                 const Tensor& d_out) {
  const std::size_t n = qkv.rows();
  const std::size_t d = qkv.cols() / 3;
  const std::size_t n_heads = probs.size();
  const std::size_t hd = d / n_heads;
  const double scale = 1.0 / std::sqrt(static_cast<double>(hd));
  Tensor d_qkv(n, 3 * d);
  std::vector<double> dp(n);
  for (std::size_t h = 0; h < n_heads; ++h) {
    const Tensor& P = probs[h];
    const std::size_t qo = h * hd;
    const std::size_t ko = d + h * hd;
    const std::size_t vo = 2 * d + h * hd;
    for (std::size_t i = 0; i < n; ++i) {
      const double* dO = d_out.row(i) + qo;
      const double* p = P.row(i);
      double dot = 0.0;
      for (std::size_t j = 0; j <= i; ++j) {
        const double* v = qkv.row(j) + vo;
        double* dv = d_qkv.row(j) + vo;
        double s = 0.0;
        for (std::size_t t = 0; t < hd; ++t) {
          s += dO[t] * v[t];
          dv[t] += p[j] * dO[t];
        }
        dp[j] = s;
        dot += p[j] * s;
      }
      const double* q = qkv.row(i) + qo;
      double* dq = d_qkv.row(i) + qo;
      for (std::size_t j = 0; j <= i; ++j) {
        const double ds = p[j] * (dp[j] - dot) * scale;
        const double* k = qkv.row(j) + ko;
        double* dk = d_qkv.row(j) + ko;
        for (std::size_t t = 0; t < hd; ++t) {
          dq[t] += ds * k[t];
          dk[t] += ds * q[t];
        }
      }
    }
  }
  return d_qkv;
}

}  // namespace

// ---------------------------------------------------------------------------
// Sequence model
// ---------------------------------------------------------------------------

ForwardResult forward(const Model& model, const TokenSequence& seq) {
  const ModelConfig& cfg = model.config;
  const ModelParams& p = model.params;
  const Normalizers& norm = model.norm;
  check_layout(seq);
  if (seq.steps() > static_cast<std::size_t>(cfg.max_steps())) {
    throw std::invalid_argument("forward: sequence longer than prompt_len + context_window");
  }

  const std::size_t n = seq.tokens.size();
  const auto d = static_cast<std::size_t>(cfg.d_model);
  ForwardResult res;
  ForwardCache& c = res.cache;
  c.params_fingerprint = fingerprint(p);
  c.types.resize(n);
  c.timesteps.resize(n);
  c.scalars.assign(n, 0.0);
  c.actions.assign(n, ActionVec{});
  c.sets.resize(n);
  c.padded_inputs.resize(n);

  Tensor X(n, d);
  for (std::size_t i = 0; i < n; ++i) {
    const Token& tok = seq.tokens[i];
    c.types[i] = tok.type;
    c.timesteps[i] = tok.timestep;
    if (tok.timestep < 0 || tok.timestep >= cfg.max_steps()) {
      throw std::invalid_argument("forward: timestep outside the embedding table");
    }
    double* x = X.row(i);
    switch (tok.type) {
      case TokenType::kReturn:
      case TokenType::kCost: {
        const bool is_r = tok.type == TokenType::kReturn;
        const double s = std::get<double>(tok.value) / (is_r ? norm.ret : norm.cost);
        c.scalars[i] = s;
        const Tensor& w = is_r ? p.w_r : p.w_c;
        const Tensor& b = is_r ? p.b_r : p.b_c;
        for (std::size_t j = 0; j < d; ++j) x[j] = s * w[j] + b[j];
        break;
      }
      case TokenType::kState: {
        const auto& st = std::get<StateSnapshot>(tok.value);
        const std::vector<double> e =
            cfg.encoder == StateEncoder::kAttention
                ? encode_state(st, p, cfg, norm, &c.sets[i])
                : encode_state_padded(st, p, cfg, norm, &c.padded_inputs[i]);
        std::copy(e.begin(), e.end(), x);
        break;
      }
      case TokenType::kAction: {
        c.actions[i] = std::get<ActionVec>(tok.value);
        linear_row(c.actions[i].data(), p.w_a, p.b_a, x);
        break;
      }
    }
    add_row(x, p.type_emb.row(static_cast<std::size_t>(tok.type)), d);
    add_row(x, p.time_emb.row(static_cast<std::size_t>(tok.timestep)), d);
  }

  const auto n_heads = static_cast<std::size_t>(cfg.n_heads);
  c.layers.resize(p.blocks.size());
  for (std::size_t l = 0; l < p.blocks.size(); ++l) {
    const BlockParams& b = p.blocks[l];
    LayerCache& lc = c.layers[l];
    lc.x_in = X;
    lc.h1 = layer_norm(X, b.ln1_g, b.ln1_b, lc.ln1);
    lc.qkv = linear(lc.h1, b.w_qkv, b.b_qkv);
    causal_attention(lc.qkv, n_heads, lc.probs, lc.attn);
    Tensor proj = linear(lc.attn, b.w_o, b.b_o);
    lc.x_mid = lc.x_in;
    for (std::size_t i = 0; i < X.size(); ++i) lc.x_mid[i] += proj[i];
    lc.h2 = layer_norm(lc.x_mid, b.ln2_g, b.ln2_b, lc.ln2);
    lc.fc_pre = linear(lc.h2, b.w_fc, b.b_fc);
    lc.fc_act = lc.fc_pre;
    for (std::size_t i = 0; i < lc.fc_act.size(); ++i) lc.fc_act[i] = gelu(lc.fc_pre[i]);
    Tensor mlp = linear(lc.fc_act, b.w_proj, b.b_proj);
    X = lc.x_mid;
    for (std::size_t i = 0; i < X.size(); ++i) X[i] += mlp[i];
  }
  c.x_final = X;
  c.h_final = layer_norm(X, p.lnf_g, p.lnf_b, c.lnf);

  for (std::size_t i = 0; i < n; ++i) {
    if (c.types[i] == TokenType::kState) c.pred_positions.push_back(i);
  }
  const std::size_t m = c.pred_positions.size();
  c.head_pre.resize(m, 3);
  res.actions.resize(m, 3);
  for (std::size_t r = 0; r < m; ++r) {
    const std::size_t i = c.pred_positions[r];
    linear_row(c.h_final.row(i), p.w_head, p.b_head, c.head_pre.row(r));
    for (std::size_t j = 0; j < 3; ++j) res.actions(r, j) = kHeadScale * std::tanh(c.head_pre(r, j));
    res.steps.push_back(i / 4);
  }
  return res;
}

void backward(const Model& model, const ForwardCache& c, const Tensor& d_actions,
              ModelParams& g) {
  const ModelConfig& cfg = model.config;
  const ModelParams& p = model.params;
  if (fingerprint(p) != c.params_fingerprint) {
    throw std::logic_error("backward: parameters changed since the forward pass (stale cache)");
  }
  if (d_actions.rows() != c.pred_positions.size() || d_actions.cols() != 3) {
    throw std::invalid_argument("backward: d_actions shape does not match predictions");
  }
  const std::size_t n = c.types.size();
  const auto d = static_cast<std::size_t>(cfg.d_model);

  // Head.
  Tensor dH(n, d);
  for (std::size_t r = 0; r < c.pred_positions.size(); ++r) {
    const std::size_t i = c.pred_positions[r];
    double dz[3];
    for (std::size_t j = 0; j < 3; ++j) {
      const double th = std::tanh(c.head_pre(r, j));
      dz[j] = d_actions(r, j) * kHeadScale * (1.0 - th * th);
      g.b_head[j] += dz[j];
    }
    const double* h = c.h_final.row(i);
    double* dh = dH.row(i);
    for (std::size_t k = 0; k < d; ++k) {
      const double* w = p.w_head.row(k);
      double* gw = g.w_head.row(k);
      double acc = 0.0;
      for (std::size_t j = 0; j < 3; ++j) {
        gw[j] += h[k] * dz[j];
        acc += dz[j] * w[j];
      }
      dh[k] = acc;
    }
  }
  Tensor dX = layer_norm_backward(dH, p.lnf_g, c.lnf, g.lnf_g, g.lnf_b);

  for (std::size_t l = p.blocks.size(); l-- > 0;) {
    const BlockParams& b = p.blocks[l];
    BlockParams& gb = g.blocks[l];
    const LayerCache& lc = c.layers[l];

    Tensor d_fc_act;
    linear_backward(lc.fc_act, b.w_proj, dX, &d_fc_act, gb.w_proj, gb.b_proj);
    for (std::size_t i = 0; i < d_fc_act.size(); ++i) d_fc_act[i] *= gelu_grad(lc.fc_pre[i]);
    Tensor d_h2;
    linear_backward(lc.h2, b.w_fc, d_fc_act, &d_h2, gb.w_fc, gb.b_fc);
    Tensor d_mid = layer_norm_backward(d_h2, b.ln2_g, lc.ln2, gb.ln2_g, gb.ln2_b);
    for (std::size_t i = 0; i < d_mid.size(); ++i) d_mid[i] += dX[i];

    Tensor d_attn;
    linear_backward(lc.attn, b.w_o, d_mid, &d_attn, gb.w_o, gb.b_o);
    Tensor d_qkv = causal_attention_backward(lc.qkv, lc.probs, d_attn);
    Tensor d_h1;
    linear_backward(lc.h1, b.w_qkv, d_qkv, &d_h1, gb.w_qkv, gb.b_qkv);
    Tensor d_in = layer_norm_backward(d_h1, b.ln1_g, lc.ln1, gb.ln1_g, gb.ln1_b);
    for (std::size_t i = 0; i < d_in.size(); ++i) d_in[i] += d_mid[i];
    dX = std::move(d_in);
  }

  for (std::size_t i = 0; i < n; ++i) {
    const double* dx = dX.row(i);
    add_row(g.type_emb.row(static_cast<std::size_t>(c.types[i])), dx, d);
    add_row(g.time_emb.row(static_cast<std::size_t>(c.timesteps[i])), dx, d);
    switch (c.types[i]) {
      case TokenType::kReturn:
      case TokenType::kCost: {
        const bool is_r = c.types[i] == TokenType::kReturn;
        Tensor& gw = is_r ? g.w_r : g.w_c;
        Tensor& gbias = is_r ? g.b_r : g.b_c;
        for (std::size_t j = 0; j < d; ++j) {
          gw[j] += c.scalars[i] * dx[j];
          gbias[j] += dx[j];
        }
        break;
      }
      case TokenType::kState:
        if (cfg.encoder == StateEncoder::kAttention) {
          encode_state_backward(c.sets[i], dx, p, g);
        } else {
          padded_backward(c.padded_inputs[i], dx, g);
        }
        break;
      case TokenType::kAction:
        for (std::size_t k = 0; k < 3; ++k) {
          double* gw = g.w_a.row(k);
          for (std::size_t j = 0; j < d; ++j) gw[j] += c.actions[i][k] * dx[j];
        }
        add_row(g.b_a.data(), dx, d);
        break;
    }
  }
}

ModelParams backward(const Model& model, const ForwardCache& cache, const Tensor& d_actions) {
  ModelParams g = zeros_like(model.params);
  backward(model, cache, d_actions, g);
  return g;
}

double mse_loss(const Tensor& predicted, const Tensor& expert) {
  if (predicted.rows() != expert.rows() || predicted.cols() != expert.cols()) {
    throw std::invalid_argument("mse_loss: prediction/expert count mismatch");
  }
  if (predicted.size() == 0) throw std::invalid_argument("mse_loss: no actions");
  double acc = 0.0;
  for (std::size_t i = 0; i < predicted.size(); ++i) {
    const double e = predicted[i] - expert[i];
    acc += e * e;
  }
  return acc / static_cast<double>(predicted.size());
}

Tensor expert_actions(const TokenSequence& seq) {
  const std::size_t main = seq.steps() - static_cast<std::size_t>(seq.prompt_steps);
  Tensor out(main, 3);
  std::size_t r = 0;
  for (std::size_t s = static_cast<std::size_t>(seq.prompt_steps); s < seq.steps(); ++s, ++r) {
    const auto& a = std::get<ActionVec>(seq.tokens[4 * s + 3].value);
    for (std::size_t j = 0; j < 3; ++j) out(r, j) = a[j];
  }
  return out;
}

Tensor main_rows(const ForwardResult& result, int prompt_steps) {
  std::size_t count = 0;
  for (auto s : result.steps) count += s >= static_cast<std::size_t>(prompt_steps) ? 1 : 0;
  Tensor out(count, 3);
  std::size_t r = 0;
  for (std::size_t i = 0; i < result.steps.size(); ++i) {
    if (result.steps[i] < static_cast<std::size_t>(prompt_steps)) continue;
    for (std::size_t j = 0; j < 3; ++j) out(r, j) = result.actions(i, j);
    ++r;
  }
  return out;
}

double accumulate_gradients(const Model& model, const TokenSequence& seq, double scale,
                            ModelParams& grads) {
  ForwardResult res = forward(model, seq);
  const Tensor expert = expert_actions(seq);
  Tensor d_actions(res.actions.rows(), 3);
  double sse = 0.0;
  std::size_t r = 0;
  for (std::size_t i = 0; i < res.steps.size(); ++i) {
    if (res.steps[i] < static_cast<std::size_t>(seq.prompt_steps)) continue;
    for (std::size_t j = 0; j < 3; ++j) {
      const double e = res.actions(i, j) - expert(r, j);
      sse += e * e;
      d_actions(i, j) = 2.0 * e * scale;
    }
    ++r;
  }
  backward(model, res.cache, d_actions, grads);
  return sse;
}

double sequence_loss(const Model& model, const TokenSequence& seq) {
  const ForwardResult res = forward(model, seq);
  return mse_loss(main_rows(res, seq.prompt_steps), expert_actions(seq));
}

GradCheckReport grad_check(const Model& model, const TokenSequence& seq, double h,
                           std::size_t sample_coords, std::uint64_t seed) {
  const double base = sequence_loss(model, seq);
  if (!std::isfinite(base)) throw std::runtime_error("grad_check: non-finite loss");
  const std::size_t n_actions = expert_actions(seq).rows();
  ModelParams analytic = zeros_like(model.params);
  accumulate_gradients(model, seq, 1.0 / (3.0 * static_cast<double>(n_actions)), analytic);

  // Flat index of every coordinate to probe.
  std::vector<std::pair<std::size_t, std::size_t>> coords;  // (tensor, entry)
  std::vector<std::string> names;
  std::vector<const Tensor*> grads;
  analytic.for_each([&](std::string_view name, const Tensor& t) {
    for (std::size_t i = 0; i < t.size(); ++i) coords.emplace_back(names.size(), i);
    names.emplace_back(name);
    grads.push_back(&t);
  });
  if (sample_coords > 0 && sample_coords < coords.size()) {
    Rng rng(seed);
    std::shuffle(coords.begin(), coords.end(), rng);
    coords.resize(sample_coords);
    std::sort(coords.begin(), coords.end());
  }

  Model probe = model;
  std::vector<Tensor*> params;
  probe.params.for_each([&](std::string_view, Tensor& t) { params.push_back(&t); });

  GradCheckReport rep;
  for (const auto& [ti, ei] : coords) {
    double& x = (*params[ti])[ei];
    const double saved = x;
    x = saved + h;
    const double up = sequence_loss(probe, seq);
    x = saved - h;
    const double down = sequence_loss(probe, seq);
    x = saved;
    if (!std::isfinite(up) || !std::isfinite(down)) {
      throw std::runtime_error("grad_check: non-finite loss");
    }
    const double numeric = (up - down) / (2.0 * h);
    const double g = (*grads[ti])[ei];
    const double rel =
        std::abs(g - numeric) / std::max({1.0, std::abs(g), std::abs(numeric)});
    if (rel > rep.max_rel_error || rep.checked == 0) {
      rep.max_rel_error = rel;
      rep.worst_param = names[ti];
      rep.worst_index = ei;
    }
    ++rep.checked;
  }
  return rep;
}

}  // namespace apdt
