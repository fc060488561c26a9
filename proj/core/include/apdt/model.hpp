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

#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include "apdt/dataset.hpp"
#include "apdt/tensor.hpp"

namespace apdt {

enum class StateEncoder { kAttention, kPadded };

std::string to_string(StateEncoder e);
StateEncoder state_encoder_from_string(std::string_view s);

struct ModelConfig {
  int d_model = 64;
  int d_k = 32;
  int n_layers = 2;
  int n_heads = 2;
  int context_window = 20;  // steps
  int prompt_len = 5;       // K
  int u_max = 32;           // padded encoder capacity
  StateEncoder encoder = StateEncoder::kAttention;

  int max_steps() const { return prompt_len + context_window; }
  friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

void validate(const ModelConfig& cfg);

/// Fixed input scales, stored with the weights.
struct Normalizers {
  double pos_x = 250.0;
  double pos_y = 250.0;
  double aoi = 25.0;
  double ret = 100.0;
  double cost = 90000.0;

  static Normalizers from_env(const EnvConfig& env);
  friend bool operator==(const Normalizers&, const Normalizers&) = default;
};

struct BlockParams {
  Tensor ln1_g, ln1_b;
  Tensor w_qkv, b_qkv;
  Tensor w_o, b_o;
  Tensor ln2_g, ln2_b;
  Tensor w_fc, b_fc;
  Tensor w_proj, b_proj;

  friend bool operator==(const BlockParams&, const BlockParams&) = default;
};

/// Every learnable tensor. Matrices are stored (in x out).
struct ModelParams {
  // Set attention over users: query from the UAV position, keys/values from
  // per-user (x, y, aoi).
  Tensor w_q, b_q;    // 2 x d_k
  Tensor w_k, b_k;    // 3 x d_k
  Tensor w_v, b_v;    // 3 x d_k
  Tensor w_sg;        // d_k x d_model (aggregate -> token)
  Tensor w_sq;        // 2 x d_model (UAV position -> token)
  Tensor b_s;         // 1 x d_model
  Tensor no_user;     // 1 x d_k, stands in for the aggregate when K(t) = 0
  // Zero-padded baseline encoder.
  Tensor w_pad, b_pad;  // (3 u_max + 2) x d_model
  // Scalar and action token encoders.
  Tensor w_r, b_r;
  Tensor w_c, b_c;
  Tensor w_a, b_a;
  Tensor type_emb;  // 4 x d_model
  Tensor time_emb;  // max_steps x d_model
  std::vector<BlockParams> blocks;
  Tensor lnf_g, lnf_b;
  Tensor w_head, b_head;  // d_model x 3

  /// Visits (name, tensor) in a fixed canonical order; empty tensors of the
  /// unused encoder are visited too.
  template <class F>
  void for_each(F&& f) {
    visit(*this, f);
  }
  template <class F>
  void for_each(F&& f) const {
    visit(*this, f);
  }

  std::size_t parameter_count() const;
  friend bool operator==(const ModelParams&, const ModelParams&) = default;

 private:
  template <class Self, class F>
  static void visit(Self& p, F& f) {
    f("w_q", p.w_q);
    f("b_q", p.b_q);
    f("w_k", p.w_k);
    f("b_k", p.b_k);
    f("w_v", p.w_v);
    f("b_v", p.b_v);
    f("w_sg", p.w_sg);
    f("w_sq", p.w_sq);
    f("b_s", p.b_s);
    f("no_user", p.no_user);
    f("w_pad", p.w_pad);
    f("b_pad", p.b_pad);
    f("w_r", p.w_r);
    f("b_r", p.b_r);
    f("w_c", p.w_c);
    f("b_c", p.b_c);
    f("w_a", p.w_a);
    f("b_a", p.b_a);
    f("type_emb", p.type_emb);
    f("time_emb", p.time_emb);
    for (std::size_t l = 0; l < p.blocks.size(); ++l) {
      auto& b = p.blocks[l];
      const std::string pre = "blocks." + std::to_string(l) + ".";
      f(pre + "ln1_g", b.ln1_g);
      f(pre + "ln1_b", b.ln1_b);
      f(pre + "w_qkv", b.w_qkv);
      f(pre + "b_qkv", b.b_qkv);
      f(pre + "w_o", b.w_o);
      f(pre + "b_o", b.b_o);
      f(pre + "ln2_g", b.ln2_g);
      f(pre + "ln2_b", b.ln2_b);
      f(pre + "w_fc", b.w_fc);
      f(pre + "b_fc", b.b_fc);
      f(pre + "w_proj", b.w_proj);
      f(pre + "b_proj", b.b_proj);
    }
    f("lnf_g", p.lnf_g);
    f("lnf_b", p.lnf_b);
    f("w_head", p.w_head);
    f("b_head", p.b_head);
  }
};

/// Gaussian(0, 0.02) weights, zero biases and embeddings, unit norm gains.
ModelParams init_params(const ModelConfig& cfg, std::uint64_t seed);
/// Same shapes, all zeros.
ModelParams zeros_like(const ModelParams& p);
/// 64-bit FNV-1a over the raw parameter bytes.
std::uint64_t fingerprint(const ModelParams& p);

struct Model {
  ModelConfig config;
  Normalizers norm;
  ModelParams params;
  std::uint64_t seed = 0;
};

Model make_model(const ModelConfig& cfg, const Normalizers& norm, std::uint64_t seed);

/// Largest value the head can emit; the squashing map is kHeadScale*tanh.
inline constexpr double kHeadScale = 1.0 - 1e-12;

// ---------------------------------------------------------------------------
// State encoders
// ---------------------------------------------------------------------------

struct SetAttentionCache {
  bool empty = false;
  double q[2] = {0.0, 0.0};
  Tensor feats;   // m x 3, normalised (x, y, aoi)
  Tensor query;   // 1 x d_k
  Tensor keys;    // m x d_k
  Tensor values;  // m x d_k
  std::vector<double> weights;  // softmax over users
  Tensor aggregate;             // 1 x d_k
};

/// Attention pooling over the user set followed by the token projection.
/// Invariant to the order of users in `state`.
std::vector<double> encode_state(const StateSnapshot& state, const ModelParams& p,
                                 const ModelConfig& cfg, const Normalizers& norm,
                                 SetAttentionCache* cache = nullptr);

/// Conventional fixed-width encoder: user features in id order, zero-padded
/// to u_max slots, then one affine map. Throws std::length_error past u_max.
std::vector<double> encode_state_padded(const StateSnapshot& state, const ModelParams& p,
                                        const ModelConfig& cfg, const Normalizers& norm,
                                        std::vector<double>* input_cache = nullptr);

// ---------------------------------------------------------------------------
// Sequence model
// ---------------------------------------------------------------------------

struct LayerCache {
  Tensor x_in;
  LayerNormCache ln1;
  Tensor h1;
  Tensor qkv;
  std::vector<Tensor> probs;  // per head, n x n, lower triangular
  Tensor attn;                // concatenated head outputs
  Tensor x_mid;
  LayerNormCache ln2;
  Tensor h2;
  Tensor fc_pre;
  Tensor fc_act;
};

struct ForwardCache {
  std::uint64_t params_fingerprint = 0;
  std::vector<TokenType> types;
  std::vector<int> timesteps;
  std::vector<double> scalars;            // normalised R / C per token
  std::vector<ActionVec> actions;         // per token (action tokens only)
  std::vector<SetAttentionCache> sets;    // per token (state tokens only)
  std::vector<std::vector<double>> padded_inputs;
  std::vector<LayerCache> layers;
  Tensor x_final;
  LayerNormCache lnf;
  Tensor h_final;
  std::vector<std::size_t> pred_positions;
  Tensor head_pre;
};

struct ForwardResult {
  /// One row per state token: the predicted normalised action for that step.
  Tensor actions;
  /// Step index (within the sequence) of each row.
  std::vector<std::size_t> steps;
  ForwardCache cache;
};

ForwardResult forward(const Model& model, const TokenSequence& seq);

/// Exact reverse-mode gradients of a scalar loss given dL/d(actions).
/// Accumulates into `grads`. Throws std::logic_error if the parameters have
/// changed since the forward pass.
void backward(const Model& model, const ForwardCache& cache, const Tensor& d_actions,
              ModelParams& grads);
ModelParams backward(const Model& model, const ForwardCache& cache, const Tensor& d_actions);

/// Mean squared error over all rows and the 3 components.
double mse_loss(const Tensor& predicted, const Tensor& expert);

/// Expert (normalised) actions of the non-prompt steps, one row each.
Tensor expert_actions(const TokenSequence& seq);

/// Rows of `predicted` belonging to non-prompt steps.
Tensor main_rows(const ForwardResult& result, int prompt_steps);

/// Forward + squared error on non-prompt steps + backward, scaled by
/// `scale` (typically 1 / (3 * total action count)). Returns the unscaled
/// sum of squared errors.
double accumulate_gradients(const Model& model, const TokenSequence& seq, double scale,
                            ModelParams& grads);

/// Loss used by the gradient checker: mean squared error of the non-prompt
/// predictions against the sequence's own action tokens.
double sequence_loss(const Model& model, const TokenSequence& seq);

struct GradCheckReport {
  double max_rel_error = 0.0;
  std::string worst_param;
  std::size_t worst_index = 0;
  std::size_t checked = 0;
};

/// Central differences with step h on every coordinate (or on
/// `sample_coords` random coordinates when non-zero). Relative error is
/// |g - g_num| / max(1, |g|, |g_num|).
GradCheckReport grad_check(const Model& model, const TokenSequence& seq, double h = 1e-4,
                           std::size_t sample_coords = 0, std::uint64_t seed = 0);

}  // namespace apdt
