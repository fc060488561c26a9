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

#include <algorithm>
#include <cmath>
#include <numeric>

#include "apdt/model.hpp"
#include "apdt/mobility.hpp"
#include "oracles.hpp"

using namespace apdt;

namespace {

ModelConfig small_config(StateEncoder enc = StateEncoder::kAttention) {
  ModelConfig c;
  c.d_model = 16;
  c.d_k = 8;
  c.n_layers = 2;
  c.n_heads = 2;
  c.context_window = 6;
  c.prompt_len = 2;
  c.u_max = 10;
  c.encoder = enc;
  return c;
}

// Spreads weights so that a test actually exercises non-linear regimes.
void scale_params(ModelParams& p, double std, std::uint64_t seed) {
  Rng rng(seed);
  std::normal_distribution<double> n(0.0, std);
  p.for_each([&](std::string_view, Tensor& t) {
    for (std::size_t i = 0; i < t.size(); ++i) t[i] += n(rng);
  });
}

StateSnapshot random_snapshot(std::mt19937_64& gen, std::size_t users) {
  EnvConfig c;
  const EnvState s = apdt::testing::random_state(c, gen, users);
  return snapshot(s);
}

TokenSequence random_sequence(std::mt19937_64& gen, std::size_t steps, int prompt_steps) {
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  TokenSequence seq;
  for (std::size_t i = 0; i < steps; ++i) {
    append_step(seq, -100.0 * (u(gen) + 1.5), 40000.0 * (u(gen) + 1.2),
                random_snapshot(gen, 1 + gen() % 7), {u(gen), u(gen), u(gen)});
  }
  seq.prompt_steps = prompt_steps;
  return seq;
}

// Naive recomputation of the set-attention token.
std::vector<double> encode_oracle(const StateSnapshot& s, const ModelParams& p,
                                  const Normalizers& nm, std::size_t dk) {
  const double q0 = s.uav.x / nm.pos_x, q1 = s.uav.y / nm.pos_y;
  std::vector<double> query(dk);
  for (std::size_t j = 0; j < dk; ++j) query[j] = p.b_q[j] + q0 * p.w_q(0, j) + q1 * p.w_q(1, j);
  std::vector<double> agg(dk, 0.0);
  if (s.users.empty()) {
    for (std::size_t j = 0; j < dk; ++j) agg[j] = p.no_user[j];
  } else {
    std::vector<double> score, w;
    std::vector<std::vector<double>> vals;
    for (const auto& u : s.users) {
      const double f[3] = {u.pos.x / nm.pos_x, u.pos.y / nm.pos_y,
                           static_cast<double>(u.aoi) / nm.aoi};
      std::vector<double> k(dk), v(dk);
      for (std::size_t j = 0; j < dk; ++j) {
        k[j] = p.b_k[j];
        v[j] = p.b_v[j];
        for (int i = 0; i < 3; ++i) {
          k[j] += f[i] * p.w_k(i, j);
          v[j] += f[i] * p.w_v(i, j);
        }
      }
      double sc = 0.0;
      for (std::size_t j = 0; j < dk; ++j) sc += query[j] * k[j];
      score.push_back(sc / std::sqrt(static_cast<double>(dk)));
      vals.push_back(v);
    }
    const double mx = *std::max_element(score.begin(), score.end());
    double z = 0.0;
    for (double sc : score) z += std::exp(sc - mx);
    for (std::size_t u = 0; u < vals.size(); ++u) {
      const double a = std::exp(score[u] - mx) / z;
      for (std::size_t j = 0; j < dk; ++j) agg[j] += a * vals[u][j];
    }
  }
  const std::size_t d = p.b_s.cols();
  std::vector<double> out(d);
  for (std::size_t j = 0; j < d; ++j) {
    out[j] = p.b_s[j] + q0 * p.w_sq(0, j) + q1 * p.w_sq(1, j);
    for (std::size_t i = 0; i < dk; ++i) out[j] += agg[i] * p.w_sg(i, j);
  }
  return out;
}

double max_rel(const std::vector<double>& a, const std::vector<double>& b) {
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, apdt::testing::rel_err(a[i], b[i]));
  return m;
}

}  // namespace

TEST_CASE("set attention weights") {
  Model m = make_model(small_config(), {}, 1);
  scale_params(m.params, 0.5, 2);
  std::mt19937_64 gen(3);
  SUBCASE("single user gets all the weight") {
    auto s = random_snapshot(gen, 1);
    SetAttentionCache c;
    encode_state(s, m.params, m.config, m.norm, &c);
    REQUIRE(c.weights.size() == 1);
    CHECK(c.weights[0] == 1.0);
  }
  SUBCASE("identical users split evenly") {
    auto s = random_snapshot(gen, 1);
    s.users.push_back(s.users[0]);
    s.users[1].id = 99;
    SetAttentionCache c;
    encode_state(s, m.params, m.config, m.norm, &c);
    CHECK(c.weights[0] == doctest::Approx(0.5));
    CHECK(c.weights[1] == doctest::Approx(0.5));
  }
  SUBCASE("weights form a distribution") {
    for (int i = 0; i < 50; ++i) {
      auto s = random_snapshot(gen, 1 + gen() % 20);
      SetAttentionCache c;
      encode_state(s, m.params, m.config, m.norm, &c);
      double sum = 0.0;
      for (double w : c.weights) {
        CHECK(w >= 0.0);
        sum += w;
      }
      CHECK(std::abs(sum - 1.0) <= 1e-9);
    }
  }
}

TEST_CASE("encode_state matches a naive recomputation") {
  Model m = make_model(small_config(), {}, 4);
  scale_params(m.params, 0.3, 5);
  std::mt19937_64 gen(6);
  for (int i = 0; i < 50; ++i) {
    const auto s = random_snapshot(gen, gen() % 9);
    const auto got = encode_state(s, m.params, m.config, m.norm);
    CHECK(max_rel(got, encode_oracle(s, m.params, m.norm, 8)) <= 1e-12);
  }
}

TEST_CASE("encode_state is permutation invariant") {
  Model m = make_model(small_config(), {}, 7);
  scale_params(m.params, 0.5, 8);
  std::mt19937_64 gen(9);
  const auto s = random_snapshot(gen, 7);
  const auto ref = encode_state(s, m.params, m.config, m.norm);
  std::vector<std::size_t> idx(7);
  std::iota(idx.begin(), idx.end(), 0);
  double worst = 0.0;
  do {
    StateSnapshot p = s;
    for (std::size_t i = 0; i < idx.size(); ++i) p.users[i] = s.users[idx[i]];
    worst = std::max(worst, max_rel(encode_state(p, m.params, m.config, m.norm), ref));
  } while (std::next_permutation(idx.begin(), idx.end()));
  CHECK(worst <= 1e-6);
}

TEST_CASE("padded encoder") {
  Model m = make_model(small_config(StateEncoder::kPadded), {}, 10);
  scale_params(m.params, 0.5, 11);
  std::mt19937_64 gen(12);
  SUBCASE("exactly u_max users and zero users") {
    std::vector<double> x;
    auto s = random_snapshot(gen, 10);
    CHECK_NOTHROW(encode_state_padded(s, m.params, m.config, m.norm, &x));
    CHECK(std::none_of(x.begin(), x.begin() + 30, [](double v) { return v == 0.0; }));
    s.users.clear();
    encode_state_padded(s, m.params, m.config, m.norm, &x);
    CHECK(std::all_of(x.begin(), x.begin() + 30, [](double v) { return v == 0.0; }));
    s = random_snapshot(gen, 11);
    CHECK_THROWS_AS(encode_state_padded(s, m.params, m.config, m.norm), std::length_error);
  }
  SUBCASE("swapping user ids changes the padded output") {
    auto s = random_snapshot(gen, 2);
    auto swapped = s;
    std::swap(swapped.users[0].id, swapped.users[1].id);
    const auto a = encode_state_padded(s, m.params, m.config, m.norm);
    const auto b = encode_state_padded(swapped, m.params, m.config, m.norm);
    CHECK(max_rel(a, b) > 1e-3);
  }
}

TEST_CASE("constant network emits squash(head bias)") {
  Model m = make_model(small_config(), {}, 13);
  m.params.for_each([](std::string_view, Tensor& t) { t.fill(0.0); });
  m.params.b_head[0] = 0.3;
  m.params.b_head[1] = -2.0;
  m.params.b_head[2] = 40.0;
  std::mt19937_64 gen(14);
  const auto seq = random_sequence(gen, 4, 0);
  const auto res = forward(m, seq);
  for (std::size_t r = 0; r < res.actions.rows(); ++r) {
    CHECK(res.actions(r, 0) == doctest::Approx(std::tanh(0.3)));
    CHECK(res.actions(r, 1) == doctest::Approx(std::tanh(-2.0)));
    CHECK(res.actions(r, 2) < 1.0);
  }
}

TEST_CASE("causal mask: suffix perturbations leave earlier predictions bitwise intact") {
  Model m = make_model(small_config(), {}, 15);
  scale_params(m.params, 0.3, 16);
  std::mt19937_64 gen(17);
  for (int trial = 0; trial < 10; ++trial) {
    const auto seq = random_sequence(gen, 6, 2);
    const auto base = forward(m, seq);
    for (std::size_t i = 0; i < seq.steps(); ++i) {
      // Perturb every token after the state token of step i (its prediction slot).
      auto other = seq;
      for (std::size_t t = 4 * i + 3; t < other.tokens.size(); ++t) {
        auto& tok = other.tokens[t];
        if (auto* v = std::get_if<double>(&tok.value)) *v += 17.0;
        if (auto* a = std::get_if<ActionVec>(&tok.value)) (*a)[0] = -(*a)[0] + 0.1;
        if (auto* s = std::get_if<StateSnapshot>(&tok.value)) s->users.pop_back();
      }
      const auto pert = forward(m, other);
      for (std::size_t j = 0; j < 3; ++j) CHECK(pert.actions(i, j) == base.actions(i, j));
      // Prefix oracle: the truncated sequence predicts the same value.
      TokenSequence prefix;
      prefix.tokens.assign(seq.tokens.begin(), seq.tokens.begin() + 4 * (i + 1));
      prefix.prompt_steps = std::min<int>(seq.prompt_steps, static_cast<int>(i + 1));
      const auto pre = forward(m, prefix);
      for (std::size_t j = 0; j < 3; ++j) CHECK(pre.actions(i, j) == base.actions(i, j));
    }
  }
}

TEST_CASE("variable user counts, finite in-range outputs") {
  Model m = make_model(small_config(), {}, 18);
  std::mt19937_64 gen(19);
  for (int i = 0; i < 1000; ++i) {
    const auto seq = random_sequence(gen, 1 + gen() % 8, 0);
    const auto res = forward(m, seq);
    for (std::size_t k = 0; k < res.actions.size(); ++k) {
      CHECK(std::isfinite(res.actions[k]));
      CHECK(std::abs(res.actions[k]) < 1.0);
    }
  }
}

TEST_CASE("transformer attention rows are distributions") {
  Model m = make_model(small_config(), {}, 20);
  scale_params(m.params, 0.3, 21);
  std::mt19937_64 gen(22);
  const auto res = forward(m, random_sequence(gen, 5, 1));
  for (const auto& layer : res.cache.layers) {
    for (const auto& P : layer.probs) {
      for (std::size_t i = 0; i < P.rows(); ++i) {
        double s = 0.0;
        for (std::size_t j = 0; j < P.cols(); ++j) {
          CHECK(P(i, j) >= 0.0);
          if (j > i) CHECK(P(i, j) == 0.0);
          s += P(i, j);
        }
        CHECK(std::abs(s - 1.0) <= 1e-9);
      }
    }
  }
}

TEST_CASE("mse loss") {
  Tensor a(3, 3, 0.25), b(3, 3, 0.25);
  CHECK(mse_loss(a, b) == 0.0);
  for (std::size_t i = 0; i < a.size(); ++i) a[i] += 0.1;
  CHECK(mse_loss(a, b) == doctest::Approx(0.01));
  // Row order does not matter.
  Tensor x(2, 3), y(2, 3), xs(2, 3), ys(2, 3);
  for (std::size_t i = 0; i < 6; ++i) {
    x[i] = 0.1 * i;
    y[i] = -0.05 * i * i;
  }
  for (std::size_t j = 0; j < 3; ++j) {
    xs(0, j) = x(1, j);
    xs(1, j) = x(0, j);
    ys(0, j) = y(1, j);
    ys(1, j) = y(0, j);
  }
  CHECK(mse_loss(x, y) == mse_loss(xs, ys));
}

TEST_CASE("backward") {
  Model m = make_model(small_config(), {}, 23);
  scale_params(m.params, 0.2, 24);
  std::mt19937_64 gen(25);
  const auto seq = random_sequence(gen, 3, 1);
  const auto res = forward(m, seq);
  SUBCASE("zero upstream gradient gives zero gradients") {
    const auto g = backward(m, res.cache, Tensor(res.actions.rows(), 3));
    g.for_each([](std::string_view, const Tensor& t) {
      for (std::size_t i = 0; i < t.size(); ++i) CHECK(t[i] == 0.0);
    });
  }
  SUBCASE("deterministic") {
    Tensor d(res.actions.rows(), 3, 0.7);
    CHECK(backward(m, res.cache, d) == backward(m, res.cache, d));
  }
  SUBCASE("stale cache is rejected") {
    Model changed = m;
    changed.params.b_head[0] += 1.0;
    CHECK_THROWS_AS(backward(changed, res.cache, Tensor(res.actions.rows(), 3)),
                    std::logic_error);
  }
}

TEST_CASE("gradient check on the reference configuration") {
  for (auto enc : {StateEncoder::kAttention, StateEncoder::kPadded}) {
    ModelConfig c = small_config(enc);
    c.prompt_len = 0;
    c.context_window = 2;
    Model m = make_model(c, {}, 26);
    scale_params(m.params, 0.3, 27);
    std::mt19937_64 gen(28);
    const auto seq = random_sequence(gen, 2, 0);
    const auto rep = grad_check(m, seq);
    CAPTURE(rep.worst_param);
    CHECK(rep.max_rel_error <= 1e-4);
    CHECK(rep.checked == m.params.parameter_count());
  }
}

TEST_CASE("gradient check error shrinks with the step size") {
  ModelConfig c = small_config();
  c.prompt_len = 0;
  c.context_window = 2;
  Model m = make_model(c, {}, 29);
  scale_params(m.params, 0.3, 30);
  std::mt19937_64 gen(31);
  const auto seq = random_sequence(gen, 2, 0);
  const auto coarse = grad_check(m, seq, 1e-2, 200, 5);
  const auto fine = grad_check(m, seq, 1e-3, 200, 5);
  CHECK(fine.max_rel_error < coarse.max_rel_error);
}

TEST_CASE("unused value columns get zero gradient") {
  // A user at the origin with zero AoI has an all-zero feature row, so no
  // entry of W_V touches the output.
  ModelConfig c = small_config();
  c.prompt_len = 0;
  c.context_window = 1;
  Model m = make_model(c, {}, 32);
  scale_params(m.params, 0.3, 33);
  TokenSequence seq;
  StateSnapshot s;
  s.uav = {10, 20};
  s.users.push_back({0, {0, 0}, 0});
  append_step(seq, -5, 400, s, {0.1, 0.2, 0.3});
  const auto res = forward(m, seq);
  const auto g = backward(m, res.cache, Tensor(1, 3, 1.0));
  for (std::size_t j = 0; j < g.w_v.cols(); ++j) {
    for (std::size_t i = 0; i < 3; ++i) CHECK(g.w_v(i, j) == 0.0);
  }
  const auto rep = grad_check(m, seq);
  CHECK(rep.max_rel_error <= 1e-4);
}

TEST_CASE("init is deterministic and fingerprints differ") {
  const auto a = init_params(small_config(), 5);
  const auto b = init_params(small_config(), 5);
  const auto c = init_params(small_config(), 6);
  CHECK(a == b);
  CHECK(fingerprint(a) == fingerprint(b));
  CHECK(fingerprint(a) != fingerprint(c));
  CHECK_THROWS(validate(ModelConfig{.d_model = 15, .n_heads = 2}));
}
