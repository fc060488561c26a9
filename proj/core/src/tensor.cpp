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

#include "apdt/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

namespace apdt {

namespace {
constexpr double kLayerNormEps = 1e-5;
}

void Tensor::fill(double v) { std::fill(data_.begin(), data_.end(), v); }

void Tensor::resize(std::size_t rows, std::size_t cols, double fill) {
  rows_ = rows;
  cols_ = cols;
  data_.assign(rows * cols, fill);
}

void linear_row(const double* x, const Tensor& W, const Tensor& b, double* y) {
  const std::size_t in = W.rows();
  const std::size_t out = W.cols();
  if (b.empty()) {
    std::fill(y, y + out, 0.0);
  } else {
    std::copy(b.data(), b.data() + out, y);
  }
  for (std::size_t k = 0; k < in; ++k) {
    const double a = x[k];
    const double* w = W.row(k);
    for (std::size_t j = 0; j < out; ++j) y[j] += a * w[j];
  }
}

Tensor linear(const Tensor& X, const Tensor& W, const Tensor& b) {
  Tensor Y(X.rows(), W.cols());
  for (std::size_t i = 0; i < X.rows(); ++i) linear_row(X.row(i), W, b, Y.row(i));
  return Y;
}

void linear_backward(const Tensor& X, const Tensor& W, const Tensor& dY, Tensor* dX,
                     Tensor& dW, Tensor& db) {
  const std::size_t n = X.rows();
  const std::size_t in = W.rows();
  const std::size_t out = W.cols();
  for (std::size_t i = 0; i < n; ++i) {
    const double* dy = dY.row(i);
    const double* x = X.row(i);
    for (std::size_t k = 0; k < in; ++k) {
      const double a = x[k];
      double* dw = dW.row(k);
      for (std::size_t j = 0; j < out; ++j) dw[j] += a * dy[j];
    }
    if (!db.empty()) {
      double* dbp = db.data();
      for (std::size_t j = 0; j < out; ++j) dbp[j] += dy[j];
    }
  }
  if (dX) {
    dX->resize(n, in);
    for (std::size_t i = 0; i < n; ++i) {
      const double* dy = dY.row(i);
      double* dx = dX->row(i);
      for (std::size_t k = 0; k < in; ++k) {
        const double* w = W.row(k);
        double acc = 0.0;
        for (std::size_t j = 0; j < out; ++j) acc += dy[j] * w[j];
        dx[k] = acc;
      }
    }
  }
}

Tensor layer_norm(const Tensor& X, const Tensor& gain, const Tensor& bias, LayerNormCache& cache) {
  const std::size_t n = X.rows();
  const std::size_t d = X.cols();
  Tensor Y(n, d);
  cache.xhat.resize(n, d);
  cache.rstd.assign(n, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    const double* x = X.row(i);
    double mean = 0.0;
    for (std::size_t j = 0; j < d; ++j) mean += x[j];
    mean /= static_cast<double>(d);
    double var = 0.0;
    for (std::size_t j = 0; j < d; ++j) var += (x[j] - mean) * (x[j] - mean);
    var /= static_cast<double>(d);
    const double rstd = 1.0 / std::sqrt(var + kLayerNormEps);
    cache.rstd[i] = rstd;
    double* xh = cache.xhat.row(i);
    double* y = Y.row(i);
    for (std::size_t j = 0; j < d; ++j) {
      xh[j] = (x[j] - mean) * rstd;
      y[j] = gain[j] * xh[j] + bias[j];
    }
  }
  return Y;
}

Tensor layer_norm_backward(const Tensor& dY, const Tensor& gain, const LayerNormCache& cache,
                           Tensor& dgain, Tensor& dbias) {
  const std::size_t n = dY.rows();
  const std::size_t d = dY.cols();
  Tensor dX(n, d);
  std::vector<double> dxhat(d);
  for (std::size_t i = 0; i < n; ++i) {
    const double* dy = dY.row(i);
    const double* xh = cache.xhat.row(i);
    double mean_dxhat = 0.0;
    double mean_dxhat_xhat = 0.0;
    for (std::size_t j = 0; j < d; ++j) {
      dgain[j] += dy[j] * xh[j];
      dbias[j] += dy[j];
      dxhat[j] = dy[j] * gain[j];
      mean_dxhat += dxhat[j];
      mean_dxhat_xhat += dxhat[j] * xh[j];
    }
    mean_dxhat /= static_cast<double>(d);
    mean_dxhat_xhat /= static_cast<double>(d);
    double* dx = dX.row(i);
    for (std::size_t j = 0; j < d; ++j) {
      dx[j] = cache.rstd[i] * (dxhat[j] - mean_dxhat - xh[j] * mean_dxhat_xhat);
    }
  }
  return dX;
}

namespace {
constexpr double kGeluC = 0.7978845608028654;  // sqrt(2/pi)
constexpr double kGeluA = 0.044715;
}  // namespace

double gelu(double x) {
  const double u = kGeluC * (x + kGeluA * x * x * x);
  return 0.5 * x * (1.0 + std::tanh(u));
}

double gelu_grad(double x) {
  const double u = kGeluC * (x + kGeluA * x * x * x);
  const double th = std::tanh(u);
  const double du = kGeluC * (1.0 + 3.0 * kGeluA * x * x);
#ifdef APDT_MUTATE_BACKWARD
  // Test-only defect: drops the tanh' term.
  (void)du;
  return 0.5 * (1.0 + th);
#endif
  return 0.5 * (1.0 + th) + 0.5 * x * (1.0 - th * th) * du;
}

}  // namespace apdt
