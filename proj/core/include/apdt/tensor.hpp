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
#include <span>
#include <vector>

namespace apdt {

/// Dense row-major matrix of doubles. Vectors are stored as 1 x n.
///
/// All kernels below accumulate in a fixed order, and each output row
/// depends only on the matching input row, so results are bitwise
/// reproducible and independent of how many rows are processed together.
class Tensor {
 public:
  Tensor() = default;
  Tensor(std::size_t rows, std::size_t cols, double fill = 0.0)
      : rows_(rows), cols_(cols), data_(rows * cols, fill) {}

  std::size_t rows() const { return rows_; }
  std::size_t cols() const { return cols_; }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  double& operator()(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
  double operator()(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }
  double& operator[](std::size_t i) { return data_[i]; }
  double operator[](std::size_t i) const { return data_[i]; }

  double* row(std::size_t r) { return data_.data() + r * cols_; }
  const double* row(std::size_t r) const { return data_.data() + r * cols_; }
  double* data() { return data_.data(); }
  const double* data() const { return data_.data(); }
  std::span<double> span() { return data_; }
  std::span<const double> span() const { return data_; }

  void fill(double v);
  void resize(std::size_t rows, std::size_t cols, double fill = 0.0);

  friend bool operator==(const Tensor&, const Tensor&) = default;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<double> data_;
};

/// y[0:out] = b + x[0:in] * W, with W stored in x out.
void linear_row(const double* x, const Tensor& W, const Tensor& b, double* y);

/// Y = X W + b row by row.
Tensor linear(const Tensor& X, const Tensor& W, const Tensor& b);

/// Given dY for Y = X W + b: dW += X^T dY, db += sum rows of dY, and (when
/// dX is non-null) dX = dY W^T.
void linear_backward(const Tensor& X, const Tensor& W, const Tensor& dY, Tensor* dX,
                     Tensor& dW, Tensor& db);

/// Row-wise layer normalisation with gain/bias; caches xhat and 1/std.
struct LayerNormCache {
  Tensor xhat;
  std::vector<double> rstd;
};

Tensor layer_norm(const Tensor& X, const Tensor& gain, const Tensor& bias, LayerNormCache& cache);
/// Returns dX and accumulates dgain/dbias.
Tensor layer_norm_backward(const Tensor& dY, const Tensor& gain, const LayerNormCache& cache,
                           Tensor& dgain, Tensor& dbias);

double gelu(double x);
double gelu_grad(double x);

}  // namespace apdt
