// Copyright 2026 The ccperso Authors. All Rights Reserved.
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

#include "ccperso/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <numeric>

#include "ccperso/error.hpp"
#include "ccperso/simd/kernels.hpp"

namespace ccperso {

std::size_t shape_size(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1},
                         std::multiplies<>());
}

std::string shape_string(const Shape& shape) {
  std::string s = "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) s += "x";
    s += std::to_string(shape[i]);
  }
  return s + "]";
}

Tensor::Tensor(Shape shape, double fill)
    : shape_(std::move(shape)), data_(shape_size(shape_), fill) {}

Tensor::Tensor(Shape shape, std::vector<double> data)
    : shape_(std::move(shape)), data_(std::move(data)) {
  if (shape_size(shape_) != data_.size()) {
    throw ShapeError("tensor shape " + shape_string(shape_) + " holds " +
                     std::to_string(shape_size(shape_)) + " values, got " +
                     std::to_string(data_.size()));
  }
}

Tensor Tensor::vector(std::vector<double> v) {
  const std::size_t n = v.size();
  return Tensor({n}, std::move(v));
}

Tensor Tensor::matrix(std::size_t rows, std::size_t cols,
                      std::vector<double> v) {
  return Tensor({rows, cols}, std::move(v));
}

Tensor Tensor::matrix(std::initializer_list<std::initializer_list<double>> rows) {
  const std::size_t r = rows.size();
  const std::size_t c = r ? rows.begin()->size() : 0;
  std::vector<double> data;
  data.reserve(r * c);
  for (const auto& row : rows) {
    if (row.size() != c) throw ShapeError("ragged matrix literal");
    data.insert(data.end(), row.begin(), row.end());
  }
  return Tensor({r, c}, std::move(data));
}

std::size_t Tensor::rows() const {
  if (shape_.size() <= 1) return 1;
  return shape_[0];
}

std::size_t Tensor::cols() const {
  if (shape_.empty()) return 1;
  if (shape_.size() == 1) return shape_[0];
  return data_.size() / std::max<std::size_t>(shape_[0], 1);
}

void Tensor::reshape(Shape shape) {
  if (shape_size(shape) != data_.size()) {
    throw ShapeError("cannot reshape " + shape_string(shape_) + " to " +
                     shape_string(shape));
  }
  shape_ = std::move(shape);
}

void Tensor::fill(double v) { std::fill(data_.begin(), data_.end(), v); }

bool Tensor::all_finite() const {
  return std::all_of(data_.begin(), data_.end(),
                     [](double x) { return std::isfinite(x); });
}

namespace ops {
namespace {

void require_matrix(const Tensor& t, const char* op) {
  if (t.rank() != 2) {
    throw ShapeError(std::string(op) + ": expected a matrix, got " +
                     shape_string(t.shape()));
  }
}

void require_same(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw ShapeError(std::string(op) + ": shape mismatch " +
                     shape_string(a.shape()) + " vs " +
                     shape_string(b.shape()));
  }
}

}  // namespace

Tensor matmul(const Tensor& a, const Tensor& b) {
  require_matrix(a, "matmul");
  require_matrix(b, "matmul");
  if (a.dim(1) != b.dim(0)) {
    throw ShapeError("matmul: inner dimensions differ " +
                     shape_string(a.shape()) + " x " + shape_string(b.shape()));
  }
  Tensor c({a.dim(0), b.dim(1)});
  simd::kernels().gemm_nn(a.ptr(), b.ptr(), c.ptr(), a.dim(0), a.dim(1),
                          b.dim(1), false);
  return c;
}

Tensor matmul_nt(const Tensor& a, const Tensor& b) {
  require_matrix(a, "matmul_nt");
  require_matrix(b, "matmul_nt");
  if (a.dim(1) != b.dim(1)) {
    throw ShapeError("matmul_nt: inner dimensions differ " +
                     shape_string(a.shape()) + " x " +
                     shape_string(b.shape()) + "^T");
  }
  Tensor c({a.dim(0), b.dim(0)});
  simd::kernels().gemm_nt(a.ptr(), b.ptr(), c.ptr(), a.dim(0), a.dim(1),
                          b.dim(0), false);
  return c;
}

Tensor matmul_tn(const Tensor& a, const Tensor& b) {
  require_matrix(a, "matmul_tn");
  require_matrix(b, "matmul_tn");
  if (a.dim(0) != b.dim(0)) {
    throw ShapeError("matmul_tn: inner dimensions differ " +
                     shape_string(a.shape()) + "^T x " +
                     shape_string(b.shape()));
  }
  Tensor c({a.dim(1), b.dim(1)});
  simd::kernels().gemm_tn(a.ptr(), b.ptr(), c.ptr(), a.dim(1), a.dim(0),
                          b.dim(1), false);
  return c;
}

Tensor transpose(const Tensor& a) {
  require_matrix(a, "transpose");
  Tensor t({a.dim(1), a.dim(0)});
  for (std::size_t i = 0; i < a.dim(0); ++i)
    for (std::size_t j = 0; j < a.dim(1); ++j) t.at(j, i) = a.at(i, j);
  return t;
}

Tensor add(const Tensor& a, const Tensor& b) {
  require_same(a, b, "add");
  Tensor c(a.shape());
  simd::kernels().add(a.ptr(), b.ptr(), c.ptr(), a.size());
  return c;
}

Tensor sub(const Tensor& a, const Tensor& b) {
  require_same(a, b, "sub");
  Tensor c(a.shape());
  simd::kernels().sub(a.ptr(), b.ptr(), c.ptr(), a.size());
  return c;
}

Tensor mul(const Tensor& a, const Tensor& b) {
  require_same(a, b, "mul");
  Tensor c(a.shape());
  simd::kernels().mul(a.ptr(), b.ptr(), c.ptr(), a.size());
  return c;
}

Tensor scale(const Tensor& a, double s) {
  Tensor c(a.shape());
  simd::kernels().scale(a.ptr(), s, c.ptr(), a.size());
  return c;
}

Tensor add_row(const Tensor& a, const Tensor& row) {
  if (row.size() != a.cols()) {
    throw ShapeError("add_row: row of " + std::to_string(row.size()) +
                     " values for " + shape_string(a.shape()));
  }
  Tensor c(a.shape());
  const auto& k = simd::kernels();
  for (std::size_t r = 0; r < a.rows(); ++r)
    k.add(a.row(r).data(), row.ptr(), c.row(r).data(), a.cols());
  return c;
}

Tensor mul_row(const Tensor& a, const Tensor& row) {
  if (row.size() != a.cols()) {
    throw ShapeError("mul_row: row of " + std::to_string(row.size()) +
                     " values for " + shape_string(a.shape()));
  }
  Tensor c(a.shape());
  const auto& k = simd::kernels();
  for (std::size_t r = 0; r < a.rows(); ++r)
    k.mul(a.row(r).data(), row.ptr(), c.row(r).data(), a.cols());
  return c;
}

Tensor tanh(const Tensor& a) {
  Tensor c(a.shape());
  for (std::size_t i = 0; i < a.size(); ++i) c[i] = std::tanh(a[i]);
  return c;
}

Tensor sigmoid(const Tensor& a) {
  Tensor c(a.shape());
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double x = a[i];
    // Split by sign so exp never overflows.
    if (x >= 0) {
      c[i] = 1.0 / (1.0 + std::exp(-x));
    } else {
      const double e = std::exp(x);
      c[i] = e / (1.0 + e);
    }
  }
  return c;
}

Tensor log_softmax(const Tensor& a) {
  if (a.size() == 0 || a.shape().back() == 0) {
    throw ShapeError("log_softmax: empty last dimension");
  }
  const std::size_t n = a.shape().back();
  const std::size_t outer = a.size() / n;
  Tensor c(a.shape());
  const auto& k = simd::kernels();
  for (std::size_t r = 0; r < outer; ++r) {
    const double* x = a.ptr() + r * n;
    double* y = c.ptr() + r * n;
    const double m = k.max(x, n);
    double s = 0.0;
    for (std::size_t j = 0; j < n; ++j) s += std::exp(x[j] - m);
    const double lse = m + std::log(s);
    for (std::size_t j = 0; j < n; ++j) y[j] = x[j] - lse;
  }
  return c;
}

}  // namespace ops
}  // namespace ccperso
