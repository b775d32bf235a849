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

#include <cmath>

#include <gtest/gtest.h>

#include "ccperso/error.hpp"
#include "ccperso/rng.hpp"
#include "ccperso/tensor.hpp"

namespace ccperso {
namespace {

Tensor random_matrix(Rng& rng, std::size_t r, std::size_t c) {
  Tensor t({r, c});
  for (double& x : t.data()) x = rng.normal();
  return t;
}

TEST(Tensor, ShapeMustMatchData) {
  EXPECT_THROW(Tensor({2, 3}, std::vector<double>(5)), ShapeError);
  Tensor t({2, 3}, std::vector<double>(6, 1.0));
  EXPECT_EQ(t.rows(), 2u);
  EXPECT_EQ(t.cols(), 3u);
  EXPECT_THROW(t.reshape({4, 2}), ShapeError);
  t.reshape({3, 2});
  EXPECT_EQ(t.rows(), 3u);
}

TEST(Matmul, IdentityLeavesMatrixUnchanged) {
  const Tensor eye = Tensor::matrix({{1, 0}, {0, 1}});
  const Tensor a = Tensor::matrix({{1.5, -2}, {3, 0.25}});
  EXPECT_EQ(ops::matmul(eye, a), a);
}

TEST(Matmul, HandSum) {
  const Tensor a = Tensor::matrix({{1, 2}, {3, 4}});
  const Tensor b = Tensor::matrix({{1}, {1}});
  EXPECT_EQ(ops::matmul(a, b), Tensor::matrix({{3}, {7}}));
}

TEST(Matmul, MatchesNaiveTripleLoop) {
  Rng rng(3);
  const Tensor a = random_matrix(rng, 3, 4);
  const Tensor b = random_matrix(rng, 4, 2);
  const Tensor c = ops::matmul(a, b);
  for (std::size_t i = 0; i < 3; ++i) {
    for (std::size_t j = 0; j < 2; ++j) {
      double s = 0;
      for (std::size_t p = 0; p < 4; ++p) s += a.at(i, p) * b.at(p, j);
      EXPECT_NEAR(c.at(i, j), s, 1e-14);
    }
  }
}

TEST(Matmul, TransposedVariantsAgree) {
  Rng rng(4);
  const Tensor a = random_matrix(rng, 5, 3);
  const Tensor b = random_matrix(rng, 4, 3);
  const Tensor nt = ops::matmul_nt(a, b);
  const Tensor ref = ops::matmul(a, ops::transpose(b));
  for (std::size_t i = 0; i < nt.size(); ++i) EXPECT_NEAR(nt[i], ref[i], 1e-13);
  const Tensor tn = ops::matmul_tn(b, random_matrix(rng, 4, 2));
  EXPECT_EQ(tn.shape(), (Shape{3, 2}));
}

TEST(Matmul, DimensionMismatchIsShapeError) {
  EXPECT_THROW(ops::matmul(Tensor({2, 3}), Tensor({2, 3})), ShapeError);
  EXPECT_THROW(ops::matmul(Tensor({6}), Tensor({6, 1})), ShapeError);
}

TEST(LogSoftmax, SymmetricPair) {
  const Tensor y = ops::log_softmax(Tensor::vector({0, 0}));
  EXPECT_DOUBLE_EQ(y[0], std::log(0.5));
  EXPECT_DOUBLE_EQ(y[1], std::log(0.5));
}

TEST(LogSoftmax, StableForLargeInputs) {
  const Tensor y = ops::log_softmax(Tensor::vector({1000, 0}));
  EXPECT_TRUE(y.all_finite());
  EXPECT_NEAR(y[0], 0.0, 1e-300);
  EXPECT_NEAR(y[1], -1000.0, 1e-9);
}

TEST(LogSoftmax, RowsExponentiateToOne) {
  Rng rng(5);
  for (int trial = 0; trial < 200; ++trial) {
    Tensor x({3, 5});
    for (double& v : x.data()) v = rng.normal(0, 1 + trial);
    const Tensor y = ops::log_softmax(x);
    for (std::size_t r = 0; r < 3; ++r) {
      double s = 0;
      for (double v : y.row(r)) s += std::exp(v);
      EXPECT_NEAR(s, 1.0, 1e-12);
    }
  }
}

TEST(LogSoftmax, WorksOverLastDimensionOfRank3) {
  Tensor x({2, 3, 4});
  for (std::size_t i = 0; i < x.size(); ++i) x[i] = 0.1 * static_cast<double>(i);
  const Tensor y = ops::log_softmax(x);
  for (std::size_t r = 0; r < 6; ++r) {
    double s = 0;
    for (std::size_t j = 0; j < 4; ++j) s += std::exp(y[r * 4 + j]);
    EXPECT_NEAR(s, 1.0, 1e-12);
  }
}

TEST(Sigmoid, SaturatesWithoutOverflow) {
  const Tensor y = ops::sigmoid(Tensor::vector({-800, 0, 800}));
  EXPECT_EQ(y[0], 0.0);
  EXPECT_EQ(y[1], 0.5);
  EXPECT_EQ(y[2], 1.0);
}

}  // namespace
}  // namespace ccperso
