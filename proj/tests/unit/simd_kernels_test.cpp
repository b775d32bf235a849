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

// Every compiled-in SIMD variant must agree with the scalar reference.

#include <cmath>
#include <vector>

#include <gtest/gtest.h>

#include "ccperso/error.hpp"
#include "ccperso/rng.hpp"
#include "ccperso/simd/kernels.hpp"

namespace ccperso::simd {
namespace {

std::vector<double> random_vec(Rng& rng, std::size_t n) {
  std::vector<double> v(n);
  for (double& x : v) x = rng.normal();
  return v;
}

void expect_close(const std::vector<double>& a, const std::vector<double>& b,
                  double tol) {
  ASSERT_EQ(a.size(), b.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    EXPECT_NEAR(a[i], b[i], tol * (1.0 + std::abs(b[i]))) << "index " << i;
  }
}

class KernelEquivalence : public ::testing::TestWithParam<const KernelTable*> {};

TEST_P(KernelEquivalence, ReductionsMatchScalar) {
  const KernelTable& ref = scalar_kernels();
  const KernelTable& k = *GetParam();
  Rng rng(11);
  for (std::size_t n : {0u, 1u, 3u, 4u, 5u, 7u, 8u, 9u, 16u, 31u, 33u, 64u, 101u}) {
    auto a = random_vec(rng, n);
    auto b = random_vec(rng, n);
    EXPECT_NEAR(k.dot(a.data(), b.data(), n), ref.dot(a.data(), b.data(), n), 1e-12 * (1 + n));
    EXPECT_NEAR(k.sum(a.data(), n), ref.sum(a.data(), n), 1e-12 * (1 + n));
    if (n > 0) {
      EXPECT_EQ(k.max(a.data(), n), ref.max(a.data(), n));
    }
  }
}

TEST_P(KernelEquivalence, ElementwiseMatchScalar) {
  const KernelTable& ref = scalar_kernels();
  const KernelTable& k = *GetParam();
  Rng rng(12);
  for (std::size_t n : {0u, 1u, 2u, 3u, 4u, 5u, 13u, 32u, 41u}) {
    auto a = random_vec(rng, n);
    auto b = random_vec(rng, n);
    std::vector<double> r(n), s(n);
    ref.add(a.data(), b.data(), r.data(), n);
    k.add(a.data(), b.data(), s.data(), n);
    EXPECT_EQ(r, s);
    ref.sub(a.data(), b.data(), r.data(), n);
    k.sub(a.data(), b.data(), s.data(), n);
    EXPECT_EQ(r, s);
    ref.mul(a.data(), b.data(), r.data(), n);
    k.mul(a.data(), b.data(), s.data(), n);
    EXPECT_EQ(r, s);
    ref.scale(a.data(), 0.37, r.data(), n);
    k.scale(a.data(), 0.37, s.data(), n);
    EXPECT_EQ(r, s);
    r = b;
    s = b;
    ref.axpy(-1.3, a.data(), r.data(), n);
    k.axpy(-1.3, a.data(), s.data(), n);
    expect_close(s, r, 1e-14);
    r = b;
    s = b;
    ref.mul_acc(a.data(), b.data(), r.data(), n);
    k.mul_acc(a.data(), b.data(), s.data(), n);
    expect_close(s, r, 1e-14);
  }
}

TEST_P(KernelEquivalence, GemmMatchesScalar) {
  const KernelTable& ref = scalar_kernels();
  const KernelTable& k = *GetParam();
  Rng rng(13);
  struct Dims {
    std::size_t m, kk, n;
  };
  for (Dims d : {Dims{1, 1, 1}, Dims{3, 4, 2}, Dims{5, 7, 9}, Dims{16, 32, 41}, Dims{2, 33, 3}}) {
    auto a = random_vec(rng, d.m * d.kk);
    auto b = random_vec(rng, d.kk * d.n);
    std::vector<double> r(d.m * d.n, 0.5), s(d.m * d.n, 0.5);
    ref.gemm_nn(a.data(), b.data(), r.data(), d.m, d.kk, d.n, true);
    k.gemm_nn(a.data(), b.data(), s.data(), d.m, d.kk, d.n, true);
    expect_close(s, r, 1e-12);

    auto bt = random_vec(rng, d.n * d.kk);
    ref.gemm_nt(a.data(), bt.data(), r.data(), d.m, d.kk, d.n, false);
    k.gemm_nt(a.data(), bt.data(), s.data(), d.m, d.kk, d.n, false);
    expect_close(s, r, 1e-12);

    auto at = random_vec(rng, d.kk * d.m);
    ref.gemm_tn(at.data(), b.data(), r.data(), d.m, d.kk, d.n, false);
    k.gemm_tn(at.data(), b.data(), s.data(), d.m, d.kk, d.n, false);
    expect_close(s, r, 1e-12);
  }
}

TEST_P(KernelEquivalence, SingleRowProductIsBitwiseRowOfBatch) {
  const KernelTable& k = *GetParam();
  Rng rng(14);
  const std::size_t m = 6, kk = 32, n = 41;
  auto a = random_vec(rng, m * kk);
  auto b = random_vec(rng, kk * n);
  std::vector<double> full(m * n);
  k.gemm_nn(a.data(), b.data(), full.data(), m, kk, n, false);
  for (std::size_t i = 0; i < m; ++i) {
    std::vector<double> one(n);
    k.gemm_nn(a.data() + i * kk, b.data(), one.data(), 1, kk, n, false);
    for (std::size_t j = 0; j < n; ++j) EXPECT_EQ(one[j], full[i * n + j]);
  }
}

TEST_P(KernelEquivalence, AdamMatchesScalar) {
  const KernelTable& ref = scalar_kernels();
  const KernelTable& k = *GetParam();
  Rng rng(15);
  const std::size_t n = 37;
  auto p0 = random_vec(rng, n);
  auto g = random_vec(rng, n);
  auto p1 = p0, p2 = p0;
  std::vector<double> m1(n), v1(n), m2(n), v2(n);
  for (int step = 1; step <= 3; ++step) {
    const double b1 = 1 - std::pow(0.9, step), b2 = 1 - std::pow(0.999, step);
    ref.adam(p1.data(), g.data(), m1.data(), v1.data(), n, 1e-2, 0.9, 0.999, 1e-8, b1, b2);
    k.adam(p2.data(), g.data(), m2.data(), v2.data(), n, 1e-2, 0.9, 0.999, 1e-8, b1, b2);
  }
  expect_close(p2, p1, 1e-14);
  expect_close(m2, m1, 1e-14);
  expect_close(v2, v1, 1e-14);
}

INSTANTIATE_TEST_SUITE_P(AllVariants, KernelEquivalence,
                         ::testing::ValuesIn(available_kernels()),
                         [](const auto& info) {
                           return std::string(isa_name(info.param->isa));
                         });

TEST(KernelDispatch, ScalarAlwaysAvailableAndSelectable) {
  const auto all = available_kernels();
  ASSERT_FALSE(all.empty());
  EXPECT_EQ(all.front()->isa, Isa::scalar);
  const Isa before = kernels().isa;
  select_kernels(Isa::scalar);
  EXPECT_EQ(kernels().isa, Isa::scalar);
  select_kernels(before);
  EXPECT_EQ(kernels().isa, before);
}

TEST(KernelDispatch, UnavailableVariantIsRejected) {
#if defined(__x86_64__)
  EXPECT_THROW(select_kernels(Isa::neon), ContractError);
#elif defined(__aarch64__)
  EXPECT_THROW(select_kernels(Isa::avx2), ContractError);
#endif
}

}  // namespace
}  // namespace ccperso::simd
