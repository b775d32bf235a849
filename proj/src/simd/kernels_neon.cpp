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

// AdvSIMD is mandatory on aarch64, so no runtime check is needed.

#include <arm_neon.h>

#include <cmath>
#include <limits>

#include "ccperso/simd/kernels.hpp"
#include "gemm_common.hpp"

namespace ccperso::simd {
namespace {

struct NeonOps {
  static double dot(const double* a, const double* b, std::size_t n) {
    float64x2_t acc0 = vdupq_n_f64(0.0);
    float64x2_t acc1 = vdupq_n_f64(0.0);
    std::size_t i = 0;
    for (; i + 4 <= n; i += 4) {
      acc0 = vfmaq_f64(acc0, vld1q_f64(a + i), vld1q_f64(b + i));
      acc1 = vfmaq_f64(acc1, vld1q_f64(a + i + 2), vld1q_f64(b + i + 2));
    }
    double s = vaddvq_f64(vaddq_f64(acc0, acc1));
    for (; i < n; ++i) s += a[i] * b[i];
    return s;
  }

  static void axpy(double alpha, const double* x, double* y, std::size_t n) {
    const float64x2_t va = vdupq_n_f64(alpha);
    std::size_t i = 0;
    for (; i + 2 <= n; i += 2) {
      vst1q_f64(y + i, vfmaq_f64(vld1q_f64(y + i), va, vld1q_f64(x + i)));
    }
    for (; i < n; ++i) y[i] += alpha * x[i];
  }
};

void add(const double* a, const double* b, double* out, std::size_t n) {
  std::size_t i = 0;
  for (; i + 2 <= n; i += 2) vst1q_f64(out + i, vaddq_f64(vld1q_f64(a + i), vld1q_f64(b + i)));
  for (; i < n; ++i) out[i] = a[i] + b[i];
}
void sub(const double* a, const double* b, double* out, std::size_t n) {
  std::size_t i = 0;
  for (; i + 2 <= n; i += 2) vst1q_f64(out + i, vsubq_f64(vld1q_f64(a + i), vld1q_f64(b + i)));
  for (; i < n; ++i) out[i] = a[i] - b[i];
}
void mul(const double* a, const double* b, double* out, std::size_t n) {
  std::size_t i = 0;
  for (; i + 2 <= n; i += 2) vst1q_f64(out + i, vmulq_f64(vld1q_f64(a + i), vld1q_f64(b + i)));
  for (; i < n; ++i) out[i] = a[i] * b[i];
}
void mul_acc(const double* a, const double* b, double* out, std::size_t n) {
  std::size_t i = 0;
  for (; i + 2 <= n; i += 2) {
    vst1q_f64(out + i, vfmaq_f64(vld1q_f64(out + i), vld1q_f64(a + i), vld1q_f64(b + i)));
  }
  for (; i < n; ++i) out[i] += a[i] * b[i];
}
void scale(const double* a, double c, double* out, std::size_t n) {
  std::size_t i = 0;
  for (; i + 2 <= n; i += 2) vst1q_f64(out + i, vmulq_n_f64(vld1q_f64(a + i), c));
  for (; i < n; ++i) out[i] = a[i] * c;
}
double sum(const double* a, std::size_t n) {
  float64x2_t acc = vdupq_n_f64(0.0);
  std::size_t i = 0;
  for (; i + 2 <= n; i += 2) acc = vaddq_f64(acc, vld1q_f64(a + i));
  double s = vaddvq_f64(acc);
  for (; i < n; ++i) s += a[i];
  return s;
}
double max(const double* a, std::size_t n) {
  double m = -std::numeric_limits<double>::infinity();
  std::size_t i = 0;
  if (n >= 2) {
    float64x2_t acc = vld1q_f64(a);
    for (i = 2; i + 2 <= n; i += 2) acc = vmaxq_f64(acc, vld1q_f64(a + i));
    m = vmaxvq_f64(acc);
  }
  for (; i < n; ++i) m = a[i] > m ? a[i] : m;
  return m;
}

void adam(double* param, const double* grad, double* m, double* v,
          std::size_t n, double lr, double beta1, double beta2, double eps,
          double bias1, double bias2) {
  std::size_t i = 0;
  for (; i + 2 <= n; i += 2) {
    const float64x2_t g = vld1q_f64(grad + i);
    const float64x2_t mi =
        vaddq_f64(vmulq_n_f64(vld1q_f64(m + i), beta1), vmulq_n_f64(g, 1.0 - beta1));
    const float64x2_t vi = vaddq_f64(vmulq_n_f64(vld1q_f64(v + i), beta2),
                                     vmulq_n_f64(vmulq_f64(g, g), 1.0 - beta2));
    vst1q_f64(m + i, mi);
    vst1q_f64(v + i, vi);
    const float64x2_t mhat = vdivq_f64(mi, vdupq_n_f64(bias1));
    const float64x2_t vhat = vdivq_f64(vi, vdupq_n_f64(bias2));
    const float64x2_t step = vdivq_f64(vmulq_n_f64(mhat, lr),
                                       vaddq_f64(vsqrtq_f64(vhat), vdupq_n_f64(eps)));
    vst1q_f64(param + i, vsubq_f64(vld1q_f64(param + i), step));
  }
  for (; i < n; ++i) {
    const double g = grad[i];
    m[i] = beta1 * m[i] + (1.0 - beta1) * g;
    v[i] = beta2 * v[i] + (1.0 - beta2) * (g * g);
    param[i] -= lr * (m[i] / bias1) / (std::sqrt(v[i] / bias2) + eps);
  }
}

}  // namespace

const KernelTable* neon_kernels() {
  static const KernelTable table{
      Isa::neon,
      &NeonOps::dot,
      &NeonOps::axpy,
      &add,
      &sub,
      &mul,
      &mul_acc,
      &scale,
      &sum,
      &max,
      &detail::gemm_nn<NeonOps>,
      &detail::gemm_nt<NeonOps>,
      &detail::gemm_tn<NeonOps>,
      &adam,
  };
  return &table;
}

}  // namespace ccperso::simd
