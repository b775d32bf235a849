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

#pragma once

#include <cstddef>
#include <string_view>
#include <vector>

// Data-parallel inner loops. Every kernel has a portable scalar reference
// and optional AVX2/FMA (x86-64) or NEON (aarch64) variants; the variant is
// picked once at runtime from CPU features and may be overridden with the
// CCPERSO_KERNELS environment variable (scalar|avx2|neon).
//
// All gemm variants accumulate each output element in ascending order of the
// reduction index, independently of the row count, so a single-row product
// is bitwise identical to the same row of a batched product within one ISA.

namespace ccperso::simd {

enum class Isa { scalar, avx2, neon };

std::string_view isa_name(Isa isa);

struct KernelTable {
  Isa isa;

  double (*dot)(const double* a, const double* b, std::size_t n);
  // y += alpha * x
  void (*axpy)(double alpha, const double* x, double* y, std::size_t n);
  void (*add)(const double* a, const double* b, double* out, std::size_t n);
  void (*sub)(const double* a, const double* b, double* out, std::size_t n);
  void (*mul)(const double* a, const double* b, double* out, std::size_t n);
  // out += a * b
  void (*mul_acc)(const double* a, const double* b, double* out,
                  std::size_t n);
  void (*scale)(const double* a, double c, double* out, std::size_t n);
  double (*sum)(const double* a, std::size_t n);
  double (*max)(const double* a, std::size_t n);

  // Row-major products; C is m x n. When accumulate is false C is
  // overwritten.
  // C (+)= A[m x k] * B[k x n]
  void (*gemm_nn)(const double* a, const double* b, double* c, std::size_t m,
                  std::size_t k, std::size_t n, bool accumulate);
  // C (+)= A[m x k] * B[n x k]^T
  void (*gemm_nt)(const double* a, const double* b, double* c, std::size_t m,
                  std::size_t k, std::size_t n, bool accumulate);
  // C (+)= A[k x m]^T * B[k x n]
  void (*gemm_tn)(const double* a, const double* b, double* c, std::size_t m,
                  std::size_t k, std::size_t n, bool accumulate);

  // Bias-corrected Adam update over n contiguous parameters.
  void (*adam)(double* param, const double* grad, double* m, double* v,
               std::size_t n, double lr, double beta1, double beta2,
               double eps, double bias1, double bias2);
};

const KernelTable& scalar_kernels();
// nullptr when the variant is not compiled in or the CPU lacks support.
const KernelTable* avx2_kernels();
const KernelTable* neon_kernels();

// Every variant usable on this machine, scalar first.
std::vector<const KernelTable*> available_kernels();

// The active table used by the tensor library.
const KernelTable& kernels();

// Throws ContractError if the variant is unavailable.
void select_kernels(Isa isa);

}  // namespace ccperso::simd
