// Copyright 2026-present the eclip project
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

// Dense f64 inner loops. Every variant computes the same mathematical result;
// the scalar table is the reference the SIMD tables are tested against.
namespace eclip::kernels {

enum class Isa { kScalar, kAvx2 };

// Row-major C[m x n] = alpha * op(A) * op(B) + beta * C.
// op(A) is m x k, op(B) is k x n. lda/ldb/ldc are row strides of the stored
// (untransposed) matrices.
struct GemmArgs {
  bool trans_a = false;
  bool trans_b = false;
  std::size_t m = 0;
  std::size_t n = 0;
  std::size_t k = 0;
  double alpha = 1.0;
  const double* a = nullptr;
  std::size_t lda = 0;
  const double* b = nullptr;
  std::size_t ldb = 0;
  double beta = 0.0;
  double* c = nullptr;
  std::size_t ldc = 0;
};

struct KernelTable {
  Isa isa;
  std::string_view name;
  double (*dot)(const double* x, const double* y, std::size_t n);
  // y += a * x
  void (*axpy)(double a, const double* x, double* y, std::size_t n);
  // sum_i (x_i - y_i)^2
  double (*squared_distance)(const double* x, const double* y, std::size_t n);
  void (*gemm)(const GemmArgs& args);
};

const KernelTable& scalar_table();

// nullptr when the binary was built without AVX2 support or the CPU lacks it.
const KernelTable* avx2_table();

// Best table for this CPU, unless ECLIP_SIMD=scalar is set in the environment.
// Selected once on first use.
const KernelTable& active();

// Test hook: pins the active table. Throws std::invalid_argument if the ISA is
// unavailable.
void force(Isa isa);

inline double dot(const double* x, const double* y, std::size_t n) {
  return active().dot(x, y, n);
}
inline void axpy(double a, const double* x, double* y, std::size_t n) {
  active().axpy(a, x, y, n);
}
inline double squared_distance(const double* x, const double* y, std::size_t n) {
  return active().squared_distance(x, y, n);
}
inline void gemm(const GemmArgs& args) { active().gemm(args); }

}  // namespace eclip::kernels
