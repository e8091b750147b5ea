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
// Compiled with -mavx2 -mfma; only reached through avx2_table() after a
// runtime CPU check.

#include <immintrin.h>

#include <vector>

#include "eclip/kernels.hpp"
#include "gemm_common.hpp"

namespace eclip::kernels {
namespace {

inline double hsum(__m256d v) {
  const __m128d lo = _mm256_castpd256_pd128(v);
  const __m128d hi = _mm256_extractf128_pd(v, 1);
  const __m128d s = _mm_add_pd(lo, hi);
  return _mm_cvtsd_f64(_mm_add_sd(s, _mm_unpackhi_pd(s, s)));
}

double dot_avx2(const double* x, const double* y, std::size_t n) {
  __m256d a0 = _mm256_setzero_pd(), a1 = _mm256_setzero_pd();
  std::size_t i = 0;
  for (; i + 8 <= n; i += 8) {
    a0 = _mm256_fmadd_pd(_mm256_loadu_pd(x + i), _mm256_loadu_pd(y + i), a0);
    a1 = _mm256_fmadd_pd(_mm256_loadu_pd(x + i + 4), _mm256_loadu_pd(y + i + 4), a1);
  }
  for (; i + 4 <= n; i += 4)
    a0 = _mm256_fmadd_pd(_mm256_loadu_pd(x + i), _mm256_loadu_pd(y + i), a0);
  double acc = hsum(_mm256_add_pd(a0, a1));
  for (; i < n; ++i) acc += x[i] * y[i];
  return acc;
}

void axpy_avx2(double a, const double* x, double* y, std::size_t n) {
  const __m256d av = _mm256_set1_pd(a);
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4)
    _mm256_storeu_pd(y + i, _mm256_fmadd_pd(av, _mm256_loadu_pd(x + i), _mm256_loadu_pd(y + i)));
  for (; i < n; ++i) y[i] += a * x[i];
}

double squared_distance_avx2(const double* x, const double* y, std::size_t n) {
  __m256d acc = _mm256_setzero_pd();
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    const __m256d d = _mm256_sub_pd(_mm256_loadu_pd(x + i), _mm256_loadu_pd(y + i));
    acc = _mm256_fmadd_pd(d, d, acc);
  }
  double s = hsum(acc);
  for (; i < n; ++i) {
    const double d = x[i] - y[i];
    s += d * d;
  }
  return s;
}

// 4 x 8 register block of C += alpha * A[4 x k] * B[k x 8].
inline void block_4x8(const double* a, std::size_t k, const double* b, std::size_t n,
                      double alpha, double* c, std::size_t ldc) {
  __m256d c00 = _mm256_setzero_pd(), c01 = _mm256_setzero_pd();
  __m256d c10 = _mm256_setzero_pd(), c11 = _mm256_setzero_pd();
  __m256d c20 = _mm256_setzero_pd(), c21 = _mm256_setzero_pd();
  __m256d c30 = _mm256_setzero_pd(), c31 = _mm256_setzero_pd();
  for (std::size_t p = 0; p < k; ++p) {
    const __m256d b0 = _mm256_loadu_pd(b + p * n);
    const __m256d b1 = _mm256_loadu_pd(b + p * n + 4);
    __m256d av = _mm256_broadcast_sd(a + p);
    c00 = _mm256_fmadd_pd(av, b0, c00);
    c01 = _mm256_fmadd_pd(av, b1, c01);
    av = _mm256_broadcast_sd(a + k + p);
    c10 = _mm256_fmadd_pd(av, b0, c10);
    c11 = _mm256_fmadd_pd(av, b1, c11);
    av = _mm256_broadcast_sd(a + 2 * k + p);
    c20 = _mm256_fmadd_pd(av, b0, c20);
    c21 = _mm256_fmadd_pd(av, b1, c21);
    av = _mm256_broadcast_sd(a + 3 * k + p);
    c30 = _mm256_fmadd_pd(av, b0, c30);
    c31 = _mm256_fmadd_pd(av, b1, c31);
  }
  const __m256d al = _mm256_set1_pd(alpha);
  auto flush = [&](double* row, __m256d lo, __m256d hi) {
    _mm256_storeu_pd(row, _mm256_fmadd_pd(al, lo, _mm256_loadu_pd(row)));
    _mm256_storeu_pd(row + 4, _mm256_fmadd_pd(al, hi, _mm256_loadu_pd(row + 4)));
  };
  flush(c, c00, c01);
  flush(c + ldc, c10, c11);
  flush(c + 2 * ldc, c20, c21);
  flush(c + 3 * ldc, c30, c31);
}

inline void block_1x8(const double* a, std::size_t k, const double* b, std::size_t n,
                      double alpha, double* c) {
  __m256d lo = _mm256_setzero_pd(), hi = _mm256_setzero_pd();
  for (std::size_t p = 0; p < k; ++p) {
    const __m256d av = _mm256_broadcast_sd(a + p);
    lo = _mm256_fmadd_pd(av, _mm256_loadu_pd(b + p * n), lo);
    hi = _mm256_fmadd_pd(av, _mm256_loadu_pd(b + p * n + 4), hi);
  }
  const __m256d al = _mm256_set1_pd(alpha);
  _mm256_storeu_pd(c, _mm256_fmadd_pd(al, lo, _mm256_loadu_pd(c)));
  _mm256_storeu_pd(c + 4, _mm256_fmadd_pd(al, hi, _mm256_loadu_pd(c + 4)));
}

inline void edge_element(const double* a, std::size_t k, const double* b, std::size_t n,
                         std::size_t j, double alpha, double* c) {
  double acc = 0.0;
  for (std::size_t p = 0; p < k; ++p) acc += a[p] * b[p * n + j];
  *c += alpha * acc;
}

void gemm_avx2(const GemmArgs& g) {
  detail::scale_output(g);
  if (g.m == 0 || g.n == 0 || g.k == 0 || g.alpha == 0.0) return;
  std::vector<double> abuf, bbuf;
  const double* a = detail::pack_a(g, abuf);
  const double* b = detail::pack_b(g, bbuf);
  const std::size_t m = g.m, n = g.n, k = g.k;
  const std::size_t n8 = n - n % 8;
  std::size_t i = 0;
  for (; i + 4 <= m; i += 4) {
    const double* arow = a + i * k;
    double* crow = g.c + i * g.ldc;
    for (std::size_t j = 0; j < n8; j += 8) block_4x8(arow, k, b + j, n, g.alpha, crow + j, g.ldc);
    for (std::size_t r = 0; r < 4; ++r)
      for (std::size_t j = n8; j < n; ++j)
        edge_element(arow + r * k, k, b, n, j, g.alpha, crow + r * g.ldc + j);
  }
  for (; i < m; ++i) {
    const double* arow = a + i * k;
    double* crow = g.c + i * g.ldc;
    for (std::size_t j = 0; j < n8; j += 8) block_1x8(arow, k, b + j, n, g.alpha, crow + j);
    for (std::size_t j = n8; j < n; ++j) edge_element(arow, k, b, n, j, g.alpha, crow + j);
  }
}

}  // namespace

const KernelTable& avx2_kernels() {
  static const KernelTable table{Isa::kAvx2, "avx2", dot_avx2, axpy_avx2,
                                 squared_distance_avx2, gemm_avx2};
  return table;
}

}  // namespace eclip::kernels
