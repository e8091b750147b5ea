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
#include <vector>

#include "eclip/kernels.hpp"

namespace eclip::kernels::detail {

// Applies beta to C in place. beta == 0 overwrites (NaN-safe).
inline void scale_output(const GemmArgs& g) {
  if (g.beta == 1.0) return;
  for (std::size_t i = 0; i < g.m; ++i) {
    double* row = g.c + i * g.ldc;
    if (g.beta == 0.0) {
      for (std::size_t j = 0; j < g.n; ++j) row[j] = 0.0;
    } else {
      for (std::size_t j = 0; j < g.n; ++j) row[j] *= g.beta;
    }
  }
}

// Copies op(A) into a dense m x k row-major buffer, or returns A itself when
// it is already dense and untransposed.
inline const double* pack_a(const GemmArgs& g, std::vector<double>& buf) {
  if (!g.trans_a && g.lda == g.k) return g.a;
  buf.resize(g.m * g.k);
  for (std::size_t i = 0; i < g.m; ++i)
    for (std::size_t p = 0; p < g.k; ++p)
      buf[i * g.k + p] = g.trans_a ? g.a[p * g.lda + i] : g.a[i * g.lda + p];
  return buf.data();
}

// Same for op(B) into k x n.
inline const double* pack_b(const GemmArgs& g, std::vector<double>& buf) {
  if (!g.trans_b && g.ldb == g.n) return g.b;
  buf.resize(g.k * g.n);
  for (std::size_t p = 0; p < g.k; ++p)
    for (std::size_t j = 0; j < g.n; ++j)
      buf[p * g.n + j] = g.trans_b ? g.b[j * g.ldb + p] : g.b[p * g.ldb + j];
  return buf.data();
}

}  // namespace eclip::kernels::detail
