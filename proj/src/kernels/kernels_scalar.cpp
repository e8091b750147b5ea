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

#include <vector>

#include "eclip/kernels.hpp"
#include "gemm_common.hpp"

namespace eclip::kernels {
namespace {

double dot_scalar(const double* x, const double* y, std::size_t n) {
  double acc = 0.0;
  for (std::size_t i = 0; i < n; ++i) acc += x[i] * y[i];
  return acc;
}

void axpy_scalar(double a, const double* x, double* y, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) y[i] += a * x[i];
}

double squared_distance_scalar(const double* x, const double* y, std::size_t n) {
  double acc = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double d = x[i] - y[i];
    acc += d * d;
  }
  return acc;
}

void gemm_scalar(const GemmArgs& g) {
  detail::scale_output(g);
  if (g.m == 0 || g.n == 0 || g.k == 0 || g.alpha == 0.0) return;
  std::vector<double> abuf, bbuf;
  const double* a = detail::pack_a(g, abuf);
  const double* b = detail::pack_b(g, bbuf);
  for (std::size_t i = 0; i < g.m; ++i) {
    double* crow = g.c + i * g.ldc;
    for (std::size_t p = 0; p < g.k; ++p) {
      const double aip = g.alpha * a[i * g.k + p];
      const double* brow = b + p * g.n;
      for (std::size_t j = 0; j < g.n; ++j) crow[j] += aip * brow[j];
    }
  }
}

}  // namespace

const KernelTable& scalar_table() {
  static const KernelTable table{Isa::kScalar, "scalar", dot_scalar, axpy_scalar,
                                 squared_distance_scalar, gemm_scalar};
  return table;
}

}  // namespace eclip::kernels
