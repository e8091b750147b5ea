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

#include <cmath>
#include <cstring>
#include <random>
#include <stdexcept>
#include <vector>

#include "eclip/autograd.hpp"
#include "eclip/kernels.hpp"
#include "eclip/tensor.hpp"

namespace eclip::testing {

inline Tensor random_tensor(Shape dims, std::mt19937_64& rng, double lo = -1.0, double hi = 1.0) {
  std::uniform_real_distribution<double> u(lo, hi);
  Tensor t(std::move(dims));
  for (double& v : t.data()) v = u(rng);
  return t;
}

inline double max_abs_diff(const Tensor& a, const Tensor& b) {
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

inline bool bit_equal(const Tensor& a, const Tensor& b) {
  if (a.dims() != b.dims()) return false;
  for (std::size_t i = 0; i < a.size(); ++i)
    if (std::memcmp(&a.data()[i], &b.data()[i], sizeof(double)) != 0) return false;
  return true;
}

// Projects an arbitrary-shaped output onto a fixed random direction so no
// gradient coordinate is structurally zero.
inline Var probe(const Var& y, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  return sum(mul(y, Var::constant(random_tensor(y.dims(), rng))));
}

// Ridge least-squares classifier on raw features: one-hot targets, bias
// column appended, argmax decision. Returns the training accuracy.
inline double least_squares_train_accuracy(const Tensor& x, const std::vector<std::size_t>& y, std::size_t classes,
                                           double ridge = 1e-3) {
  const std::size_t n = x.dim(0), f = x.size() / n + 1;
  std::vector<double> a(n * f), gram(f * f), rhs(f * classes, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j + 1 < f; ++j) a[i * f + j] = x[i * (f - 1) + j];
    a[i * f + f - 1] = 1.0;
  }
  kernels::GemmArgs g;
  g.trans_a = true;
  g.m = f;
  g.n = f;
  g.k = n;
  g.a = a.data();
  g.lda = f;
  g.b = a.data();
  g.ldb = f;
  g.c = gram.data();
  g.ldc = f;
  kernels::gemm(g);
  for (std::size_t j = 0; j < f; ++j) gram[j * f + j] += ridge;
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < f; ++j) rhs[j * classes + y[i]] += a[i * f + j];
  // Cholesky factor L L^T = gram, in place (lower triangle).
  for (std::size_t j = 0; j < f; ++j) {
    double d = gram[j * f + j];
    for (std::size_t k = 0; k < j; ++k) d -= gram[j * f + k] * gram[j * f + k];
    if (d <= 0.0) throw std::runtime_error("least squares: matrix not positive definite");
    gram[j * f + j] = std::sqrt(d);
    for (std::size_t i = j + 1; i < f; ++i) {
      double s = gram[i * f + j];
      for (std::size_t k = 0; k < j; ++k) s -= gram[i * f + k] * gram[j * f + k];
      gram[i * f + j] = s / gram[j * f + j];
    }
  }
  for (std::size_t c = 0; c < classes; ++c) {
    for (std::size_t i = 0; i < f; ++i) {
      double s = rhs[i * classes + c];
      for (std::size_t k = 0; k < i; ++k) s -= gram[i * f + k] * rhs[k * classes + c];
      rhs[i * classes + c] = s / gram[i * f + i];
    }
    for (std::size_t i = f; i-- > 0;) {
      double s = rhs[i * classes + c];
      for (std::size_t k = i + 1; k < f; ++k) s -= gram[k * f + i] * rhs[k * classes + c];
      rhs[i * classes + c] = s / gram[i * f + i];
    }
  }
  std::size_t correct = 0;
  for (std::size_t i = 0; i < n; ++i) {
    std::size_t best = 0;
    double best_score = -INFINITY;
    for (std::size_t c = 0; c < classes; ++c) {
      double s = 0.0;
      for (std::size_t j = 0; j < f; ++j) s += a[i * f + j] * rhs[j * classes + c];
      if (s > best_score) {
        best_score = s;
        best = c;
      }
    }
    correct += best == y[i];
  }
  return static_cast<double>(correct) / static_cast<double>(n);
}

}  // namespace eclip::testing
