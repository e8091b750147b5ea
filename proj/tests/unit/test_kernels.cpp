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
#include <cmath>
#include <random>
#include <vector>

#include <stdexcept>

#include "doctest.h"
#include "eclip/kernels.hpp"

using namespace eclip::kernels;

namespace {

std::vector<double> random_vec(std::size_t n, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  std::vector<double> v(n);
  for (double& x : v) x = u(rng);
  return v;
}

// Naive triple loop, independent of both kernel tables.
std::vector<double> naive_gemm(const GemmArgs& g, std::vector<double> c) {
  for (std::size_t i = 0; i < g.m; ++i)
    for (std::size_t j = 0; j < g.n; ++j) {
      double acc = 0.0;
      for (std::size_t p = 0; p < g.k; ++p) {
        const double a = g.trans_a ? g.a[p * g.lda + i] : g.a[i * g.lda + p];
        const double b = g.trans_b ? g.b[j * g.ldb + p] : g.b[p * g.ldb + j];
        acc += a * b;
      }
      c[i * g.ldc + j] = g.alpha * acc + (g.beta == 0.0 ? 0.0 : g.beta * c[i * g.ldc + j]);
    }
  return c;
}

}  // namespace

TEST_CASE("scalar table is always present") {
  CHECK(scalar_table().isa == Isa::kScalar);
  CHECK(active().gemm != nullptr);
}

TEST_CASE("gemm variants agree with the naive oracle for every transpose combination") {
  std::mt19937_64 rng(7);
  std::vector<const KernelTable*> tables{&scalar_table()};
  if (avx2_table()) tables.push_back(avx2_table());
  const std::size_t sizes[] = {1, 3, 4, 5, 8, 9, 16, 17, 33};
  for (const KernelTable* table : tables) {
    CAPTURE(table->name);
    for (int trial = 0; trial < 120; ++trial) {
      const std::size_t m = sizes[rng() % 9], n = sizes[rng() % 9], k = sizes[rng() % 9];
      const bool ta = rng() & 1, tb = rng() & 1;
      const double beta = (trial % 3 == 0) ? 0.0 : (trial % 3 == 1 ? 1.0 : 0.5);
      auto a = random_vec(m * k, rng), b = random_vec(k * n, rng), c = random_vec(m * n, rng);
      GemmArgs g{ta, tb, m, n, k, 1.25, a.data(), ta ? m : k, b.data(), tb ? k : n, beta, nullptr, n};
      const auto expect = naive_gemm(g, c);
      g.c = c.data();
      table->gemm(g);
      for (std::size_t i = 0; i < c.size(); ++i) REQUIRE(c[i] == doctest::Approx(expect[i]).epsilon(1e-12));
    }
  }
}

TEST_CASE("avx2 vector kernels match scalar reference") {
  if (!avx2_table()) return;
  std::mt19937_64 rng(11);
  const KernelTable& s = scalar_table();
  const KernelTable& v = *avx2_table();
  for (std::size_t n : {0u, 1u, 3u, 4u, 7u, 8u, 13u, 64u, 1000u}) {
    auto x = random_vec(n, rng), y = random_vec(n, rng);
    CHECK(v.dot(x.data(), y.data(), n) == doctest::Approx(s.dot(x.data(), y.data(), n)).epsilon(1e-13));
    CHECK(v.squared_distance(x.data(), y.data(), n) ==
          doctest::Approx(s.squared_distance(x.data(), y.data(), n)).epsilon(1e-13));
    auto y1 = y, y2 = y;
    s.axpy(0.3, x.data(), y1.data(), n);
    v.axpy(0.3, x.data(), y2.data(), n);
    for (std::size_t i = 0; i < n; ++i) CHECK(y1[i] == doctest::Approx(y2[i]).epsilon(1e-15));
  }
}

TEST_CASE("kernel results do not depend on buffer alignment") {
  std::mt19937_64 rng(3);
  auto base = random_vec(80, rng);
  std::vector<double> shifted(81);
  std::copy(base.begin(), base.end(), shifted.begin() + 1);
  const double d0 = active().dot(base.data(), base.data(), 80);
  const double d1 = active().dot(shifted.data() + 1, shifted.data() + 1, 80);
  CHECK(d0 == d1);
}

TEST_CASE("gemm handles beta=0 over garbage output") {
  std::vector<double> a{1, 2, 3, 4}, b{5, 6, 7, 8};
  std::vector<double> c{std::nan(""), std::nan(""), std::nan(""), std::nan("")};
  gemm({false, false, 2, 2, 2, 1.0, a.data(), 2, b.data(), 2, 0.0, c.data(), 2});
  CHECK(c == std::vector<double>{19, 22, 43, 50});
}

TEST_CASE("force switches the active table") {
  const Isa before = active().isa;
  force(Isa::kScalar);
  CHECK(active().isa == Isa::kScalar);
  if (avx2_table()) {
    force(Isa::kAvx2);
    CHECK(active().isa == Isa::kAvx2);
  } else {
    CHECK_THROWS_AS(force(Isa::kAvx2), std::invalid_argument);
  }
  force(before);
}
