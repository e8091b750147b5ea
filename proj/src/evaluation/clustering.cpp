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

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <random>

#include "eclip/errors.hpp"
#include "eclip/evaluation.hpp"
#include "eclip/kernels.hpp"

namespace eclip {
namespace {

const double* row(const Tensor& x, std::size_t i) { return x.ptr() + i * x.dim(1); }

// Relabels to 0..k-1 in order of first appearance of each sorted value.
std::vector<std::size_t> compact(std::span<const std::size_t> labels, std::size_t& k) {
  std::map<std::size_t, std::size_t> ids;
  for (std::size_t l : labels) ids.emplace(l, 0);
  k = 0;
  for (auto& [label, id] : ids) id = k++;
  std::vector<std::size_t> out;
  out.reserve(labels.size());
  for (std::size_t l : labels) out.push_back(ids[l]);
  return out;
}

double entropy(const std::vector<double>& counts, double n) {
  double h = 0.0;
  for (double c : counts)
    if (c > 0) h -= c / n * std::log(c / n);
  return h;
}

void require_clusters(const Tensor& x, std::span<const std::size_t> labels, const char* what, std::size_t& k) {
  if (x.rank() != 2 || x.dim(0) != labels.size())
    throw ShapeError(std::string(what) + ": expected [N,d] with N labels");
  compact(labels, k);
  if (k < 2) throw ContractError(std::string(what) + ": needs at least 2 clusters");
}

}  // namespace

KMeansResult kmeans(const Tensor& x, std::size_t k, std::uint64_t seed, std::size_t max_iter) {
  if (x.rank() != 2) throw ShapeError("kmeans: expected [N,d], got " + shape_str(x.dims()));
  const std::size_t n = x.dim(0), d = x.dim(1);
  if (k == 0 || k > n) throw ContractError("kmeans: k must lie in [1, N]");
  std::mt19937_64 rng(seed);

  // k-means++ seeding.
  Tensor c({k, d});
  std::vector<double> nearest(n, std::numeric_limits<double>::infinity());
  std::size_t pick = std::uniform_int_distribution<std::size_t>(0, n - 1)(rng);
  for (std::size_t m = 0; m < k; ++m) {
    std::copy(row(x, pick), row(x, pick) + d, c.ptr() + m * d);
    double total = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      nearest[i] = std::min(nearest[i], kernels::squared_distance(row(x, i), c.ptr() + m * d, d));
      total += nearest[i];
    }
    if (m + 1 == k) break;
    if (total <= 0.0) {
      // Every point already coincides with a centroid.
      pick = std::uniform_int_distribution<std::size_t>(0, n - 1)(rng);
      continue;
    }
    double u = std::uniform_real_distribution<double>(0.0, total)(rng);
    pick = n - 1;
    for (std::size_t i = 0; i < n; ++i) {
      if (u < nearest[i]) {
        pick = i;
        break;
      }
      u -= nearest[i];
    }
  }

  KMeansResult r;
  r.labels.assign(n, k);
  std::vector<double> dist(n);
  for (std::size_t it = 0; it < max_iter; ++it) {
    bool changed = false;
    double sse = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      std::size_t best = 0;
      double bd = std::numeric_limits<double>::infinity();
      for (std::size_t m = 0; m < k; ++m) {
        const double dd = kernels::squared_distance(row(x, i), c.ptr() + m * d, d);
        if (dd < bd) {
          bd = dd;
          best = m;
        }
      }
      changed |= r.labels[i] != best;
      r.labels[i] = best;
      dist[i] = bd;
      sse += bd;
    }
    r.sse.push_back(sse);
    r.iterations = it + 1;
    if (!changed) break;

    std::vector<std::size_t> size(k, 0);
    std::fill(c.storage().begin(), c.storage().end(), 0.0);
    for (std::size_t i = 0; i < n; ++i) {
      ++size[r.labels[i]];
      kernels::axpy(1.0, row(x, i), c.ptr() + r.labels[i] * d, d);
    }
    for (std::size_t m = 0; m < k; ++m) {
      if (size[m] > 0) {
        for (std::size_t j = 0; j < d; ++j) c[m * d + j] /= static_cast<double>(size[m]);
        continue;
      }
      // Empty cluster: move it onto the worst-served point.
      const std::size_t far = static_cast<std::size_t>(std::max_element(dist.begin(), dist.end()) - dist.begin());
      std::copy(row(x, far), row(x, far) + d, c.ptr() + m * d);
      dist[far] = 0.0;
    }
  }
  r.centroids = std::move(c);
  return r;
}

double nmi(std::span<const std::size_t> a, std::span<const std::size_t> b) {
  if (a.size() != b.size()) throw ShapeError("nmi: label vectors differ in length");
  if (a.empty()) throw ContractError("nmi: empty labelings");
  std::size_t ka = 0, kb = 0;
  const auto ca = compact(a, ka), cb = compact(b, kb);
  const double n = static_cast<double>(a.size());
  std::vector<double> pa(ka, 0.0), pb(kb, 0.0), joint(ka * kb, 0.0);
  for (std::size_t i = 0; i < ca.size(); ++i) {
    ++pa[ca[i]];
    ++pb[cb[i]];
    ++joint[ca[i] * kb + cb[i]];
  }
  const double ha = entropy(pa, n), hb = entropy(pb, n);
  if (ha + hb == 0.0) return 1.0;
  double mi = 0.0;
  for (std::size_t i = 0; i < ka; ++i)
    for (std::size_t j = 0; j < kb; ++j) {
      const double nij = joint[i * kb + j];
      if (nij > 0) mi += nij / n * std::log(n * nij / (pa[i] * pb[j]));
    }
  return std::clamp(2.0 * mi / (ha + hb), 0.0, 1.0);
}

double silhouette(const Tensor& x, std::span<const std::size_t> labels) {
  std::size_t k = 0;
  require_clusters(x, labels, "silhouette", k);
  const auto lab = compact(labels, k);
  const std::size_t n = x.dim(0), d = x.dim(1);
  std::vector<double> size(k, 0.0);
  for (std::size_t l : lab) ++size[l];
  double total = 0.0;
  std::vector<double> sum(k);
  for (std::size_t i = 0; i < n; ++i) {
    std::fill(sum.begin(), sum.end(), 0.0);
    for (std::size_t j = 0; j < n; ++j)
      if (j != i) sum[lab[j]] += std::sqrt(kernels::squared_distance(row(x, i), row(x, j), d));
    if (size[lab[i]] <= 1.0) continue;  // singleton clusters score 0
    const double a = sum[lab[i]] / (size[lab[i]] - 1.0);
    double b = std::numeric_limits<double>::infinity();
    for (std::size_t m = 0; m < k; ++m)
      if (m != lab[i]) b = std::min(b, sum[m] / size[m]);
    const double denom = std::max(a, b);
    if (denom > 0) total += (b - a) / denom;
  }
  return total / static_cast<double>(n);
}

double calinski_harabasz(const Tensor& x, std::span<const std::size_t> labels) {
  std::size_t k = 0;
  require_clusters(x, labels, "calinski_harabasz", k);
  const auto lab = compact(labels, k);
  const std::size_t n = x.dim(0), d = x.dim(1);
  if (n <= k) throw ContractError("calinski_harabasz: needs more samples than clusters");
  std::vector<double> mean(d, 0.0), cent(k * d, 0.0), size(k, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    kernels::axpy(1.0 / static_cast<double>(n), row(x, i), mean.data(), d);
    kernels::axpy(1.0, row(x, i), cent.data() + lab[i] * d, d);
    ++size[lab[i]];
  }
  for (std::size_t m = 0; m < k; ++m)
    for (std::size_t j = 0; j < d; ++j) cent[m * d + j] /= size[m];
  double between = 0.0, within = 0.0;
  for (std::size_t m = 0; m < k; ++m) between += size[m] * kernels::squared_distance(cent.data() + m * d, mean.data(), d);
  for (std::size_t i = 0; i < n; ++i) within += kernels::squared_distance(row(x, i), cent.data() + lab[i] * d, d);
  if (within <= 0.0) throw ContractError("calinski_harabasz: zero within-cluster dispersion");
  return (between / static_cast<double>(k - 1)) / (within / static_cast<double>(n - k));
}

}  // namespace eclip
