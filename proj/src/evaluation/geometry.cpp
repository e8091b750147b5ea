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
#include <cstdio>
#include <fstream>
#include <limits>
#include <set>

#include "eclip/errors.hpp"
#include "eclip/evaluation.hpp"
#include "eclip/kernels.hpp"

namespace fs = std::filesystem;

namespace eclip {
namespace {

void require_pairs(const Tensor& v, const Tensor& t, const char* what) {
  if (v.rank() != 2 || t.rank() != 2 || v.dims() != t.dims())
    throw ShapeError(std::string(what) + ": expected matching [N,d] inputs, got " + shape_str(v.dims()) + " and " +
                     shape_str(t.dims()));
  if (v.dim(0) < 2) throw ContractError(std::string(what) + ": needs at least 2 pairs");
}

const double* row(const Tensor& x, std::size_t i) { return x.ptr() + i * x.dim(1); }

}  // namespace

double alignment(const Tensor& v, const Tensor& t) {
  require_pairs(v, t, "alignment");
  const std::size_t n = v.dim(0), d = v.dim(1);
  double total = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double pos = kernels::squared_distance(row(v, i), row(t, i), d);
    double nearest = std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j < n; ++j)
      if (j != i) nearest = std::min(nearest, kernels::squared_distance(row(v, i), row(t, j), d));
    total += pos - nearest;
  }
  return -total / static_cast<double>(n);
}

double uniformity(const Tensor& v, const Tensor& t, UniformityPairs pairs) {
  require_pairs(v, t, "uniformity");
  const std::size_t n = v.dim(0), d = v.dim(1);
  double total = 0.0;
  std::size_t count = 0;
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j) {
      if (i == j && pairs == UniformityPairs::kOffDiagonal) continue;
      total += std::exp(-2.0 * kernels::squared_distance(row(v, i), row(t, j), d));
      ++count;
    }
  return -std::log(total / static_cast<double>(count));
}

double modality_gap(const Tensor& v, const Tensor& t) {
  if (v.rank() != 2 || t.rank() != 2 || v.dim(1) != t.dim(1))
    throw ShapeError("modality_gap: expected [N,d] and [M,d], got " + shape_str(v.dims()) + " and " +
                     shape_str(t.dims()));
  if (v.dim(0) == 0 || t.dim(0) == 0) throw ContractError("modality_gap: empty input");
  const std::size_t d = v.dim(1);
  std::vector<double> cv(d, 0.0), ct(d, 0.0);
  for (std::size_t i = 0; i < v.dim(0); ++i) kernels::axpy(1.0 / static_cast<double>(v.dim(0)), row(v, i), cv.data(), d);
  for (std::size_t i = 0; i < t.dim(0); ++i) kernels::axpy(1.0 / static_cast<double>(t.dim(0)), row(t, i), ct.data(), d);
  return std::sqrt(kernels::squared_distance(cv.data(), ct.data(), d));
}

double Histogram::bin_left(std::size_t b) const {
  return lo + (hi - lo) * static_cast<double>(b) / static_cast<double>(counts.size());
}

double Histogram::bin_right(std::size_t b) const {
  return b + 1 == counts.size() ? hi : bin_left(b + 1);
}

std::size_t Histogram::total() const {
  std::size_t n = 0;
  for (std::size_t c : counts) n += c;
  return n;
}

std::vector<GroupPairHistogram> cosine_histograms(const Tensor& x, std::span<const std::size_t> group_of,
                                                  std::size_t bins) {
  if (x.rank() != 2 || x.dim(0) != group_of.size())
    throw ShapeError("cosine_histograms: expected [N,d] with N group labels");
  if (bins == 0) throw ContractError("cosine_histograms: bins must be positive");
  const std::set<std::size_t> groups(group_of.begin(), group_of.end());
  if (groups.size() < 2) throw ContractError("cosine_histograms: needs at least 2 groups");
  const Tensor unit = l2_normalize_rows(x);
  const std::size_t d = x.dim(1);

  std::vector<GroupPairHistogram> out;
  for (std::size_t a : groups)
    for (std::size_t b : groups) {
      if (a == b) continue;
      GroupPairHistogram gp{a, b, Histogram{-1.0, 1.0, std::vector<std::size_t>(bins, 0), 0.0}};
      double sum = 0.0;
      for (std::size_t i = 0; i < group_of.size(); ++i) {
        if (group_of[i] != a) continue;
        for (std::size_t j = 0; j < group_of.size(); ++j) {
          if (group_of[j] != b) continue;
          const double c = std::clamp(kernels::dot(row(unit, i), row(unit, j), d), -1.0, 1.0);
          sum += c;
          auto bin = static_cast<std::size_t>((c + 1.0) / 2.0 * static_cast<double>(bins));
          ++gp.hist.counts[std::min(bin, bins - 1)];
        }
      }
      gp.hist.mean = sum / static_cast<double>(gp.hist.total());
      out.push_back(std::move(gp));
    }
  return out;
}

void write_histogram_csv(const fs::path& path, const Histogram& h) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  out << "bin_left,bin_right,count\n";
  char buf[128];
  for (std::size_t b = 0; b < h.counts.size(); ++b) {
    std::snprintf(buf, sizeof buf, "%.17g,%.17g,%zu\n", h.bin_left(b), h.bin_right(b), h.counts[b]);
    out << buf;
  }
  if (!out) throw IoError("cannot write " + path.string());
}

void write_histogram_svg(const fs::path& path, const Histogram& h, const std::string& title) {
  constexpr double kW = 480, kH = 260, kPad = 30;
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  std::size_t peak = 1;
  for (std::size_t c : h.counts) peak = std::max(peak, c);
  const double bar = (kW - 2 * kPad) / static_cast<double>(std::max<std::size_t>(h.counts.size(), 1));
  char buf[256];
  out << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << kW << "\" height=\"" << kH << "\">\n";
  out << "<text x=\"" << kPad << "\" y=\"18\" font-size=\"13\" font-family=\"sans-serif\">";
  for (char c : title) {
    if (c == '<') out << "&lt;";
    else if (c == '&') out << "&amp;";
    else out << c;
  }
  out << "</text>\n";
  for (std::size_t b = 0; b < h.counts.size(); ++b) {
    const double height = (kH - 2 * kPad) * static_cast<double>(h.counts[b]) / static_cast<double>(peak);
    std::snprintf(buf, sizeof buf, "<rect x=\"%.2f\" y=\"%.2f\" width=\"%.2f\" height=\"%.2f\" fill=\"#4a78b5\"/>\n",
                  kPad + bar * static_cast<double>(b), kH - kPad - height, std::max(bar - 1.0, 0.5), height);
    out << buf;
  }
  std::snprintf(buf, sizeof buf,
                "<line x1=\"%g\" y1=\"%g\" x2=\"%g\" y2=\"%g\" stroke=\"black\"/>\n"
                "<text x=\"%g\" y=\"%g\" font-size=\"11\">%g</text>\n"
                "<text x=\"%g\" y=\"%g\" font-size=\"11\" text-anchor=\"end\">%g</text>\n",
                kPad, kH - kPad, kW - kPad, kH - kPad, kPad, kH - kPad + 14, h.lo, kW - kPad, kH - kPad + 14, h.hi);
  out << buf << "</svg>\n";
  if (!out) throw IoError("cannot write " + path.string());
}

}  // namespace eclip
