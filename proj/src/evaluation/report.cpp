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
#include <string>

#include "eclip/errors.hpp"
#include "eclip/evaluation.hpp"

namespace eclip {
namespace {

void check(const std::optional<double>& v, const char* name, double lo, double hi) {
  if (!v) return;
  if (!std::isfinite(*v) || *v < lo || *v > hi)
    throw ContractError(std::string("MetricsReport: ") + name + " = " + std::to_string(*v) + " outside [" +
                        std::to_string(lo) + ", " + std::to_string(hi) + "]");
}

constexpr double kInf = 1e300;

template <typename Report, typename F>
void each_scalar(F&& f, Report& r) {
  f("alignment", r.alignment);
  f("uniformity", r.uniformity);
  f("modality_gap", r.modality_gap);
  f("nmi", r.nmi);
  f("silhouette", r.silhouette);
  f("calinski_harabasz", r.calinski_harabasz);
  f("macro_f1", r.macro_f1);
  f("accuracy", r.accuracy);
  f("roc_auc", r.roc_auc);
}

}  // namespace

void MetricsReport::validate() const {
  check(alignment, "alignment", -kInf, kInf);
  check(uniformity, "uniformity", 0.0, kInf);
  check(modality_gap, "modality_gap", 0.0, kInf);
  check(nmi, "nmi", 0.0, 1.0);
  check(silhouette, "silhouette", -1.0, 1.0);
  check(calinski_harabasz, "calinski_harabasz", 0.0, kInf);
  check(macro_f1, "macro_f1", 0.0, 1.0);
  check(accuracy, "accuracy", 0.0, 1.0);
  check(roc_auc, "roc_auc", 0.0, 1.0);
  double prev = 0.0;
  for (const auto& [k, v] : recall) {
    check(v, ("recall@" + std::to_string(k)).c_str(), 0.0, 1.0);
    if (v < prev) throw ContractError("MetricsReport: recall@" + std::to_string(k) + " below a smaller k");
    prev = v;
  }
}

void to_json(nlohmann::json& j, const MetricsReport& r) {
  j = nlohmann::json::object();
  each_scalar(
      [&](const char* name, const std::optional<double>& v) {
        if (v) j[name] = *v;
      },
      r);
  for (const auto& [k, v] : r.recall) j["recall@" + std::to_string(k)] = v;
}

void from_json(const nlohmann::json& j, MetricsReport& r) {
  if (!j.is_object()) throw DataError("MetricsReport: expected a JSON object");
  r = MetricsReport{};
  each_scalar(
      [&](const char* name, std::optional<double>& v) {
        if (j.contains(name)) {
          if (!j[name].is_number()) throw DataError(std::string("MetricsReport: ") + name + " must be a number");
          v = j[name].get<double>();
        }
      },
      r);
  for (const auto& [key, value] : j.items()) {
    if (key.rfind("recall@", 0) != 0) continue;
    if (!value.is_number()) throw DataError("MetricsReport: " + key + " must be a number");
    r.recall[std::stoul(key.substr(7))] = value.get<double>();
  }
}

}  // namespace eclip
