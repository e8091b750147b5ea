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

#include <chrono>
#include <cstdint>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "eclip/evaluation.hpp"
#include "eclip/trainer.hpp"

namespace eclip::acceptance {

struct Verdict {
  bool pass = false;
  std::string detail;
};

class Stopwatch {
 public:
  double seconds() const {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
  }

 private:
  std::chrono::steady_clock::time_point start_ = std::chrono::steady_clock::now();
};

// printf into a std::string.
std::string format(const char* fmt, ...) __attribute__((format(printf, 1, 2)));

struct Geometry {
  double alignment = 0.0;
  double uniformity = 0.0;
  double modality_gap = 0.0;
};

struct Recall {
  double at1 = 0.0, at5 = 0.0, at10 = 0.0;
  bool monotone() const { return at1 <= at5 && at5 <= at10; }
};

Geometry held_out_geometry(const Model& model, const Dataset& data);
// Image queries against the held-out text index.
Recall held_out_recall(const Model& model, const Dataset& data);
double zero_shot_f1(const Model& model, const Dataset& data);
// Mean priming reconstruction error on the first 100 held-out images.
double priming_mse(const Model& model, const Dataset& data);

// The default hard-variant eCLIP run (seed 0) several criteria inspect.
struct ReferenceRun {
  std::unique_ptr<Dataset> data;
  TrainConfig cfg;
  std::unique_ptr<Trainer> trainer;
  Geometry geometry_init;
  double priming_init = 0.0;
  double priming_after_cold = 0.0;
  double seconds = 0.0;
};

std::unique_ptr<ReferenceRun> make_reference_run();

struct BenchmarkRun {
  ExpertMode mode = ExpertMode::kClip;
  std::uint64_t seed = 0;
  double f1 = 0.0;
  Recall recall;
  double seconds = 0.0;
};

// ---- criteria -------------------------------------------------------------

Verdict oracle_equivalence();
Verdict gradient_suite();
Verdict algorithm_fidelity();
Verdict curriculum_exactness(const ReferenceRun& ref);
Verdict priming_identity(const ReferenceRun& ref);
Verdict mixup_endpoints();
// Fills runs (clip and eclip, three seeds each; eclip seed 0 is the reference).
Verdict synthetic_benchmark(const ReferenceRun& ref, std::vector<BenchmarkRun>& runs);
Verdict geometry_direction(const ReferenceRun& ref);
Verdict retrieval(const ReferenceRun& ref, const std::vector<BenchmarkRun>& runs);
Verdict metric_correctness();
Verdict reproducibility(const ReferenceRun& ref);

}  // namespace eclip::acceptance
