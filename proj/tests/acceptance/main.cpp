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

#include <cstdio>
#include <fstream>
#include <functional>
#include <string>

#include "CLI11.hpp"
#include "acceptance.hpp"
#include "eclip/kernels.hpp"
#include "json.hpp"

using namespace eclip::acceptance;

namespace {

struct Line {
  int id;
  std::string title;
  Verdict verdict;
  double seconds;
};

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"eclip acceptance suite: one PASS/FAIL line per criterion"};
  bool skip_benchmark = false;
  std::string report;
  app.add_flag("--skip-benchmark", skip_benchmark, "Do not run the six-run synthetic benchmark (criterion 7 fails)");
  app.add_option("--report", report, "Also write the results as JSON to this path");
  CLI11_PARSE(app, argc, argv);

  std::printf("kernels: %s, worker threads: %zu\n", std::string(eclip::kernels::active().name).c_str(),
              eclip::worker_threads());
  std::fflush(stdout);

  const Stopwatch total;
  std::vector<Line> lines;
  auto record = [&](int id, const char* title, const std::function<Verdict()>& body) {
    const Stopwatch clock;
    Verdict v;
    try {
      v = body();
    } catch (const std::exception& e) {
      v = {false, std::string("exception: ") + e.what()};
    }
    lines.push_back({id, title, v, clock.seconds()});
    std::printf("criterion %2d %s  %s: %s [%.1f s]\n", id, v.pass ? "PASS" : "FAIL", title, v.detail.c_str(),
                clock.seconds());
    std::fflush(stdout);
  };

  record(1, "oracle equivalence", oracle_equivalence);
  record(2, "gradient suite", gradient_suite);
  record(3, "training-loop fidelity", algorithm_fidelity);

  std::unique_ptr<ReferenceRun> ref;
  std::string ref_error;
  try {
    ref = make_reference_run();
    std::printf("reference run: default eclip, seed 0, %zu steps in %.1f s\n", ref->cfg.total_steps, ref->seconds);
  } catch (const std::exception& e) {
    ref_error = e.what();
    std::printf("reference run failed: %s\n", e.what());
  }
  std::fflush(stdout);
  auto with_ref = [&](const std::function<Verdict(const ReferenceRun&)>& f) {
    return [&, f]() -> Verdict {
      if (!ref) return {false, "reference run failed: " + ref_error};
      return f(*ref);
    };
  };

  std::vector<BenchmarkRun> runs;
  double benchmark_seconds = 0.0;
  record(4, "curriculum exactness", with_ref(curriculum_exactness));
  record(5, "priming identity", with_ref(priming_identity));
  record(6, "mixup endpoints", mixup_endpoints);
  record(7, "synthetic benchmark", with_ref([&](const ReferenceRun& r) -> Verdict {
           if (skip_benchmark) return {false, "not run (--skip-benchmark)"};
           const Stopwatch clock;
           Verdict v = synthetic_benchmark(r, runs);
           benchmark_seconds = clock.seconds();
           return v;
         }));
  record(8, "geometry direction", with_ref(geometry_direction));
  record(9, "retrieval", with_ref([&](const ReferenceRun& r) { return retrieval(r, runs); }));
  record(10, "metric correctness", metric_correctness);
  record(11, "reproducibility and formats", with_ref(reproducibility));
  record(12, "runtime budget", [&]() -> Verdict {
    const double core = total.seconds() - benchmark_seconds;
    const bool ran = !skip_benchmark && benchmark_seconds > 0.0;
    return {core <= 900.0 && ran && benchmark_seconds <= 1800.0,
            format("suite without the benchmark %.0f s (limit 900), benchmark %s (limit 1800), %zu worker thread(s)",
                   core, ran ? format("%.0f s", benchmark_seconds).c_str() : "not run", eclip::worker_threads())};
  });

  int passed = 0;
  for (const Line& l : lines) passed += l.verdict.pass ? 1 : 0;
  std::printf("%d/%zu criteria passed in %.0f s\n", passed, lines.size(), total.seconds());

  if (!report.empty()) {
    nlohmann::json j;
    j["passed"] = passed;
    j["total"] = lines.size();
    j["seconds"] = total.seconds();
    for (const Line& l : lines)
      j["criteria"].push_back(
          {{"id", l.id}, {"title", l.title}, {"pass", l.verdict.pass}, {"detail", l.verdict.detail}, {"seconds", l.seconds}});
    for (const BenchmarkRun& r : runs)
      j["benchmark"].push_back({{"mode", std::string(eclip::to_string(r.mode))},
                                {"seed", r.seed},
                                {"macro_f1", r.f1},
                                {"recall@1", r.recall.at1},
                                {"recall@5", r.recall.at5},
                                {"recall@10", r.recall.at10},
                                {"seconds", r.seconds}});
    std::ofstream(report) << j.dump(2) << "\n";
  }
  return passed == static_cast<int>(lines.size()) ? 0 : 1;
}
