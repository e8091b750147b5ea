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
#include <cstring>
#include <filesystem>
#include <random>
#include <unistd.h>

#include "acceptance.hpp"
#include "eclip/eclt.hpp"
#include "eclip/errors.hpp"
#include "eclip/objective.hpp"
#include "test_util.hpp"

namespace fs = std::filesystem;

namespace eclip::acceptance {

namespace {

using testing::bit_equal;

bool same_params(const Model& a, const Model& b) {
  if (a.params().size() != b.params().size()) return false;
  for (std::size_t i = 0; i < a.params().size(); ++i)
    if (a.params()[i].name != b.params()[i].name || !bit_equal(a.params()[i].var.value(), b.params()[i].var.value()))
      return false;
  return true;
}

bool same_log(std::span<const StepRecord> a, std::span<const StepRecord> b) {
  if (a.size() != b.size()) return false;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const LossBreakdown &x = a[i].loss, &y = b[i].loss;
    if (a[i].step != b[i].step || a[i].expert_used != b[i].expert_used || a[i].lr != b[i].lr ||
        a[i].p_curr != b[i].p_curr || x.l_clip != y.l_clip || x.l_priming != y.l_priming ||
        x.l_total != y.l_total || x.tau != y.tau)
      return false;
  }
  return true;
}

TrainConfig benchmark_config(ExpertMode mode, std::uint64_t seed) {
  TrainConfig c;
  c.expert_mode = mode;
  c.seed = seed;
  return c;
}

fs::path scratch_dir(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("eclip_acceptance_" + std::to_string(::getpid()) + "_" + name);
  fs::remove_all(p);
  return p;
}

// Rows of x times a random orthogonal matrix (Gram-Schmidt on a Gaussian draw).
Tensor rotate(const Tensor& x, std::mt19937_64& rng) {
  const std::size_t d = x.dim(1);
  std::normal_distribution<double> g;
  std::vector<double> q(d * d);
  for (double& v : q) v = g(rng);
  for (std::size_t i = 0; i < d; ++i) {
    for (int pass = 0; pass < 2; ++pass)
      for (std::size_t j = 0; j < i; ++j) {
        double dot = 0.0;
        for (std::size_t k = 0; k < d; ++k) dot += q[i * d + k] * q[j * d + k];
        for (std::size_t k = 0; k < d; ++k) q[i * d + k] -= dot * q[j * d + k];
      }
    double norm = 0.0;
    for (std::size_t k = 0; k < d; ++k) norm += q[i * d + k] * q[i * d + k];
    norm = std::sqrt(norm);
    for (std::size_t k = 0; k < d; ++k) q[i * d + k] /= norm;
  }
  Tensor out(x.dims());
  for (std::size_t r = 0; r < x.dim(0); ++r)
    for (std::size_t j = 0; j < d; ++j) {
      double acc = 0.0;
      for (std::size_t k = 0; k < d; ++k) acc += x[r * d + k] * q[k * d + j];
      out[r * d + j] = acc;
    }
  return out;
}

}  // namespace

std::unique_ptr<ReferenceRun> make_reference_run() {
  const Stopwatch clock;
  auto ref = std::make_unique<ReferenceRun>();
  ref->data = std::make_unique<Dataset>(generate_dataset(GenConfig{}));
  ref->cfg = benchmark_config(ExpertMode::kEclip, 0);
  ref->trainer = std::make_unique<Trainer>(ref->cfg, *ref->data);
  Trainer& tr = *ref->trainer;
  ref->geometry_init = held_out_geometry(tr.model(), *ref->data);
  ref->priming_init = priming_mse(tr.model(), *ref->data);
  const std::size_t cold_end = ref->cfg.priming_end();
  tr.run(ref->cfg.total_steps, [&](const StepRecord& r) {
    if (r.step + 1 == cold_end) ref->priming_after_cold = priming_mse(tr.model(), *ref->data);
  });
  ref->seconds = clock.seconds();
  return ref;
}

Verdict algorithm_fidelity() {
  GenConfig g;
  g.n_train = 512;
  g.n_test = 50;
  g.expert_frac = 0.05;
  const Dataset ds = generate_dataset(g);
  constexpr std::size_t kSteps = 40;
  bool loop_match = true, zero_match = true;
  for (std::uint64_t seed : {0ull, 1ull, 0x1234567890ull}) {
    TrainConfig clip = benchmark_config(ExpertMode::kClip, seed);
    clip.total_steps = kSteps;
    Trainer tr(clip, ds);
    tr.run(kSteps);

    // The loop with the expert branch removed: main loader, CLIP loss, Adam.
    Trainer fresh(clip, ds);
    Model& m = fresh.model();
    Adam adam(m.params());
    std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32), 2u};
    BatchStream loader(ds.train_ids(), clip.batch_size, std::mt19937_64(seq)());
    for (std::size_t s = 0; s < kSteps; ++s) {
      const auto ids = loader.next();
      const ClipLoss loss = clip_infonce(m.encode_image(Var::constant(ds.images(ids))), m.encode_text(ds.token_batch(ids)),
                                         m.log_inv_tau());
      loop_match = loop_match && loss.l_clip.value().item() == tr.log()[s].loss.l_total;
      backward(loss.l_clip);
      adam.step(m.params(), lr_schedule(s, clip), clip.weight_decay);
      clamp_log_inv_tau(m.log_inv_tau().node()->value);
      for (NamedParam& p : m.params()) p.var.zero_grad();
    }
    loop_match = loop_match && same_params(tr.model(), m);

    TrainConfig eclip = benchmark_config(ExpertMode::kEclip, seed);
    eclip.total_steps = kSteps;
    eclip.base_lr = clip.lr();
    eclip.use_curriculum = false;
    eclip.fixed_p = 0.0;
    eclip.use_priming = false;
    Trainer e(eclip, ds);
    e.run(kSteps);
    for (const StepRecord& r : e.log()) zero_match = zero_match && !r.expert_used;
    zero_match = zero_match && same_params(tr.model(), e.model());
    for (std::size_t s = 0; s < kSteps; ++s)
      zero_match = zero_match && e.log()[s].loss.l_total == tr.log()[s].loss.l_total;
  }
  return {loop_match && zero_match,
          format("clip mode vs expert-free loop: %s; eclip with p_curr=0 vs clip: %s (3 seeds x %zu steps, bit-exact)",
                 loop_match ? "identical" : "DIFFERENT", zero_match ? "identical" : "DIFFERENT", kSteps)};
}

Verdict curriculum_exactness(const ReferenceRun& ref) {
  CurriculumConfig c;
  c.total_steps = 10000;
  const std::vector<std::pair<std::size_t, double>> points{{0, 0.0},    {1000, 0.05}, {4000, 0.5},
                                                           {6000, 0.3}, {8000, 0.1},  {9999, 0.1}};
  std::string got;
  bool exact = true;
  for (const auto& [step, want] : points) {
    const double p = curriculum_prob(step, c);
    exact = exact && p == want;
    got += format("%sp(%zu)=%.17g", got.empty() ? "" : " ", step, p);
  }
  double expected = 0.0, used = 0.0;
  bool logged = true;
  const CurriculumConfig sched = ref.cfg.schedule();
  for (const StepRecord& r : ref.trainer->log()) {
    logged = logged && r.p_curr == curriculum_prob(r.step, sched);
    expected += r.p_curr;
    used += r.expert_used ? 1.0 : 0.0;
  }
  const double n = static_cast<double>(ref.trainer->log().size());
  const double gap = std::abs(used - expected) / n;
  return {exact && logged && n == 2000 && gap <= 0.03,
          format("%s; empirical expert fraction %.4f vs schedule integral %.4f over %.0f steps (|diff| %.4f, limit 0.03)",
                 got.c_str(), used / n, expected / n, n, gap)};
}

Verdict priming_identity(const ReferenceRun& ref) {
  const double ratio = ref.priming_after_cold / ref.priming_init;
  return {ratio <= 0.01, format("reconstruction MSE %.3e at init, %.3e after the %zu-step cold start: %.2f%% of init (limit 1%%)",
                                ref.priming_init, ref.priming_after_cold, ref.cfg.priming_end(), 100.0 * ratio)};
}

Verdict synthetic_benchmark(const ReferenceRun& ref, std::vector<BenchmarkRun>& runs) {
  const Dataset& ds = *ref.data;
  const auto train = ds.train_ids();
  const double oracle = testing::least_squares_train_accuracy(ds.images(train), ds.labels(train), ds.config().n_classes);

  runs.clear();
  for (std::uint64_t seed = 0; seed < 3; ++seed) {
    for (ExpertMode mode : {ExpertMode::kClip, ExpertMode::kEclip}) {
      BenchmarkRun run;
      run.mode = mode;
      run.seed = seed;
      runs.push_back(run);
    }
  }
  parallel_for(runs.size(), [&](std::size_t i) {
    BenchmarkRun& run = runs[i];
    if (run.mode == ExpertMode::kEclip && run.seed == 0) {
      run.seconds = ref.seconds;
      run.f1 = zero_shot_f1(ref.trainer->model(), ds);
      run.recall = held_out_recall(ref.trainer->model(), ds);
      return;
    }
    const Stopwatch clock;
    Trainer tr(benchmark_config(run.mode, run.seed), ds);
    tr.run(tr.config().total_steps);
    run.seconds = clock.seconds();
    run.f1 = zero_shot_f1(tr.model(), ds);
    run.recall = held_out_recall(tr.model(), ds);
  });

  double clip_mean = 0.0, eclip_mean = 0.0, slowest = 0.0;
  int wins = 0;
  std::string pairs;
  for (std::uint64_t seed = 0; seed < 3; ++seed) {
    const double c = runs[2 * seed].f1, e = runs[2 * seed + 1].f1;
    clip_mean += c / 3.0;
    eclip_mean += e / 3.0;
    wins += e >= c ? 1 : 0;
    pairs += format("%sseed %llu clip %.3f eclip %.3f", pairs.empty() ? "" : ", ",
                    static_cast<unsigned long long>(seed), c, e);
  }
  for (const BenchmarkRun& r : runs) slowest = std::max(slowest, r.seconds);
  const bool separable = oracle >= 0.8;
  const bool a = separable && clip_mean >= 0.80;
  const bool b = wins >= 2;
  return {a && b && slowest <= 300.0,
          format("(a) pixel least-squares oracle %.3f, clip mean macro-F1 %.3f (>= 0.80): %s; (b) eclip >= clip in %d/3 "
                 "paired seeds, means eclip %.4f vs clip %.4f: %s [%s]; slowest run %.0f s (limit 300)",
                 oracle, clip_mean, a ? "pass" : "FAIL", wins, eclip_mean, clip_mean, b ? "pass" : "FAIL",
                 pairs.c_str(), slowest)};
}

Verdict geometry_direction(const ReferenceRun& ref) {
  const Dataset& ds = *ref.data;
  const Geometry after = held_out_geometry(ref.trainer->model(), ds);
  const Geometry& before = ref.geometry_init;
  const bool up = after.alignment > before.alignment && after.uniformity > before.uniformity;

  const auto ids = ds.test_ids();
  const Tensor v = embed_images(ref.trainer->model(), ds, ids), t = embed_texts(ref.trainer->model(), ds, ids);
  const double self_gap = modality_gap(v, v);

  // Same rotation for both modalities.
  std::mt19937_64 rng(17);
  std::mt19937_64 rng_copy = rng;
  const Tensor rv = rotate(v, rng), rt = rotate(t, rng_copy);
  const double drift = std::max({std::abs(alignment(rv, rt) - after.alignment),
                                 std::abs(uniformity(rv, rt) - after.uniformity),
                                 std::abs(modality_gap(rv, rt) - after.modality_gap)});
  return {up && self_gap == 0.0 && drift <= 1e-8,
          format("alignment %.4f -> %.4f, uniformity %.4f -> %.4f (both must rise); modality_gap(V,V) = %g; max "
                 "change under a shared rotation %.1e (limit 1e-8)",
                 before.alignment, after.alignment, before.uniformity, after.uniformity, self_gap, drift)};
}

Verdict retrieval(const ReferenceRun& ref, const std::vector<BenchmarkRun>& runs) {
  const Dataset& ds = *ref.data;
  const Recall trained = held_out_recall(ref.trainer->model(), ds);
  bool monotone = trained.monotone();
  for (const BenchmarkRun& r : runs) monotone = monotone && r.recall.monotone();

  // Self-queries against both modality indexes.
  const auto ids = ds.test_ids();
  const std::vector<std::uint64_t> keys(ids.begin(), ids.end());
  std::size_t misses = 0;
  for (const Tensor& x : {embed_images(ref.trainer->model(), ds, ids), embed_texts(ref.trainer->model(), ds, ids)}) {
    const FlatIndex index(x, keys);
    for (std::size_t q = 0; q < keys.size(); ++q)
      if (index.query(index.row(q), 1).front().id != keys[q]) ++misses;
  }
  const double chance = 10.0 / static_cast<double>(ids.size());
  return {monotone && trained.at10 >= 0.2 && misses == 0,
          format("recall@1/5/10 = %.3f/%.3f/%.3f on %zu held-out pairs (recall@10 >= 0.2, chance %.3f); monotone on %zu "
                 "runs: %s; self-query misses %zu",
                 trained.at1, trained.at5, trained.at10, ids.size(), chance, runs.size() + 1, monotone ? "yes" : "NO",
                 misses)};
}

Verdict reproducibility(const ReferenceRun& ref) {
  const Dataset& ds = *ref.data;
  // A second full default run.
  Trainer again(ref.cfg, ds);
  again.run(ref.cfg.total_steps);
  const bool identical = same_params(again.model(), ref.trainer->model()) && same_log(again.log(), ref.trainer->log());

  // ECLT round trips in every payload.
  std::mt19937_64 rng(3);
  bool eclt_ok = true;
  const fs::path dir = scratch_dir("repro");
  fs::create_directories(dir);
  {
    Tensor f64 = testing::random_tensor({3, 4, 5}, rng);
    Tensor f32(f64.dims());
    for (std::size_t i = 0; i < f64.size(); ++i) f32[i] = static_cast<float>(f64[i]);
    eclt::U32Tensor u32{{7, 3}, {}};
    for (int i = 0; i < 21; ++i) u32.values.push_back(static_cast<std::uint32_t>(rng()));
    eclt::write(dir / "a.eclt", f32, eclt::Payload::kF32);
    eclt::write(dir / "b.eclt", f64, eclt::Payload::kF64);
    eclt::write_u32(dir / "c.eclt", u32);
    eclt_ok = bit_equal(eclt::read_float(dir / "a.eclt"), f32) && bit_equal(eclt::read_float(dir / "b.eclt"), f64);
    const eclt::U32Tensor back = eclt::read_u32(dir / "c.eclt");
    eclt_ok = eclt_ok && back.dims == u32.dims && back.values == u32.values;
    eclt_ok = eclt_ok && eclt::encode(eclt::decode_float(eclt::encode(f64, eclt::Payload::kF64)), eclt::Payload::kF64) ==
                             eclt::encode(f64, eclt::Payload::kF64);
  }

  // Checkpoint: save, load, save again; every file identical.
  bool ckpt_ok = true;
  ref.trainer->save_checkpoint(dir / "ckpt1");
  {
    Trainer loaded = Trainer::resume(dir / "ckpt1", ds);
    loaded.save_checkpoint(dir / "ckpt2");
    ckpt_ok = same_params(loaded.model(), ref.trainer->model());
    for (const auto& e : fs::recursive_directory_iterator(dir / "ckpt1")) {
      if (!e.is_regular_file()) continue;
      const fs::path twin = dir / "ckpt2" / fs::relative(e.path(), dir / "ckpt1");
      ckpt_ok = ckpt_ok && fs::exists(twin) && eclt::read_bytes(e.path()) == eclt::read_bytes(twin);
    }
  }

  // Resume after 100 steps and continue 100 more.
  TrainConfig short_cfg = ref.cfg;
  short_cfg.total_steps = 200;
  Trainer full(short_cfg, ds);
  full.run(200);
  Trainer first(short_cfg, ds);
  first.run(100);
  first.save_checkpoint(dir / "half");
  Trainer resumed = Trainer::resume(dir / "half", ds);
  resumed.run(200);
  const bool resume_ok = resumed.log().size() == 100 && same_params(full.model(), resumed.model()) &&
                         same_log(resumed.log(), std::span<const StepRecord>(full.log()).subspan(100));
  fs::remove_all(dir);

  return {identical && eclt_ok && ckpt_ok && resume_ok,
          format("two same-seed %zu-step runs bit-identical: %s; ECLT f32/f64/u32 round trip: %s; checkpoint round trip: "
                 "%s; resume at 100 vs uninterrupted over 100 steps: %s",
                 ref.cfg.total_steps, identical ? "yes" : "NO", eclt_ok ? "yes" : "NO", ckpt_ok ? "yes" : "NO",
                 resume_ok ? "yes" : "NO")};
}

}  // namespace eclip::acceptance
