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
#include <filesystem>
#include <fstream>

#include "doctest.h"
#include "eclip/eclt.hpp"
#include "eclip/errors.hpp"
#include "eclip/grad_check.hpp"
#include "eclip/trainer.hpp"
#include "test_util.hpp"

using namespace eclip;
using eclip::testing::bit_equal;
using eclip::testing::random_tensor;
namespace fs = std::filesystem;

namespace {

GenConfig tiny_data(std::size_t n_train = 64) {
  GenConfig g;
  g.image_size = 16;
  g.n_train = n_train;
  g.n_test = 10;
  g.expert_frac = 0.125;
  g.signal_area_frac = 0.25;
  g.seed = 3;
  return g;
}

TrainConfig tiny_train(ExpertMode mode, std::size_t steps = 40) {
  TrainConfig c;
  c.model.image_size = 16;
  c.model.patch = 8;
  c.model.width = 16;
  c.model.mlp_hidden = 16;
  c.model.heads = 2;
  c.model.embed_dim = 8;
  c.batch_size = 8;
  c.expert_batch_size = 4;
  c.total_steps = steps;
  c.expert_mode = mode;
  c.seed = 11;
  return c;
}

bool same_params(const Model& a, const Model& b) {
  for (std::size_t i = 0; i < a.params().size(); ++i)
    if (!bit_equal(a.params()[i].var.value(), b.params()[i].var.value())) return false;
  return true;
}

}  // namespace

TEST_CASE("lr_schedule") {
  TrainConfig c;
  c.total_steps = 1000;
  c.base_lr = 1e-3;
  CHECK(lr_schedule(0, c) == 0.0);
  CHECK(lr_schedule(100, c) == 1e-3);
  CHECK(lr_schedule(50, c) == doctest::Approx(5e-4));
  const double last = 1e-3 * 0.5 * (1.0 + std::cos(M_PI * 899.0 / 900.0));
  CHECK(lr_schedule(999, c) == doctest::Approx(last).epsilon(1e-12));
  CHECK(lr_schedule(999, c) < 1e-8);
  CHECK_THROWS_AS(lr_schedule(1000, c), ContractError);
  double prev = 0.0;
  for (std::size_t s = 0; s < 1000; ++s) {
    const double lr = lr_schedule(s, c);
    CHECK(lr >= 0.0);
    CHECK(std::abs(lr - prev) <= 1e-3 / 100.0 + 1e-15);
    prev = lr;
  }
}

TEST_CASE("Adam single-step algebra") {
  std::vector<NamedParam> params{{"x", Var::parameter(Tensor({1}, {0.0})), true}};
  Adam adam(params);
  backward(sum(params[0].var));
  adam.step(params, 0.1, 0.0);
  CHECK(params[0].var.value()[0] == doctest::Approx(-0.1 / (1.0 + Adam::kEps)).epsilon(1e-14));

  std::vector<NamedParam> still{{"w", Var::parameter(Tensor({2}, {1.0, -2.0})), true}};
  Adam a2(still);
  still[0].var.node()->grad_buffer();
  a2.step(still, 0.1, 0.0);
  CHECK(still[0].var.value()[0] == 1.0);
  CHECK(still[0].var.value()[1] == -2.0);
  a2.step(still, 0.1, 0.5);
  CHECK(still[0].var.value()[0] == doctest::Approx(0.95).epsilon(1e-15));
  CHECK(still[0].var.value()[1] == doctest::Approx(-1.9).epsilon(1e-15));

  std::vector<NamedParam> exempt{{"tau", Var::parameter(Tensor({1}, {2.0})), false}};
  Adam a3(exempt);
  exempt[0].var.node()->grad_buffer();
  a3.step(exempt, 0.1, 0.5);
  CHECK(exempt[0].var.value()[0] == 2.0);

  std::vector<NamedParam> bad{{"b", Var::parameter(Tensor({1}, {1.0})), true}};
  Adam a4(bad);
  bad[0].var.node()->grad_buffer()[0] = NAN;
  CHECK_THROWS_AS(a4.step(bad, 0.1, 0.0), NumericError);
  CHECK(bad[0].var.value()[0] == 1.0);
}

TEST_CASE("logged loss matches the double-loop oracle on a 2-sample batch") {
  // With two training samples every batch is the whole set, and the loss is
  // invariant under a shared permutation of the pairs.
  GenConfig g = tiny_data(2);
  g.expert_frac = 0.5;
  const Dataset ds = generate_dataset(g);
  const std::vector<std::size_t> ids{0, 1};
  const std::vector<std::size_t> experts = ds.expert_ids();
  REQUIRE(experts.size() == 1);

  SUBCASE("clip") {
    TrainConfig cfg = tiny_train(ExpertMode::kClip);
    cfg.batch_size = 2;
    Trainer tr(cfg, ds);
    for (int k = 0; k < 5; ++k) {
      const Model& m = tr.model();
      const Tensor v = m.encode_image(Var::constant(ds.images(ids))).value();
      const Tensor t = m.encode_text(ds.token_batch(ids)).value();
      const double expected = infonce_oracle(v, t, m.tau());
      CHECK(std::abs(tr.step().loss.l_total - expected) < 1e-10);
    }
  }
  SUBCASE("naive expert pairs") {
    TrainConfig cfg = tiny_train(ExpertMode::kNaive);
    cfg.batch_size = 2;
    cfg.expert_batch_size = 1;
    Trainer tr(cfg, ds);
    for (int k = 0; k < 5; ++k) {
      const Model& m = tr.model();
      const Var e_img = Var::constant(ds.images(experts));
      std::vector<Var> imgs{Var::constant(ds.images(ids)), e_img,
                            m.heatmap_process(e_img, Var::constant(ds.heatmaps(experts)))};
      const Tensor v = m.encode_image(concat_rows(imgs)).value();
      const std::vector<std::size_t> text_ids{0, 1, experts[0], experts[0]};
      const Tensor t = m.encode_text(ds.token_batch(text_ids)).value();
      const double expected = infonce_oracle(v, t, m.tau());
      const StepRecord rec = tr.step();
      CHECK(rec.expert_used);
      CHECK(std::abs(rec.loss.l_total - expected) < 1e-10);
    }
  }
}

TEST_CASE("full eCLIP step loss passes grad_check on a 2-sample batch") {
  const Dataset ds = generate_dataset(tiny_data());
  TrainConfig cfg = tiny_train(ExpertMode::kEclip);
  cfg.model.width = 8;
  cfg.model.mlp_hidden = 8;
  cfg.model.embed_dim = 4;
  cfg.model.patch = 4;
  Trainer tr(cfg, ds);
  Model& m = tr.model();
  std::mt19937_64 rng(5);
  m.param("image.pos").node()->value = random_tensor(m.param("image.pos").dims(), rng, -0.3, 0.3);

  const std::vector<std::size_t> main{0, 1};
  const std::vector<std::size_t> experts{ds.expert_ids()[0], ds.expert_ids()[1]};
  StepInputs in;
  in.images = Var::constant(ds.images(main));
  in.tokens = ds.token_batch(main);
  in.expert_used = true;
  in.expert_images = Var::constant(ds.images(experts));
  in.expert_heatmaps = Var::constant(ds.heatmaps(experts));
  in.expert_tokens = ds.token_batch(experts);
  in.lambdas = {0.3, 0.8};
  in.priming_active = true;

  const StepGraph g = step_loss(m, in, 0.1);
  CHECK(g.n_p == 2);
  CHECK(g.total.value().item() ==
        doctest::Approx(0.9 * g.clip.l_clip.value().item() + 0.1 * g.priming.value().item()).epsilon(1e-14));

  for (std::size_t slot = 0; slot < m.params().size(); ++slot) {
    const NamedParam original = m.params()[slot];
    CAPTURE(original.name);
    const double err = grad_check(
        [&](const Var& x) {
          m.params()[slot].var = x;
          return step_loss(m, in, 0.1).total;
        },
        original.var.value());
    m.params()[slot].var = original.var;
    CHECK(err < 1e-4);
  }
}

TEST_CASE("clip mode equals a loop without the expert branch") {
  const Dataset ds = generate_dataset(tiny_data());
  const TrainConfig cfg = tiny_train(ExpertMode::kClip, 30);
  Trainer tr(cfg, ds);
  tr.run(cfg.total_steps);

  // Hand-written loop: same model init, same main loader, CLIP loss only.
  Trainer fresh(cfg, ds);
  Model& m = fresh.model();
  Adam adam(m.params());
  std::seed_seq loader_seq{static_cast<std::uint32_t>(cfg.seed), 0u, 2u};
  BatchStream loader(ds.train_ids(), cfg.batch_size, std::mt19937_64(loader_seq)());
  for (std::size_t s = 0; s < cfg.total_steps; ++s) {
    const auto ids = loader.next();
    const ClipLoss loss = clip_infonce(m.encode_image(Var::constant(ds.images(ids))),
                                       m.encode_text(ds.token_batch(ids)), m.log_inv_tau());
    CHECK(loss.l_clip.value().item() == tr.log()[s].loss.l_total);
    backward(loss.l_clip);
    adam.step(m.params(), lr_schedule(s, cfg), cfg.weight_decay);
    clamp_log_inv_tau(m.log_inv_tau().node()->value);
    for (NamedParam& p : m.params()) p.var.zero_grad();
  }
  CHECK(same_params(tr.model(), m));
}

TEST_CASE("eCLIP with p_curr forced to 0 follows the CLIP trajectory") {
  const Dataset ds = generate_dataset(tiny_data());
  const TrainConfig clip = tiny_train(ExpertMode::kClip, 30);
  TrainConfig eclip = tiny_train(ExpertMode::kEclip, 30);
  eclip.base_lr = clip.lr();
  eclip.use_curriculum = false;
  eclip.fixed_p = 0.0;
  eclip.use_priming = false;
  Trainer a(clip, ds), b(eclip, ds);
  a.run(30);
  b.run(30);
  for (std::size_t s = 0; s < 30; ++s) {
    CHECK_FALSE(b.log()[s].expert_used);
    CHECK(a.log()[s].loss.l_total == b.log()[s].loss.l_total);
  }
  for (const NamedParam& p : a.model().params()) {
    CAPTURE(p.name);
    CHECK(bit_equal(p.var.value(), b.model().param(p.name).value()));
  }
}

TEST_CASE("expert usage follows the curriculum") {
  const Dataset ds = generate_dataset(tiny_data());
  TrainConfig cfg = tiny_train(ExpertMode::kEclip, 2000);
  cfg.model.width = 8;
  cfg.model.mlp_hidden = 8;
  cfg.batch_size = 4;
  cfg.expert_batch_size = 2;
  Trainer tr(cfg, ds);
  tr.run(cfg.total_steps);
  double expected = 0.0, used = 0.0;
  for (const StepRecord& r : tr.log()) {
    CHECK(r.p_curr == curriculum_prob(r.step, cfg.schedule()));
    if (r.p_curr == 0.0) CHECK_FALSE(r.expert_used);
    expected += r.p_curr;
    used += r.expert_used;
    CHECK((r.step < cfg.priming_end()) == (r.loss.l_priming > 0.0));
  }
  CHECK(std::abs(used - expected) / 2000.0 <= 0.03);
}

TEST_CASE("training is deterministic under a seed") {
  const Dataset ds = generate_dataset(tiny_data());
  const TrainConfig cfg = tiny_train(ExpertMode::kEclip, 60);
  Trainer a(cfg, ds), b(cfg, ds);
  a.run(60);
  b.run(60);
  CHECK(same_params(a.model(), b.model()));
  CHECK(a.log().back().loss.l_total == b.log().back().loss.l_total);
  TrainConfig other = cfg;
  other.seed = 12;
  Trainer c(other, ds);
  c.run(60);
  CHECK(c.log().back().loss.l_total != a.log().back().loss.l_total);
}

TEST_CASE("resumed training matches uninterrupted training") {
  const fs::path dir = fs::temp_directory_path() / "eclip_test_ckpt";
  fs::remove_all(dir);
  const Dataset ds = generate_dataset(tiny_data());
  for (ExpertMode mode : {ExpertMode::kEclip, ExpertMode::kClip}) {
    CAPTURE(to_string(mode));
    const TrainConfig cfg = tiny_train(mode, 130);
    Trainer full(cfg, ds);
    full.run(130);

    Trainer first(cfg, ds);
    first.run(30);
    first.save_checkpoint(dir);
    Trainer resumed = Trainer::resume(dir, ds);
    CHECK(resumed.next_step() == 30);
    for (const NamedParam& p : first.model().params())
      CHECK(bit_equal(p.var.value(), resumed.model().param(p.name).value()));
    resumed.run(130);
    CHECK(same_params(full.model(), resumed.model()));
    for (std::size_t s = 0; s < 100; ++s) CHECK(resumed.log()[s].loss.l_total == full.log()[30 + s].loss.l_total);
    fs::remove_all(dir);
  }
}

TEST_CASE("corrupt checkpoints are rejected") {
  const fs::path dir = fs::temp_directory_path() / "eclip_test_ckpt_bad";
  fs::remove_all(dir);
  const Dataset ds = generate_dataset(tiny_data());
  Trainer tr(tiny_train(ExpertMode::kEclip, 10), ds);
  tr.run(3);
  tr.save_checkpoint(dir);
  const fs::path victim = dir / "adam_v" / "image.proj.eclt";
  auto bytes = eclt::read_bytes(victim);
  bytes.resize(bytes.size() - 3);
  eclt::write_bytes(victim, bytes);
  CHECK_THROWS_AS(Trainer::resume(dir, ds), IntegrityError);

  tr.save_checkpoint(dir);
  std::ofstream(dir / "checkpoint.json") << "{\"format_version\": 1}";
  CHECK_THROWS_AS(Trainer::resume(dir, ds), IntegrityError);
  fs::remove_all(dir);
}

TEST_CASE("a frozen batch is overfit in every expert mode") {
  const Dataset ds = generate_dataset(tiny_data(8));
  for (ExpertMode mode : {ExpertMode::kEclip, ExpertMode::kClip, ExpertMode::kNaive}) {
    CAPTURE(to_string(mode));
    TrainConfig cfg = tiny_train(mode, 51);
    cfg.warmup_frac = 0.0;
    cfg.expert_batch_size = 1;
    cfg.base_lr = 3e-3;
    Trainer tr(cfg, ds);
    const auto ids = ds.train_ids();
    auto frozen_loss = [&] {
      const Model& m = tr.model();
      return clip_infonce(m.encode_image(Var::constant(ds.images(ids))), m.encode_text(ds.token_batch(ids)),
                          m.log_inv_tau())
          .l_clip.value()
          .item();
    };
    const double before = frozen_loss();
    tr.run(51);
    CHECK(frozen_loss() < before);
  }
}

TEST_CASE("train log CSV round-trips") {
  const fs::path path = fs::temp_directory_path() / "eclip_test_log.csv";
  const Dataset ds = generate_dataset(tiny_data());
  Trainer tr(tiny_train(ExpertMode::kEclip, 12), ds);
  tr.run(12);
  write_train_log(path, tr.log());
  std::ifstream in(path);
  std::string header;
  std::getline(in, header);
  CHECK(header == "step,lr,p_curr,expert_used,l_text,l_image,l_clip,l_priming,l_total,tau");
  const auto back = read_train_log(path);
  REQUIRE(back.size() == 12);
  for (std::size_t i = 0; i < 12; ++i) {
    CHECK(back[i].step == i);
    CHECK(back[i].loss.l_total == tr.log()[i].loss.l_total);
    CHECK(back[i].expert_used == tr.log()[i].expert_used);
  }
  fs::remove(path);
}

TEST_CASE("train config JSON and validation") {
  TrainConfig c;
  c.base_lr = 5e-4;
  c.expert_mode = ExpertMode::kNaive;
  c.curriculum.p_max = 0.4;
  const nlohmann::json j = c;
  TrainConfig back;
  from_json(j, back);
  CHECK(back.hash() == c.hash());
  CHECK(back.lr() == 5e-4);
  CHECK(back.expert_mode == ExpertMode::kNaive);
  CHECK(TrainConfig{}.hash() != c.hash());
  CHECK(TrainConfig{}.lr() == 2e-3);

  TrainConfig bad;
  CHECK_THROWS_AS(from_json(nlohmann::json{{"batch_size", "big"}}, bad), ConfigError);
  CHECK_THROWS_AS(from_json(nlohmann::json{{"expert_mode", "expert"}}, bad), ConfigError);
  bad = TrainConfig{};
  bad.warmup_frac = 1.5;
  CHECK_THROWS_AS(bad.validate(), ConfigError);

  GenConfig g = tiny_data();
  g.expert_frac = 0.01;  // floor(0.64) = 0 experts
  const Dataset no_experts = generate_dataset(g);
  CHECK_THROWS_AS(Trainer(tiny_train(ExpertMode::kEclip), no_experts), ConfigError);
  Trainer ok(tiny_train(ExpertMode::kClip), no_experts);
  CHECK(ok.next_step() == 0);
}
