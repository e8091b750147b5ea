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

#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <unistd.h>
#include <vector>

#include "doctest.h"
#include "eclip/cli.hpp"
#include "eclip/errors.hpp"
#include "eclip/evaluation.hpp"
#include "eclip/trainer.hpp"

namespace fs = std::filesystem;
using json = nlohmann::json;
using namespace eclip;

namespace {

struct TempDir {
  fs::path path;
  TempDir() {
    static int counter = 0;
    path = fs::temp_directory_path() / ("eclip_cli_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
    fs::remove_all(path);
    fs::create_directories(path);
  }
  ~TempDir() {
    std::error_code ec;
    fs::remove_all(path, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;
};

struct Outcome {
  int code;
  std::string out, err;
};

Outcome invoke(std::vector<std::string> args) {
  std::ostringstream out, err;
  const int code = cli::run(args, out, err);
  return {code, out.str(), err.str()};
}

// Small enough that a full train/eval round trip takes a couple of seconds.
const std::vector<std::string> kTiny = {
    "--override", "data.n_train=240",        "--override", "data.n_test=60",      "--override",
    "data.expert_frac=0.05",                 "--override", "train.total_steps=12", "--override",
    "train.batch_size=16",                   "--override", "train.expert_batch_size=4", "--override",
    "train.model.width=16",                  "--override", "train.model.embed_dim=16", "--override",
    "train.model.mlp_hidden=32",             "--override", "train.model.patch=16",     "--override",
    "eval.probe.epochs=2",                   "--override", "rag.n_queries=4"};

std::vector<std::string> with(std::vector<std::string> head, std::vector<std::string> tail) {
  std::vector<std::string> v = head;
  v.insert(v.end(), kTiny.begin(), kTiny.end());
  v.insert(v.end(), tail.begin(), tail.end());
  return v;
}

json read_json(const fs::path& p) {
  std::ifstream in(p);
  REQUIRE(in);
  return json::parse(in);
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

}  // namespace

TEST_CASE("config resolution") {
  const json base = cli::default_config();

  SUBCASE("defaults round trip") {
    const json c = cli::resolve_config(base, std::nullopt, {}, std::nullopt);
    CHECK(c.at("train").at("total_steps") == base.at("train").at("total_steps"));
    CHECK(c.at("rag").at("generator") == "mock");
  }
  SUBCASE("dotted overrides parse as json with a string fallback") {
    const json c = cli::resolve_config(
        base, std::nullopt, {"train.total_steps=77", "train.expert_mode=naive", "eval.recall_k=[2,3]", "train.use_mixup=false"},
        std::nullopt);
    CHECK(c["train"]["total_steps"] == 77);
    CHECK(c["train"]["expert_mode"] == "naive");
    CHECK(c["eval"]["recall_k"] == json({2, 3}));
    CHECK(c["train"]["use_mixup"] == false);
  }
  SUBCASE("seed reaches every section") {
    const json c = cli::resolve_config(base, std::nullopt, {}, 42);
    for (const char* s : {"data", "train", "eval", "geometry", "rag"}) CHECK(c[s]["seed"] == 42);
  }
  SUBCASE("an explicit null resets an optional field") {
    const json c = cli::resolve_config(base, std::nullopt, {"train.base_lr=0.004", "train.base_lr=null"}, std::nullopt);
    CHECK(c["train"]["base_lr"].is_null());
  }
  SUBCASE("config file then overrides") {
    TempDir dir;
    std::ofstream(dir.path / "c.json") << R"({"train": {"total_steps": 9, "batch_size": 8}, "geometry": {"bins": 7}})";
    const json c = cli::resolve_config(base, dir.path / "c.json", {"train.total_steps=11"}, std::nullopt);
    CHECK(c["train"]["total_steps"] == 11);
    CHECK(c["train"]["batch_size"] == 8);
    CHECK(c["geometry"]["bins"] == 7);
  }
  SUBCASE("rejections") {
    CHECK_THROWS_AS(cli::resolve_config(base, std::nullopt, {"train.nope=1"}, std::nullopt), ConfigError);
    CHECK_THROWS_AS(cli::resolve_config(base, std::nullopt, {"nope.x=1"}, std::nullopt), ConfigError);
    CHECK_THROWS_AS(cli::resolve_config(base, std::nullopt, {"train.total_steps=many"}, std::nullopt), ConfigError);
    CHECK_THROWS_AS(cli::resolve_config(base, std::nullopt, {"train.model=3"}, std::nullopt), ConfigError);
    CHECK_THROWS_AS(cli::resolve_config(base, std::nullopt, {"no_equals"}, std::nullopt), ConfigError);
    CHECK_THROWS_AS(cli::resolve_config(base, std::nullopt, {"eval.recall_k=[]"}, std::nullopt), ConfigError);
    CHECK_THROWS_AS(cli::resolve_config(base, std::nullopt, {"eval.train_fractions=[0]"}, std::nullopt), ConfigError);
    CHECK_THROWS_AS(cli::resolve_config(base, std::nullopt, {"geometry.uniformity_pairs=some"}, std::nullopt),
                    ConfigError);
    CHECK_THROWS_AS(cli::resolve_config(base, std::nullopt, {"train.batch_size=-3"}, std::nullopt), ConfigError);
    CHECK_THROWS_AS(cli::resolve_config(base, fs::path("/nonexistent/c.json"), {}, std::nullopt), IoError);
  }
}

TEST_CASE("help and usage errors") {
  const Outcome help = invoke({"--help"});
  CHECK(help.code == cli::kExitOk);
  for (const char* flag : {"--config", "--seed", "--out", "--override", "--data", "--checkpoint", "--resume",
                           "--expert-mode", "--checkpoint-every", "--log-every", "--train-fraction", "--uniformity-all",
                           "--generator", "gen-data", "train", "eval", "geometry", "rag", "zero-shot", "retrieval",
                           "probe", "ECLIP_NUM_THREADS"})
    CHECK_MESSAGE(help.out.find(flag) != std::string::npos, flag);
  CHECK(invoke({"train", "--help"}).code == cli::kExitOk);
  CHECK(invoke({}).code == cli::kExitConfig);
  CHECK(invoke({"frobnicate"}).code == cli::kExitConfig);
  CHECK(invoke({"eval"}).code == cli::kExitConfig);
  CHECK(invoke({"--seed", "x", "gen-data"}).code == cli::kExitConfig);
}

TEST_CASE("gen-data is reproducible and records the run") {
  TempDir dir;
  const auto a = invoke(with({"--out", (dir.path / "a").string(), "--seed", "5"}, {"gen-data"}));
  const auto b = invoke(with({"--out", (dir.path / "b").string(), "--seed", "5"}, {"gen-data"}));
  const auto c = invoke(with({"--out", (dir.path / "c").string(), "--seed", "6"}, {"gen-data"}));
  REQUIRE(a.code == 0);
  REQUIRE(b.code == 0);
  REQUIRE(c.code == 0);
  const json ja = json::parse(a.out), jb = json::parse(b.out), jc = json::parse(c.out);
  CHECK(ja["checksum"] == jb["checksum"]);
  CHECK(ja["checksum"] != jc["checksum"]);
  CHECK(ja["n_train"] == 240);
  for (const char* f : {"images.eclt", "tokens.eclt", "labels.eclt", "manifest.json"})
    CHECK(slurp(dir.path / "a" / f) == slurp(dir.path / "b" / f));

  const json run = read_json(dir.path / "a" / "run.json");
  CHECK(run["command"] == "gen-data");
  CHECK(run["exit_code"] == 0);
  CHECK(run["version"] == cli::version());
  CHECK(run["config"]["data"]["seed"] == 5);
  CHECK(run["config"]["data"]["n_test"] == 60);
}

TEST_CASE("train, resume and evaluate end to end") {
  TempDir dir;
  const std::string data = (dir.path / "data").string();
  REQUIRE(invoke(with({"--out", data}, {"gen-data"})).code == 0);

  const std::string full = (dir.path / "full").string();
  const Outcome t = invoke(with({"--out", full}, {"train", "--data", data, "--checkpoint-every", "6", "--log-every", "0"}));
  REQUIRE_MESSAGE(t.code == 0, t.err);
  const auto log = read_train_log(fs::path(full) / "train_log.csv");
  REQUIRE(log.size() == 12);
  CHECK(slurp(fs::path(full) / "train_log.csv").rfind("step,lr,p_curr,expert_used,l_text,l_image,l_clip,l_priming,l_total,tau\n", 0) == 0);
  const json manifest = read_json(fs::path(full) / "checkpoint" / "checkpoint.json");
  CHECK(manifest["step"] == 12);
  CHECK(manifest.contains("config_hash"));
  CHECK(manifest.contains("seed"));
  CHECK(json::parse(t.out).contains("macro_f1"));

  SUBCASE("resume reproduces the uninterrupted run") {
    const std::string part = (dir.path / "part").string();
    fs::create_directories(part);
    fs::copy_file(fs::path(full) / "train_log.csv", fs::path(part) / "train_log.csv");
    const Outcome r = invoke(with({"--out", part}, {"train", "--data", data, "--log-every", "0", "--resume",
                                                     (fs::path(full) / "checkpoints" / "step-6").string()}));
    REQUIRE_MESSAGE(r.code == 0, r.err);
    CHECK(slurp(fs::path(part) / "train_log.csv") == slurp(fs::path(full) / "train_log.csv"));
    for (const auto& e : fs::directory_iterator(fs::path(full) / "checkpoint" / "model"))
      CHECK_MESSAGE(slurp(e.path()) == slurp(fs::path(part) / "checkpoint" / "model" / e.path().filename()),
                    e.path().filename().string());
  }

  SUBCASE("evaluation subcommands write reports") {
    const std::string ckpt = (fs::path(full) / "checkpoint").string();
    const std::string ev = (dir.path / "ev").string();
    REQUIRE(invoke(with({"--out", ev}, {"eval", "zero-shot", "--data", data, "--checkpoint", ckpt})).code == 0);
    const MetricsReport zs = read_json(fs::path(ev) / "metrics_zero_shot.json").get<MetricsReport>();
    CHECK(zs.macro_f1.has_value());

    REQUIRE(invoke(with({"--out", ev}, {"eval", "retrieval", "--data", data, "--checkpoint", ckpt})).code == 0);
    const MetricsReport rt = read_json(fs::path(ev) / "metrics_retrieval.json").get<MetricsReport>();
    REQUIRE(rt.recall.size() == 3);
    CHECK(rt.recall.at(1) <= rt.recall.at(5));
    CHECK(rt.recall.at(5) <= rt.recall.at(10));

    const Outcome p = invoke(with({"--out", ev}, {"eval", "probe", "--data", data, "--checkpoint", ckpt,
                                                   "--train-fraction", "0.25,1"}));
    REQUIRE_MESSAGE(p.code == 0, p.err);
    const std::string sweep = slurp(fs::path(ev) / "probe_sweep.csv");
    CHECK(sweep.rfind("train_fraction,n_train,roc_auc\n", 0) == 0);
    CHECK(std::count(sweep.begin(), sweep.end(), '\n') == 3);
    CHECK(fs::exists(fs::path(ev) / "probe_sweep.svg"));
    CHECK(read_json(fs::path(ev) / "run.json")["command"] == "eval probe");

    const std::string geo = (dir.path / "geo").string();
    REQUIRE(invoke(with({"--out", geo}, {"geometry", "--data", data, "--checkpoint", ckpt})).code == 0);
    const MetricsReport g = read_json(fs::path(geo) / "metrics_geometry.json").get<MetricsReport>();
    CHECK(g.alignment.has_value());
    CHECK(g.modality_gap.has_value());
    CHECK(g.nmi.has_value());
    // 5 classes, ordered distinct pairs, two modalities, csv + svg.
    std::size_t files = 0;
    for ([[maybe_unused]] const auto& e : fs::directory_iterator(fs::path(geo) / "histograms")) ++files;
    CHECK(files == 5 * 4 * 2 * 2);
    CHECK(slurp(fs::path(geo) / "histograms" / "text_1_0.csv").rfind("bin_left,bin_right,count\n", 0) == 0);

    const std::string rag = (dir.path / "rag").string();
    REQUIRE(invoke(with({"--out", rag}, {"rag", "--data", data, "--checkpoint", ckpt})).code == 0);
    const json rows = read_json(fs::path(rag) / "rag.json");
    REQUIRE(rows.size() == 4);
    for (const json& row : rows)
      for (const char* k : {"id", "generated", "reference", "bleu2", "embed_sim"}) CHECK(row.contains(k));
  }
}

TEST_CASE("exit codes") {
  TempDir dir;
  const std::string out = (dir.path / "o").string();
  CHECK(invoke({"--out", out, "--override", "train.nope=1", "gen-data"}).code == cli::kExitConfig);
  CHECK(read_json(fs::path(out) / "run.json")["exit_code"] == cli::kExitConfig);
  CHECK(invoke({"--out", out, "--config", (dir.path / "missing.json").string(), "gen-data"}).code == cli::kExitIo);
  CHECK(invoke({"--out", out, "eval", "zero-shot", "--data", (dir.path / "missing").string()}).code == cli::kExitIo);
  CHECK(invoke(with({"--out", out}, {"rag", "--generator", "cmd:exit 7"})).code == cli::kExitIo);
  CHECK(invoke(with({"--out", out}, {"train", "--expert-mode", "sideways"})).code == cli::kExitConfig);

  const Outcome nan = invoke(with({"--out", out, "--override", "train.base_lr=1e200"}, {"train", "--log-every", "0"}));
  CHECK(nan.code == cli::kExitNumeric);
  CHECK(fs::exists(fs::path(out) / "train_log.csv"));

  ::setenv("ECLIP_NUM_THREADS", "zero", 1);
  CHECK(invoke({"--out", out, "gen-data"}).code == cli::kExitConfig);
  ::unsetenv("ECLIP_NUM_THREADS");
}
