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

#include "eclip/cli.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <ctime>
#include <fstream>
#include <sstream>

#include "CLI11.hpp"
#include "eclip/eclt.hpp"
#include "eclip/errors.hpp"
#include "eclip/evaluation.hpp"
#include "eclip/ragharness.hpp"
#include "eclip/synthdata.hpp"
#include "eclip/trainer.hpp"

#ifndef ECLIP_GIT_VERSION
#define ECLIP_GIT_VERSION "unknown"
#endif

namespace fs = std::filesystem;
using json = nlohmann::json;

namespace eclip::cli {

const char* version() { return ECLIP_GIT_VERSION; }

json default_config() {
  json c;
  c["data"] = GenConfig{};
  c["train"] = TrainConfig{};
  c["eval"] = {{"prompts_per_class", 10},
               {"recall_k", {1, 5, 10}},
               {"train_fractions", {1.0}},
               {"val_frac", 0.1},
               {"probe", {{"epochs", 5}, {"batch_size", 32}, {"lr", 0.05}, {"warmup_frac", 0.1}}},
               {"seed", 0}};
  c["geometry"] = {{"bins", 20}, {"uniformity_pairs", "off_diagonal"}, {"seed", 0}};
  c["rag"] = {{"k_final", 5},          {"expansion", 4}, {"generator", "mock"},
              {"timeout_ms", 30000},   {"n_queries", 0}, {"seed", 0}};
  return c;
}

namespace {

const char* kind(const json& v) {
  if (v.is_boolean()) return "a boolean";
  if (v.is_number()) return "a number";
  if (v.is_string()) return "a string";
  if (v.is_array()) return "an array";
  if (v.is_object()) return "an object";
  return "null";
}

// Unknown keys and type changes relative to the defaults.
void check_shape(const json& ref, const json& got, const std::string& path) {
  for (const auto& [key, value] : got.items()) {
    const std::string name = path.empty() ? key : path + "." + key;
    if (!ref.contains(key)) throw ConfigError("unknown config key '" + name + "'");
    const json& r = ref.at(key);
    if (r.is_object()) {
      if (!value.is_object()) throw ConfigError(name + " must be an object");
      check_shape(r, value, name);
    } else if (!r.is_null() && !value.is_null() && std::string(kind(r)) != kind(value)) {
      throw ConfigError(name + " must be " + kind(r) + ", got " + kind(value));
    }
  }
}

template <class T>
T need(const json& section, const char* section_name, const char* key) {
  const std::string name = std::string(section_name) + "." + key;
  const json& v = section.at(key);
  if constexpr (std::is_same_v<T, std::string>) {
    return v.get<std::string>();
  } else if constexpr (std::is_integral_v<T>) {
    if (!v.is_number_integer() || v.get<std::int64_t>() < 0) throw ConfigError(name + " must be a non-negative integer");
    return v.get<T>();
  } else {
    return v.get<T>();
  }
}

struct EvalSettings {
  std::size_t prompts_per_class = 10;
  std::vector<std::size_t> recall_k;
  std::vector<double> train_fractions;
  double val_frac = 0.1;
  ProbeConfig probe;
  std::uint64_t seed = 0;
};

EvalSettings parse_eval(const json& e) {
  EvalSettings s;
  s.prompts_per_class = need<std::size_t>(e, "eval", "prompts_per_class");
  if (s.prompts_per_class == 0) throw ConfigError("eval.prompts_per_class must be positive");
  for (const json& k : e.at("recall_k")) {
    if (!k.is_number_integer() || k.get<std::int64_t>() <= 0)
      throw ConfigError("eval.recall_k must hold positive integers");
    s.recall_k.push_back(k.get<std::size_t>());
  }
  if (s.recall_k.empty()) throw ConfigError("eval.recall_k must not be empty");
  std::sort(s.recall_k.begin(), s.recall_k.end());
  for (const json& f : e.at("train_fractions")) {
    if (!f.is_number() || !(f.get<double>() > 0.0 && f.get<double>() <= 1.0))
      throw ConfigError("eval.train_fractions must hold values in (0, 1]");
    s.train_fractions.push_back(f.get<double>());
  }
  if (s.train_fractions.empty()) throw ConfigError("eval.train_fractions must not be empty");
  s.val_frac = e.at("val_frac").get<double>();
  if (!(s.val_frac > 0.0 && s.val_frac < 1.0)) throw ConfigError("eval.val_frac must lie in (0, 1)");
  const json& p = e.at("probe");
  s.probe.epochs = need<std::size_t>(p, "eval.probe", "epochs");
  s.probe.batch_size = need<std::size_t>(p, "eval.probe", "batch_size");
  s.probe.lr = p.at("lr").get<double>();
  s.probe.warmup_frac = p.at("warmup_frac").get<double>();
  if (s.probe.epochs == 0 || s.probe.batch_size == 0) throw ConfigError("eval.probe epochs and batch_size must be positive");
  if (!(s.probe.lr > 0.0)) throw ConfigError("eval.probe.lr must be positive");
  if (!(s.probe.warmup_frac >= 0.0 && s.probe.warmup_frac <= 1.0)) throw ConfigError("eval.probe.warmup_frac must lie in [0, 1]");
  s.seed = need<std::uint64_t>(e, "eval", "seed");
  s.probe.seed = s.seed;
  return s;
}

void validate_sections(const json& c) {
  GenConfig g;
  from_json(c.at("data"), g);
  g.validate();
  TrainConfig t;
  from_json(c.at("train"), t);
  t.validate();
  parse_eval(c.at("eval"));
  const json& geo = c.at("geometry");
  if (need<std::size_t>(geo, "geometry", "bins") == 0) throw ConfigError("geometry.bins must be positive");
  const std::string pairs = geo.at("uniformity_pairs");
  if (pairs != "off_diagonal" && pairs != "all") throw ConfigError("geometry.uniformity_pairs must be off_diagonal or all");
  need<std::uint64_t>(geo, "geometry", "seed");
  const json& rag = c.at("rag");
  if (need<std::size_t>(rag, "rag", "k_final") == 0 || need<std::size_t>(rag, "rag", "expansion") == 0)
    throw ConfigError("rag.k_final and rag.expansion must be positive");
  need<std::size_t>(rag, "rag", "timeout_ms");
  need<std::size_t>(rag, "rag", "n_queries");
  need<std::uint64_t>(rag, "rag", "seed");
}

}  // namespace

json resolve_config(const json& base, const std::optional<fs::path>& file, const std::vector<std::string>& overrides,
                    std::optional<std::uint64_t> seed) {
  json c = base;
  if (file) {
    std::ifstream in(*file);
    if (!in) throw IoError("cannot open config file " + file->string());
    json patch;
    try {
      patch = json::parse(in);
    } catch (const json::exception& e) {
      throw ConfigError(file->string() + ": " + e.what());
    }
    if (!patch.is_object()) throw ConfigError(file->string() + ": top level must be an object");
    check_shape(base, patch, "");
    c.merge_patch(patch);
  }
  for (const std::string& o : overrides) {
    const auto eq = o.find('=');
    if (eq == std::string::npos || eq == 0) throw ConfigError("override '" + o + "' is not key=value");
    const std::string key = o.substr(0, eq), raw = o.substr(eq + 1);
    json value = json::parse(raw, nullptr, false);
    if (value.is_discarded()) value = raw;
    json patch = value;
    std::string rest = key;
    std::vector<std::string> parts;
    for (std::size_t dot; (dot = rest.find('.')) != std::string::npos; rest = rest.substr(dot + 1))
      parts.push_back(rest.substr(0, dot));
    parts.push_back(rest);
    for (auto it = parts.rbegin(); it != parts.rend(); ++it) patch = json{{*it, patch}};
    check_shape(base, patch, "");
    if (value.is_null()) {
      // merge_patch would delete the key; optional fields take an explicit null.
      json* node = &c;
      for (std::size_t i = 0; i + 1 < parts.size(); ++i) node = &(*node)[parts[i]];
      (*node)[parts.back()] = nullptr;
    } else {
      c.merge_patch(patch);
    }
  }
  if (seed)
    for (const char* s : {"data", "train", "eval", "geometry", "rag"}) c[s]["seed"] = *seed;

  validate_sections(c);
  // Normalize through the parsers so derived fields reflect the overrides.
  GenConfig g;
  from_json(c.at("data"), g);
  c["data"] = g;
  TrainConfig t;
  from_json(c.at("train"), t);
  c["train"] = t;
  return c;
}

namespace {

// ---- shared plumbing -----------------------------------------------------

struct Context {
  json config;
  fs::path out_dir;
  std::optional<fs::path> data_dir;
  std::ostream* out = nullptr;
  std::ostream* err = nullptr;
};

std::string now_iso() {
  const std::time_t t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

void ensure_dir(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw IoError("cannot create directory " + dir.string() + ": " + ec.message());
}

void write_json(const fs::path& path, const json& j) {
  const std::string text = j.dump(2) + "\n";
  eclt::write_bytes(path, std::vector<std::uint8_t>(text.begin(), text.end()));
}

GenConfig data_config(const Context& ctx) { return ctx.config.at("data").get<GenConfig>(); }
TrainConfig train_config(const Context& ctx) { return ctx.config.at("train").get<TrainConfig>(); }

Dataset load_data(const Context& ctx) {
  if (ctx.data_dir) return Dataset::load(*ctx.data_dir);
  return generate_dataset(data_config(ctx));
}

// A checkpoint directory (model/ inside) or a bare model directory.
Model load_model(const fs::path& path) {
  if (fs::exists(path / "model" / "model.json")) return Model::load(path / "model");
  return Model::load(path);
}

std::string fraction_tag(double f) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%g", f);
  return buf;
}

void write_line_svg(const fs::path& path, const std::vector<std::pair<double, double>>& points, const std::string& title) {
  constexpr double kW = 480, kH = 260, kPad = 36;
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  out << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << kW << "\" height=\"" << kH << "\">\n";
  out << "<text x=\"" << kPad << "\" y=\"18\" font-size=\"13\" font-family=\"sans-serif\">" << title << "</text>\n";
  out << "<polyline fill=\"none\" stroke=\"#4a78b5\" stroke-width=\"2\" points=\"";
  for (const auto& [x, y] : points)
    out << kPad + x * (kW - 2 * kPad) << "," << kH - kPad - std::clamp(y, 0.0, 1.0) * (kH - 2 * kPad) << " ";
  out << "\"/>\n<line x1=\"" << kPad << "\" y1=\"" << kH - kPad << "\" x2=\"" << kW - kPad << "\" y2=\"" << kH - kPad
      << "\" stroke=\"black\"/>\n<line x1=\"" << kPad << "\" y1=\"" << kPad << "\" x2=\"" << kPad << "\" y2=\""
      << kH - kPad << "\" stroke=\"black\"/>\n</svg>\n";
  if (!out) throw IoError("cannot write " + path.string());
}

MetricsReport zero_shot_report(const Model& model, const Dataset& data, const EvalSettings& s) {
  const auto ids = data.test_ids();
  const Tensor cls = label_embeddings(model, make_prompts(data.config(), s.prompts_per_class, s.seed));
  const auto pred = zero_shot_classify(embed_images(model, data, ids), cls);
  const auto truth = data.labels(ids);
  MetricsReport r;
  r.macro_f1 = macro_f1(pred, truth, data.config().n_classes);
  r.accuracy = accuracy(pred, truth);
  return r;
}

// ---- subcommands ---------------------------------------------------------

int cmd_gen_data(Context& ctx) {
  const Dataset ds = generate_dataset(data_config(ctx));
  ds.write(ctx.out_dir);
  std::uint64_t checksum = 1469598103934665603ull;
  std::vector<fs::path> files;
  for (const auto& entry : fs::directory_iterator(ctx.out_dir))
    if (entry.is_regular_file() && entry.path().filename() != "run.json") files.push_back(entry.path());
  std::sort(files.begin(), files.end());
  for (const fs::path& f : files)
    for (std::uint8_t b : eclt::read_bytes(f)) checksum = (checksum ^ b) * 1099511628211ull;
  char hex[17];
  std::snprintf(hex, sizeof hex, "%016llx", static_cast<unsigned long long>(checksum));
  const auto train = ds.train_ids(), test = ds.test_ids();
  const json summary{{"dir", ctx.out_dir.string()},
                     {"n_train", ds.n_train()},
                     {"n_test", ds.n_test()},
                     {"n_expert", ds.expert_ids().size()},
                     {"train_class_counts", ds.class_histogram(train)},
                     {"test_class_counts", ds.class_histogram(test)},
                     {"checksum", hex}};
  *ctx.out << summary.dump(2) << "\n";
  return kExitOk;
}

int cmd_train(Context& ctx, const std::optional<fs::path>& resume, std::size_t checkpoint_every, std::size_t log_every) {
  const Dataset ds = load_data(ctx);
  TrainConfig cfg = train_config(ctx);
  Trainer trainer = resume ? Trainer::resume(*resume, ds) : Trainer(cfg, ds);
  cfg = trainer.config();
  ctx.config["train"] = cfg;

  const fs::path log_path = ctx.out_dir / "train_log.csv";
  std::vector<StepRecord> log;
  if (resume && fs::exists(log_path)) {
    for (const StepRecord& r : read_train_log(log_path))
      if (r.step < trainer.next_step()) log.push_back(r);
  }
  const auto flush_log = [&] {
    log.insert(log.end(), trainer.log().begin(), trainer.log().end());
    write_train_log(log_path, log);
  };
  try {
    trainer.run(cfg.total_steps, [&](const StepRecord& r) {
      if (log_every > 0 && (r.step % log_every == 0 || r.step + 1 == cfg.total_steps)) {
        char buf[160];
        std::snprintf(buf, sizeof buf, "step %zu/%zu lr %.3g p %.3f expert %d clip %.4f priming %.4g tau %.4f\n", r.step,
                      cfg.total_steps, r.lr, r.p_curr, r.expert_used ? 1 : 0, r.loss.l_clip, r.loss.l_priming, r.loss.tau);
        *ctx.err << buf << std::flush;
      }
      if (checkpoint_every > 0 && (r.step + 1) % checkpoint_every == 0 && r.step + 1 < cfg.total_steps)
        trainer.save_checkpoint(ctx.out_dir / "checkpoints" / ("step-" + std::to_string(r.step + 1)));
    });
  } catch (const NumericError&) {
    flush_log();  // keep the steps leading up to the abort
    throw;
  }
  flush_log();
  trainer.save_checkpoint(ctx.out_dir / "checkpoint");

  const EvalSettings s = parse_eval(ctx.config.at("eval"));
  const MetricsReport report = zero_shot_report(trainer.model(), ds, s);
  write_json(ctx.out_dir / "metrics.json", report);
  *ctx.out << json(report).dump(2) << "\n";
  return kExitOk;
}

// Untrained model with the same initialization a training run would use.
struct ModelSource {
  std::optional<Trainer> init;
  std::optional<Model> loaded;
  const Model& get() const { return loaded ? *loaded : init->model(); }
};

void open_model(ModelSource& src, const std::optional<fs::path>& checkpoint, const Context& ctx, const Dataset& ds) {
  if (checkpoint) {
    src.loaded.emplace(load_model(*checkpoint));
  } else {
    TrainConfig cfg = train_config(ctx);
    if (ds.expert_ids().empty()) cfg.expert_mode = ExpertMode::kClip;
    src.init.emplace(cfg, ds);
  }
  const ModelConfig& mc = src.get().config();
  if (mc.image_size != ds.config().image_size || mc.vocab < ds.config().vocab || mc.max_len != ds.config().max_len)
    throw ConfigError("model and dataset disagree on image_size, vocab or max_len");
}

int cmd_eval(Context& ctx, const std::string& task, const std::optional<fs::path>& checkpoint) {
  const Dataset ds = load_data(ctx);
  ModelSource src;
  open_model(src, checkpoint, ctx, ds);
  const Model& model = src.get();
  const EvalSettings s = parse_eval(ctx.config.at("eval"));

  if (task == "zero-shot") {
    const MetricsReport r = zero_shot_report(model, ds, s);
    write_json(ctx.out_dir / "metrics_zero_shot.json", r);
    *ctx.out << json(r).dump(2) << "\n";
    return kExitOk;
  }
  if (task == "retrieval") {
    const auto ids = ds.test_ids();
    const std::size_t kmax = s.recall_k.back();
    if (kmax > ids.size()) throw ConfigError("eval.recall_k exceeds the test split size");
    const Tensor v = embed_images(model, ds, ids);
    const FlatIndex index(embed_texts(model, ds, ids), std::vector<std::uint64_t>(ids.begin(), ids.end()));
    std::vector<std::vector<SearchHit>> results(ids.size());
    const std::size_t d = v.dim(1);
    parallel_for(ids.size(), [&](std::size_t q) { results[q] = index.query(std::span<const double>(v.ptr() + q * d, d), kmax); });
    MetricsReport r;
    const std::vector<std::uint64_t> truth(ids.begin(), ids.end());
    for (std::size_t k : s.recall_k) r.recall[k] = recall_at_k(results, truth, k);
    r.validate();
    write_json(ctx.out_dir / "metrics_retrieval.json", r);
    *ctx.out << json(r).dump(2) << "\n";
    return kExitOk;
  }

  // Linear probe: a seeded validation slice of the training split, then
  // each requested fraction of the rest.
  auto train = ds.train_ids();
  std::mt19937_64 rng(s.seed);
  std::shuffle(train.begin(), train.end(), rng);
  const auto n_val = std::max<std::size_t>(1, static_cast<std::size_t>(std::floor(s.val_frac * static_cast<double>(train.size()))));
  const std::vector<std::size_t> val(train.begin(), train.begin() + static_cast<std::ptrdiff_t>(n_val));
  const std::vector<std::size_t> pool(train.begin() + static_cast<std::ptrdiff_t>(n_val), train.end());
  const auto test = ds.test_ids();
  const Tensor x_pool = embed_images(model, ds, pool), x_val = embed_images(model, ds, val),
               x_test = embed_images(model, ds, test);
  const auto y_pool = ds.labels(pool), y_val = ds.labels(val), y_test = ds.labels(test);
  const std::size_t d = x_pool.dim(1);

  std::vector<MetricsReport> reports(s.train_fractions.size());
  std::vector<std::size_t> used(s.train_fractions.size());
  parallel_for(s.train_fractions.size(), [&](std::size_t i) {
    const auto n = std::max<std::size_t>(1, static_cast<std::size_t>(std::floor(s.train_fractions[i] * static_cast<double>(pool.size()))));
    used[i] = n;
    Tensor x({n, d});
    std::copy_n(x_pool.ptr(), n * d, x.ptr());
    const std::vector<std::size_t> y(y_pool.begin(), y_pool.begin() + static_cast<std::ptrdiff_t>(n));
    const ProbeResult p = linear_probe(x, y, x_val, y_val, x_test, y_test, ds.config().n_classes, s.probe);
    reports[i].roc_auc = p.macro_auc;
  });
  std::ofstream csv(ctx.out_dir / "probe_sweep.csv");
  if (!csv) throw IoError("cannot write " + (ctx.out_dir / "probe_sweep.csv").string());
  csv << "train_fraction,n_train,roc_auc\n";
  std::vector<std::pair<double, double>> points;
  for (std::size_t i = 0; i < reports.size(); ++i) {
    char buf[96];
    std::snprintf(buf, sizeof buf, "%.17g,%zu,%.17g\n", s.train_fractions[i], used[i], *reports[i].roc_auc);
    csv << buf;
    points.emplace_back(s.train_fractions[i], *reports[i].roc_auc);
    write_json(ctx.out_dir / ("metrics_probe_f" + fraction_tag(s.train_fractions[i]) + ".json"), reports[i]);
  }
  csv.close();
  std::sort(points.begin(), points.end());
  write_line_svg(ctx.out_dir / "probe_sweep.svg", points, "linear probe ROC AUC vs train fraction");
  write_json(ctx.out_dir / "metrics_probe.json", reports.back());
  *ctx.out << json(reports.back()).dump(2) << "\n";
  return kExitOk;
}

int cmd_geometry(Context& ctx, const std::optional<fs::path>& checkpoint) {
  const Dataset ds = load_data(ctx);
  ModelSource src;
  open_model(src, checkpoint, ctx, ds);
  const Model& model = src.get();
  const json& g = ctx.config.at("geometry");
  const std::size_t bins = g.at("bins");
  const std::uint64_t seed = g.at("seed");
  const auto pairs = g.at("uniformity_pairs") == "all" ? UniformityPairs::kAll : UniformityPairs::kOffDiagonal;

  const auto ids = ds.test_ids();
  const auto labels = ds.labels(ids);
  const Tensor v = embed_images(model, ds, ids), t = embed_texts(model, ds, ids);
  MetricsReport r;
  r.alignment = alignment(v, t);
  r.uniformity = uniformity(v, t, pairs);
  r.modality_gap = modality_gap(v, t);
  const KMeansResult km = kmeans(v, ds.config().n_classes, seed);
  r.nmi = nmi(km.labels, labels);
  std::vector<std::size_t> distinct(km.labels);
  std::sort(distinct.begin(), distinct.end());
  if (std::unique(distinct.begin(), distinct.end()) - distinct.begin() >= 2) {
    r.silhouette = silhouette(v, km.labels);
    r.calinski_harabasz = calinski_harabasz(v, km.labels);
  }
  r.validate();
  write_json(ctx.out_dir / "metrics_geometry.json", r);

  const fs::path hist_dir = ctx.out_dir / "histograms";
  ensure_dir(hist_dir);
  json means;
  for (const auto& [name, x] : {std::pair<const char*, const Tensor*>{"image", &v}, {"text", &t}}) {
    for (const GroupPairHistogram& h : cosine_histograms(*x, labels, bins)) {
      const std::string stem = std::string(name) + "_" + std::to_string(h.a) + "_" + std::to_string(h.b);
      write_histogram_csv(hist_dir / (stem + ".csv"), h.hist);
      write_histogram_svg(hist_dir / (stem + ".svg"), h.hist,
                          std::string(name) + " cosine, class " + std::to_string(h.a) + " vs " + std::to_string(h.b));
      means[name][std::to_string(h.a) + "-" + std::to_string(h.b)] = h.hist.mean;
    }
  }
  write_json(ctx.out_dir / "cosine_means.json", means);
  *ctx.out << json(r).dump(2) << "\n";
  return kExitOk;
}

int cmd_rag(Context& ctx, const std::optional<fs::path>& checkpoint, const std::optional<std::string>& generator) {
  const Dataset ds = load_data(ctx);
  ModelSource src;
  open_model(src, checkpoint, ctx, ds);
  const Model& model = src.get();
  json& rag = ctx.config["rag"];
  if (generator) rag["generator"] = *generator;
  RagConfig cfg;
  cfg.k_final = rag.at("k_final");
  cfg.expansion = rag.at("expansion");
  cfg.seed = rag.at("seed");
  const auto client = make_client(rag.at("generator").get<std::string>(),
                                  std::chrono::milliseconds(rag.at("timeout_ms").get<std::size_t>()));
  auto queries = ds.test_ids();
  const std::size_t limit = rag.at("n_queries");
  if (limit > 0 && limit < queries.size()) queries.resize(limit);

  const SnippetStore store = SnippetStore::build(model, ds, ds.train_ids());
  const auto rows = run_rag(model, ds, store, *client, queries, cfg);
  write_json(ctx.out_dir / "rag.json", json(rows));
  double b = 0.0, e = 0.0;
  for (const RagRow& r : rows) {
    b += r.bleu2 / static_cast<double>(rows.size());
    e += r.embed_sim / static_cast<double>(rows.size());
  }
  *ctx.out << json{{"generator", client->describe()}, {"rows", rows.size()}, {"mean_bleu2", b}, {"mean_embed_sim", e}}.dump(2)
           << "\n";
  return kExitOk;
}

int exit_code_for(const std::exception& e) {
  if (dynamic_cast<const NumericError*>(&e)) return kExitNumeric;
  if (dynamic_cast<const IoError*>(&e) || dynamic_cast<const IntegrityError*>(&e) ||
      dynamic_cast<const DataError*>(&e) || dynamic_cast<const TransportError*>(&e))
    return kExitIo;
  if (dynamic_cast<const ConfigError*>(&e) || dynamic_cast<const ContractError*>(&e) ||
      dynamic_cast<const ShapeError*>(&e))
    return kExitConfig;
  return 1;
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"eclip: expert-heatmap contrastive image-text training on synthetic data", "eclip"};
  app.set_version_flag("--version", version());
  app.footer(
      "Environment:\n"
      "  ECLIP_NUM_THREADS   cap on worker threads for evaluation fan-out\n"
      "  ECLIP_SIMD          'scalar' disables the AVX2 kernels\n"
      "Exit codes: 0 ok, 2 configuration error, 3 I/O error, 4 numeric abort.\n"
      "Every command writes run.json (resolved config, version, timing) to --out.");
  app.require_subcommand(1);

  std::optional<std::string> config_path;
  std::optional<std::uint64_t> seed;
  std::string out_dir = "eclip-out";
  std::vector<std::string> overrides;
  app.add_option("--config", config_path, "JSON file overriding defaults, with sections data, train, eval, geometry, rag");
  app.add_option("--seed", seed, "Seed for every section (data, train, eval, geometry, rag)");
  app.add_option("--out", out_dir, "Output directory")->capture_default_str();
  app.add_option("--override", overrides, "Dotted key=value override, e.g. train.total_steps=500 (repeatable)")
      ->expected(1)
      ->multi_option_policy(CLI::MultiOptionPolicy::TakeAll);

  std::optional<std::string> data_dir, checkpoint, resume, generator, expert_mode;
  std::size_t checkpoint_every = 0, log_every = 100;
  std::vector<double> fractions;
  bool uniformity_all = false;

  auto* gen = app.add_subcommand("gen-data", "Generate the synthetic dataset into --out");
  gen->fallthrough();

  auto* train = app.add_subcommand("train", "Train a model; writes checkpoint/, train_log.csv and metrics.json");
  train->fallthrough();
  train->add_option("--data", data_dir, "Dataset directory from gen-data (default: generate from the data section)");
  train->add_option("--expert-mode", expert_mode, "eclip, clip or naive (same as train.expert_mode)");
  train->add_option("--resume", resume, "Checkpoint directory to continue from");
  train->add_option("--checkpoint-every", checkpoint_every, "Also checkpoint every N steps (0: final only)");
  train->add_option("--log-every", log_every, "Progress line to stderr every N steps (0: silent)")->capture_default_str();

  auto* eval = app.add_subcommand("eval", "Evaluate a model: zero-shot, retrieval or probe");
  eval->fallthrough();
  eval->require_subcommand(1);
  std::string task;
  for (const char* name : {"zero-shot", "retrieval", "probe"}) {
    auto* sub = eval->add_subcommand(name, std::string(name) + " evaluation; writes a MetricsReport JSON");
    sub->fallthrough();
    sub->callback([&task, name] { task = name; });
  }
  eval->add_option("--data", data_dir, "Dataset directory (default: generate from the data section)");
  eval->add_option("--checkpoint", checkpoint, "Checkpoint or model directory (default: untrained model)");
  eval->add_option("--train-fraction", fractions, "Probe training fractions, comma separated (eval.train_fractions)")
      ->delimiter(',');

  auto* geo = app.add_subcommand("geometry", "Alignment, uniformity, modality gap, clustering and cosine histograms");
  geo->fallthrough();
  geo->add_option("--data", data_dir, "Dataset directory (default: generate from the data section)");
  geo->add_option("--checkpoint", checkpoint, "Checkpoint or model directory (default: untrained model)");
  geo->add_flag("--uniformity-all", uniformity_all, "Include matched pairs in uniformity (geometry.uniformity_pairs=all)");

  auto* rag = app.add_subcommand("rag", "Retrieval-augmented report generation; writes rag.json");
  rag->fallthrough();
  rag->add_option("--data", data_dir, "Dataset directory (default: generate from the data section)");
  rag->add_option("--checkpoint", checkpoint, "Checkpoint or model directory (default: untrained model)");
  rag->add_option("--generator", generator, "mock, cmd:<shell command> or http://host:port/path (rag.generator)");

  try {
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    app.parse(reversed);
  } catch (const CLI::CallForHelp&) {
    // Top-level help lists every subcommand's flags too.
    const CLI::App* target = &app;
    for (const CLI::App* sub = &app; !sub->get_subcommands().empty();) target = sub = sub->get_subcommands().front();
    out << (target == &app ? app.help("", CLI::AppFormatMode::All) : target->help());
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kExitOk : kExitConfig;
  }

  Context ctx;
  ctx.out = &out;
  ctx.err = &err;
  ctx.out_dir = out_dir;
  if (data_dir) ctx.data_dir = fs::path(*data_dir);
  const std::string started = now_iso();
  std::string command = app.get_subcommands().front()->get_name();
  if (command == "eval") command += " " + task;

  int code = kExitOk;
  std::string error;
  try {
    ensure_dir(ctx.out_dir);
    worker_threads();  // rejects a malformed ECLIP_NUM_THREADS early
    if (expert_mode) overrides.push_back("train.expert_mode=" + *expert_mode);
    if (!fractions.empty()) {
      std::ostringstream s;
      s << "eval.train_fractions=" << json(fractions).dump();
      overrides.push_back(s.str());
    }
    if (uniformity_all) overrides.push_back("geometry.uniformity_pairs=all");
    ctx.config = resolve_config(default_config(), config_path ? std::optional<fs::path>(*config_path) : std::nullopt,
                                overrides, seed);
    if (command == "gen-data")
      code = cmd_gen_data(ctx);
    else if (command == "train")
      code = cmd_train(ctx, resume ? std::optional<fs::path>(*resume) : std::nullopt, checkpoint_every, log_every);
    else if (command == "geometry")
      code = cmd_geometry(ctx, checkpoint ? std::optional<fs::path>(*checkpoint) : std::nullopt);
    else if (command == "rag")
      code = cmd_rag(ctx, checkpoint ? std::optional<fs::path>(*checkpoint) : std::nullopt, generator);
    else
      code = cmd_eval(ctx, task, checkpoint ? std::optional<fs::path>(*checkpoint) : std::nullopt);
  } catch (const std::exception& e) {
    code = exit_code_for(e);
    error = e.what();
    err << "eclip: " << error << "\n";
  }

  json run{{"command", command},   {"args", args},          {"version", version()},
           {"config", ctx.config}, {"started_at", started}, {"finished_at", now_iso()},
           {"exit_code", code}};
  if (!error.empty()) run["error"] = error;
  std::error_code ec;
  if (fs::is_directory(ctx.out_dir, ec)) {
    try {
      write_json(ctx.out_dir / "run.json", run);
    } catch (const std::exception& e) {
      err << "eclip: " << e.what() << "\n";
      if (code == kExitOk) code = kExitIo;
    }
  }
  return code;
}

}  // namespace eclip::cli
