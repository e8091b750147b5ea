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

#include "eclip/trainer.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <numbers>
#include <sstream>

#include "eclip/eclt.hpp"
#include "eclip/errors.hpp"

namespace eclip {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr int kCheckpointVersion = 1;

enum StreamTag : std::uint32_t { kInit = 1, kMainLoader, kExpertLoader, kCurriculum, kMixup };

std::mt19937_64 derived(std::uint64_t seed, StreamTag tag) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(tag)};
  return std::mt19937_64(seq);
}

std::uint64_t derived_seed(std::uint64_t seed, StreamTag tag) { return derived(seed, tag)(); }

template <class T>
void read_field(const json& j, const char* section, const char* key, T& out) {
  if (!j.contains(key)) return;
  const json& v = j.at(key);
  const std::string name = std::string(section) + "." + key;
  if constexpr (std::is_same_v<T, bool>) {
    if (!v.is_boolean()) throw ConfigError(name + " must be a boolean");
  } else if constexpr (std::is_integral_v<T>) {
    if (!v.is_number_unsigned()) throw ConfigError(name + " must be a non-negative integer");
  } else {
    if (!v.is_number()) throw ConfigError(name + " must be a number");
  }
  out = v.get<T>();
}

template <class T>
void read_optional(const json& j, const char* section, const char* key, std::optional<T>& out) {
  if (!j.contains(key)) return;
  if (j.at(key).is_null()) {
    out.reset();
    return;
  }
  T value{};
  read_field(j, section, key, value);
  out = value;
}

std::string rng_state(const std::mt19937_64& rng) {
  std::ostringstream out;
  out << rng;
  return out.str();
}

void restore_rng(std::mt19937_64& rng, const std::string& state, const fs::path& file) {
  std::istringstream in(state);
  in >> rng;
  if (!in) throw IntegrityError(file.string() + ": unreadable generator state");
}

IndexMatrix concat_tokens(const IndexMatrix& a, const IndexMatrix& b) {
  if (a.cols != b.cols) throw ShapeError("token batches have different lengths");
  IndexMatrix out{a.rows + b.rows, a.cols, a.values};
  out.values.insert(out.values.end(), b.values.begin(), b.values.end());
  return out;
}

std::vector<std::size_t> iota(std::size_t from, std::size_t to) {
  std::vector<std::size_t> v;
  for (std::size_t i = from; i < to; ++i) v.push_back(i);
  return v;
}

}  // namespace

std::string_view to_string(ExpertMode mode) {
  switch (mode) {
    case ExpertMode::kEclip:
      return "eclip";
    case ExpertMode::kClip:
      return "clip";
    case ExpertMode::kNaive:
      return "naive";
  }
  return "eclip";
}

ExpertMode parse_expert_mode(std::string_view name) {
  if (name == "eclip") return ExpertMode::kEclip;
  if (name == "clip") return ExpertMode::kClip;
  if (name == "naive") return ExpertMode::kNaive;
  throw ConfigError("expert mode must be one of eclip, clip, naive (got '" + std::string(name) + "')");
}

// ---- config --------------------------------------------------------------

void TrainConfig::validate() const {
  model.validate();
  if (batch_size == 0) throw ConfigError("train.batch_size must be positive");
  if (expert_batch_size == 0) throw ConfigError("train.expert_batch_size must be positive");
  if (total_steps == 0) throw ConfigError("train.total_steps must be at least 1");
  if (base_lr && !(*base_lr > 0.0 && std::isfinite(*base_lr))) throw ConfigError("train.base_lr must be positive");
  if (!(weight_decay >= 0.0)) throw ConfigError("train.weight_decay must be non-negative");
  if (!(warmup_frac >= 0.0 && warmup_frac <= 1.0)) throw ConfigError("train.warmup_frac must lie in [0, 1]");
  if (!(w_p >= 0.0 && w_p <= 1.0)) throw ConfigError("train.w_p must lie in [0, 1]");
  if (!(fixed_p >= 0.0 && fixed_p <= 1.0)) throw ConfigError("train.fixed_p must lie in [0, 1]");
  schedule().validate();
  mixup.validate();
}

double TrainConfig::lr() const { return base_lr.value_or(expert_mode == ExpertMode::kClip ? 1e-3 : 2e-3); }

std::size_t TrainConfig::priming_end() const { return priming_steps.value_or(schedule().cold_end()); }

CurriculumConfig TrainConfig::schedule() const {
  CurriculumConfig c = curriculum;
  c.total_steps = total_steps;
  return c;
}

std::string TrainConfig::hash() const {
  const std::string text = json(*this).dump();
  std::uint64_t h = 1469598103934665603ull;
  for (unsigned char ch : text) {
    h ^= ch;
    h *= 1099511628211ull;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

void to_json(json& j, const TrainConfig& c) {
  j = json{
      {"model", c.model},
      {"batch_size", c.batch_size},
      {"expert_batch_size", c.expert_batch_size},
      {"total_steps", c.total_steps},
      {"base_lr", c.base_lr ? json(*c.base_lr) : json(nullptr)},
      {"effective_lr", c.lr()},
      {"weight_decay", c.weight_decay},
      {"warmup_frac", c.warmup_frac},
      {"seed", c.seed},
      {"priming_steps", c.priming_steps ? json(*c.priming_steps) : json(nullptr)},
      {"curriculum",
       {{"cold_frac", c.curriculum.cold_frac},
        {"warm_frac", c.curriculum.warm_frac},
        {"cool_frac", c.curriculum.cool_frac},
        {"p_start", c.curriculum.p_start},
        {"p_max", c.curriculum.p_max},
        {"p_min", c.curriculum.p_min}}},
      {"mixup", {{"alpha", c.mixup.alpha}}},
      {"w_p", c.w_p},
      {"expert_mode", std::string(to_string(c.expert_mode))},
      {"use_curriculum", c.use_curriculum},
      {"use_mixup", c.use_mixup},
      {"use_priming", c.use_priming},
      {"fixed_p", c.fixed_p},
  };
}

void from_json(const json& j, TrainConfig& c) {
  if (!j.is_object()) throw ConfigError("train section must be an object");
  if (j.contains("model")) {
    if (!j.at("model").is_object()) throw ConfigError("train.model must be an object");
    from_json(j.at("model"), c.model);
  }
  read_field(j, "train", "batch_size", c.batch_size);
  read_field(j, "train", "expert_batch_size", c.expert_batch_size);
  read_field(j, "train", "total_steps", c.total_steps);
  read_optional(j, "train", "base_lr", c.base_lr);
  read_field(j, "train", "weight_decay", c.weight_decay);
  read_field(j, "train", "warmup_frac", c.warmup_frac);
  read_field(j, "train", "seed", c.seed);
  read_optional(j, "train", "priming_steps", c.priming_steps);
  if (j.contains("curriculum")) {
    const json& k = j.at("curriculum");
    if (!k.is_object()) throw ConfigError("train.curriculum must be an object");
    read_field(k, "train.curriculum", "cold_frac", c.curriculum.cold_frac);
    read_field(k, "train.curriculum", "warm_frac", c.curriculum.warm_frac);
    read_field(k, "train.curriculum", "cool_frac", c.curriculum.cool_frac);
    read_field(k, "train.curriculum", "p_start", c.curriculum.p_start);
    read_field(k, "train.curriculum", "p_max", c.curriculum.p_max);
    read_field(k, "train.curriculum", "p_min", c.curriculum.p_min);
  }
  if (j.contains("mixup")) {
    if (!j.at("mixup").is_object()) throw ConfigError("train.mixup must be an object");
    read_field(j.at("mixup"), "train.mixup", "alpha", c.mixup.alpha);
  }
  read_field(j, "train", "w_p", c.w_p);
  if (j.contains("expert_mode")) {
    if (!j.at("expert_mode").is_string()) throw ConfigError("train.expert_mode must be a string");
    c.expert_mode = parse_expert_mode(j.at("expert_mode").get<std::string>());
  }
  read_field(j, "train", "use_curriculum", c.use_curriculum);
  read_field(j, "train", "use_mixup", c.use_mixup);
  read_field(j, "train", "use_priming", c.use_priming);
  read_field(j, "train", "fixed_p", c.fixed_p);
}

double lr_schedule(std::size_t step, const TrainConfig& cfg) {
  const std::size_t total = cfg.total_steps;
  if (step >= total)
    throw ContractError("lr_schedule: step " + std::to_string(step) + " outside [0, " + std::to_string(total) + ")");
  const std::size_t warm =
      static_cast<std::size_t>(std::floor(cfg.warmup_frac * static_cast<double>(total) + 1e-9));
  const double base = cfg.lr();
  if (step < warm) return base * static_cast<double>(step) / static_cast<double>(warm);
  const double progress = static_cast<double>(step - warm) / static_cast<double>(total - warm);
  return base * 0.5 * (1.0 + std::cos(std::numbers::pi * progress));
}

// ---- optimizer -----------------------------------------------------------

Adam::Adam(const std::vector<NamedParam>& params) {
  for (const NamedParam& p : params) {
    m_.emplace_back(p.var.dims());
    v_.emplace_back(p.var.dims());
  }
}

void Adam::step(std::vector<NamedParam>& params, double lr, double weight_decay) {
  if (params.size() != m_.size()) throw ContractError("Adam: parameter list changed size");
  for (const NamedParam& p : params)
    if (p.var.has_grad() && !p.var.node()->grad.all_finite())
      throw NumericError("non-finite gradient for parameter '" + p.name + "'");
  ++t_;
  const double c1 = 1.0 - std::pow(kBeta1, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(kBeta2, static_cast<double>(t_));
  for (std::size_t i = 0; i < params.size(); ++i) {
    NamedParam& p = params[i];
    if (!p.var.has_grad()) continue;
    Tensor& x = p.var.mutable_value();
    const Tensor& g = p.var.node()->grad;
    double* m = m_[i].ptr();
    double* v = v_[i].ptr();
    const double decay = p.decay ? lr * weight_decay : 0.0;
    for (std::size_t k = 0; k < x.size(); ++k) {
      x[k] -= decay * x[k];
      m[k] = kBeta1 * m[k] + (1.0 - kBeta1) * g[k];
      v[k] = kBeta2 * v[k] + (1.0 - kBeta2) * g[k] * g[k];
      x[k] -= lr * (m[k] / c1) / (std::sqrt(v[k] / c2) + kEps);
    }
  }
}

// ---- step ----------------------------------------------------------------

StepGraph step_loss(const Model& model, const StepInputs& in, double w_p) {
  StepGraph g;
  const std::size_t n = in.images.dim(0);
  Var v, t, v_mix;
  std::vector<std::size_t> mixed_text;
  if (in.expert_used) {
    const std::size_t k = in.expert_images.dim(0);
    if (in.lambdas.size() != k) throw ContractError("step_loss: one lambda per expert row required");
    Var expert = model.heatmap_process(in.expert_images, in.expert_heatmaps);
    Var mixed = mixup_images(in.expert_images, expert, in.lambdas);
    std::vector<Var> all{in.images, in.expert_images, mixed};
    Var embedded = model.encode_image(concat_rows(all));
    v = gather_rows(embedded, iota(0, n + k));
    v_mix = gather_rows(embedded, iota(n + k, n + 2 * k));
    t = model.encode_text(concat_tokens(in.tokens, in.expert_tokens));
    mixed_text = iota(n, n + k);
  } else {
    v = model.encode_image(in.images);
    t = model.encode_text(in.tokens);
  }
  const PairedEmbeddings pairs = assemble_pairs(v, t, v_mix, mixed_text);
  g.clip = clip_infonce(pairs.v, pairs.t, model.log_inv_tau());
  if (in.priming_active) {
    g.priming = priming_loss(in.images, model);
    g.n_p = n;
  }
  g.total = total_loss(g.clip.l_clip, g.priming, g.n_p, w_p, in.priming_active);
  return g;
}

// ---- trainer -------------------------------------------------------------

Trainer::Trainer(const TrainConfig& cfg, const Dataset& data)
    : Trainer(cfg, data, Model(cfg.model, derived_seed(cfg.seed, kInit))) {}

Trainer::Trainer(const TrainConfig& cfg, const Dataset& data, Model model)
    : cfg_(cfg),
      data_(&data),
      model_(std::move(model)),
      adam_(model_.params()),
      main_stream_((cfg.validate(), data.train_ids()), cfg.batch_size, derived_seed(cfg.seed, kMainLoader)),
      curriculum_rng_(derived(cfg.seed, kCurriculum)),
      mixup_rng_(derived(cfg.seed, kMixup)) {
  const GenConfig& g = data.config();
  const ModelConfig& m = cfg_.model;
  if (g.image_size != m.image_size || m.channels != 1)
    throw ConfigError("model image geometry does not match the dataset (" + std::to_string(g.image_size) + "px, 1 channel)");
  if (g.vocab > m.vocab) throw ConfigError("model.vocab is smaller than the dataset vocabulary");
  if (g.max_len > m.max_len) throw ConfigError("model.max_len is shorter than the dataset sequences");
  if (cfg_.expert_mode != ExpertMode::kClip) {
    if (data.expert_ids().empty())
      throw ConfigError("expert mode '" + std::string(to_string(cfg_.expert_mode)) +
                        "' needs a non-empty expert subset (data.expert_frac > 0)");
    expert_stream_.emplace(data.expert_ids(), cfg_.expert_batch_size, derived_seed(cfg.seed, kExpertLoader));
  }
}

StepRecord Trainer::step() {
  if (done()) throw ContractError("training already reached total_steps");
  const std::size_t s = step_;
  const auto main_ids = main_stream_.next();
  StepInputs in;
  in.images = Var::constant(data_->images(main_ids));
  in.tokens = data_->token_batch(main_ids);

  double p = 0.0;
  if (cfg_.expert_mode != ExpertMode::kClip) {
    const auto expert_ids = expert_stream_->next();
    if (cfg_.expert_mode == ExpertMode::kNaive)
      p = 1.0;
    else
      p = cfg_.use_curriculum ? curriculum_prob(s, cfg_.schedule()) : cfg_.fixed_p;
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    in.expert_used = decide_expert(p, unit(curriculum_rng_), !expert_ids.empty());
    if (in.expert_used) {
      in.expert_images = Var::constant(data_->images(expert_ids));
      in.expert_heatmaps = Var::constant(data_->heatmaps(expert_ids));
      in.expert_tokens = data_->token_batch(expert_ids);
      const bool mix = cfg_.expert_mode == ExpertMode::kEclip && cfg_.use_mixup;
      for (std::size_t r = 0; r < expert_ids.size(); ++r)
        in.lambdas.push_back(mix ? sample_lambda(cfg_.mixup, mixup_rng_) : 0.0);
    }
    in.priming_active = cfg_.expert_mode == ExpertMode::kEclip && cfg_.use_priming && s < cfg_.priming_end();
  }

  const double tau = model_.tau();
  const StepGraph g = step_loss(model_, in, cfg_.w_p);
  const double total = g.total.value().item();
  if (!std::isfinite(total)) throw NumericError("non-finite loss at step " + std::to_string(s));
  backward(g.total);
  const double lr = lr_schedule(s, cfg_);
  try {
    adam_.step(model_.params(), lr, cfg_.weight_decay);
  } catch (const NumericError& e) {
    throw NumericError(std::string(e.what()) + " at step " + std::to_string(s));
  }
  clamp_log_inv_tau(model_.log_inv_tau().node()->value);
  for (NamedParam& prm : model_.params()) prm.var.zero_grad();

  StepRecord rec;
  rec.step = s;
  rec.lr = lr;
  rec.p_curr = p;
  rec.expert_used = in.expert_used;
  rec.loss.l_text = g.clip.l_text.value().item();
  rec.loss.l_image = g.clip.l_image.value().item();
  rec.loss.l_clip = g.clip.l_clip.value().item();
  rec.loss.l_priming = g.priming ? g.priming.value().item() : 0.0;
  rec.loss.l_total = total;
  rec.loss.n_p = g.n_p;
  rec.loss.w_p = cfg_.w_p;
  rec.loss.tau = tau;
  log_.push_back(rec);
  ++step_;
  return rec;
}

void Trainer::run(std::size_t until, const StepCallback& callback) {
  until = std::min(until, cfg_.total_steps);
  while (step_ < until) {
    const StepRecord rec = step();
    if (callback) callback(rec);
  }
}

// ---- checkpoints ---------------------------------------------------------

void Trainer::save_checkpoint(const fs::path& dir) const {
  model_.save(dir / "model");
  for (const char* sub : {"adam_m", "adam_v"}) {
    std::error_code ec;
    fs::create_directories(dir / sub, ec);
    if (ec) throw IoError("cannot create " + (dir / sub).string() + ": " + ec.message());
  }
  const std::vector<NamedParam>& params = model_.params();
  for (std::size_t i = 0; i < params.size(); ++i) {
    eclt::write(dir / "adam_m" / (params[i].name + ".eclt"), adam_.first_moments()[i], eclt::Payload::kF64);
    eclt::write(dir / "adam_v" / (params[i].name + ".eclt"), adam_.second_moments()[i], eclt::Payload::kF64);
  }
  const json manifest{
      {"format_version", kCheckpointVersion},
      {"step", step_},
      {"seed", cfg_.seed},
      {"config_hash", cfg_.hash()},
      {"config", cfg_},
      {"adam_steps", adam_.steps()},
      {"rng", {{"curriculum", rng_state(curriculum_rng_)}, {"mixup", rng_state(mixup_rng_)}}},
      {"loaders",
       {{"main", {main_stream_.state().epoch, main_stream_.state().pos}},
        {"expert", expert_stream_ ? json{expert_stream_->state().epoch, expert_stream_->state().pos} : json(nullptr)}}},
  };
  const fs::path tmp = dir / "checkpoint.json.tmp";
  {
    std::ofstream out(tmp);
    out << manifest.dump(2) << '\n';
    if (!out) throw IoError("cannot write " + tmp.string());
  }
  std::error_code ec;
  fs::rename(tmp, dir / "checkpoint.json", ec);
  if (ec) throw IoError("cannot rename " + tmp.string() + ": " + ec.message());
}

Trainer Trainer::resume(const fs::path& dir, const Dataset& data) {
  const fs::path file = dir / "checkpoint.json";
  std::ifstream in(file);
  if (!in) throw IoError("cannot open " + file.string());
  json m;
  TrainConfig cfg;
  std::size_t step = 0;
  std::uint64_t adam_steps = 0;
  std::string curriculum_state, mixup_state;
  BatchStream::State main_state;
  std::optional<BatchStream::State> expert_state;
  try {
    in >> m;
    if (m.at("format_version").get<int>() != kCheckpointVersion)
      throw IntegrityError(file.string() + ": unsupported format_version");
    from_json(m.at("config"), cfg);
    if (m.at("config_hash").get<std::string>() != cfg.hash())
      throw IntegrityError(file.string() + ": config_hash does not match the stored config");
    step = m.at("step").get<std::size_t>();
    adam_steps = m.at("adam_steps").get<std::uint64_t>();
    curriculum_state = m.at("rng").at("curriculum").get<std::string>();
    mixup_state = m.at("rng").at("mixup").get<std::string>();
    const json& loaders = m.at("loaders");
    main_state = {loaders.at("main").at(0).get<std::uint64_t>(), loaders.at("main").at(1).get<std::size_t>()};
    if (!loaders.at("expert").is_null())
      expert_state = BatchStream::State{loaders.at("expert").at(0).get<std::uint64_t>(),
                                        loaders.at("expert").at(1).get<std::size_t>()};
  } catch (const json::exception& e) {
    throw IntegrityError(file.string() + ": " + e.what());
  } catch (const ConfigError& e) {
    throw IntegrityError(file.string() + ": " + e.what());
  }
  if (step > cfg.total_steps) throw IntegrityError(file.string() + ": step beyond total_steps");

  Model model = Model::load(dir / "model");
  std::vector<Tensor> first, second;
  for (const NamedParam& p : model.params()) {
    for (auto [sub, into] : {std::pair{"adam_m", &first}, std::pair{"adam_v", &second}}) {
      const fs::path path = dir / sub / (p.name + ".eclt");
      Tensor t = eclt::read_float(path);
      if (t.dims() != p.var.dims()) throw IntegrityError(path.string() + ": shape does not match the parameter");
      into->push_back(std::move(t));
    }
  }

  Trainer trainer(cfg, data, std::move(model));
  trainer.step_ = step;
  trainer.adam_.first_moments() = std::move(first);
  trainer.adam_.second_moments() = std::move(second);
  trainer.adam_.set_steps(adam_steps);
  restore_rng(trainer.curriculum_rng_, curriculum_state, file);
  restore_rng(trainer.mixup_rng_, mixup_state, file);
  trainer.main_stream_.restore(main_state);
  if (trainer.expert_stream_.has_value() != expert_state.has_value())
    throw IntegrityError(file.string() + ": expert loader state does not match the expert mode");
  if (expert_state) trainer.expert_stream_->restore(*expert_state);
  return trainer;
}

// ---- log -----------------------------------------------------------------

void write_train_log(const fs::path& path, const std::vector<StepRecord>& log) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  out << "step,lr,p_curr,expert_used,l_text,l_image,l_clip,l_priming,l_total,tau\n";
  char buf[512];
  for (const StepRecord& r : log) {
    std::snprintf(buf, sizeof buf, "%zu,%.17g,%.17g,%d,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g\n", r.step, r.lr,
                  r.p_curr, r.expert_used ? 1 : 0, r.loss.l_text, r.loss.l_image, r.loss.l_clip, r.loss.l_priming,
                  r.loss.l_total, r.loss.tau);
    out << buf;
  }
  if (!out) throw IoError("cannot write " + path.string());
}

std::vector<StepRecord> read_train_log(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());
  std::string line;
  std::getline(in, line);
  if (line != "step,lr,p_curr,expert_used,l_text,l_image,l_clip,l_priming,l_total,tau")
    throw DataError(path.string() + ": unexpected header");
  std::vector<StepRecord> log;
  while (std::getline(in, line)) {
    StepRecord r;
    int used = 0;
    if (std::sscanf(line.c_str(), "%zu,%lf,%lf,%d,%lf,%lf,%lf,%lf,%lf,%lf", &r.step, &r.lr, &r.p_curr, &used,
                    &r.loss.l_text, &r.loss.l_image, &r.loss.l_clip, &r.loss.l_priming, &r.loss.l_total,
                    &r.loss.tau) != 10)
      throw DataError(path.string() + ": malformed row '" + line + "'");
    r.expert_used = used != 0;
    log.push_back(r);
  }
  return log;
}

}  // namespace eclip
