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

#include "eclip/synthdata.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <fstream>
#include <numbers>
#include <random>
#include <sstream>
#include <unordered_map>

#include "eclip/eclt.hpp"
#include "eclip/errors.hpp"

namespace eclip {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr std::size_t kNoRow = static_cast<std::size_t>(-1);
constexpr int kFormatVersion = 1;
constexpr double kBackground = 0.4;
constexpr double kTextureMean = 0.5;
constexpr double kTextureAmplitude = 0.4;
constexpr double kTexturePeriod = 4.0;
constexpr std::size_t kMarker = 3;
constexpr std::size_t kBlurRadius = 2;

const std::array<std::array<const char*, 3>, 5> kClassWords = {{
    {"cardiomegaly", "enlarged", "heart"},
    {"edema", "fluid", "vascular"},
    {"atelectasis", "collapse", "volume"},
    {"effusion", "pleural", "blunting"},
    {"pneumothorax", "air", "apical"},
}};
const std::array<const char*, 8> kAttributeWords = {"upper-left", "upper",  "upper-right", "right",
                                                    "lower-right", "lower", "lower-left",  "left"};

std::mt19937_64 stream(std::uint64_t seed, std::uint64_t a, std::uint64_t b = 0) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(a), static_cast<std::uint32_t>(a >> 32), static_cast<std::uint32_t>(b)};
  return std::mt19937_64(seq);
}

double to_f32(double v) { return static_cast<double>(static_cast<float>(v)); }

// Top-left corner of the 3x3 marker for attribute a, walking the border
// clockwise from the upper-left corner.
std::pair<std::size_t, std::size_t> marker_origin(std::size_t a, std::size_t size) {
  const std::size_t lo = 1, mid = (size - kMarker) / 2, hi = size - kMarker - 1;
  const std::array<std::pair<std::size_t, std::size_t>, 8> xy = {
      {{lo, lo}, {mid, lo}, {hi, lo}, {hi, mid}, {hi, hi}, {mid, hi}, {lo, hi}, {lo, mid}}};
  return xy[a];
}

// Separable box blur (horizontal then vertical), zero outside the image.
std::vector<double> box_blur(const std::vector<double>& in, std::size_t n, std::size_t r) {
  std::vector<double> tmp(in.size()), out(in.size());
  const double norm = 1.0 / static_cast<double>(2 * r + 1);
  for (std::size_t y = 0; y < n; ++y)
    for (std::size_t x = 0; x < n; ++x) {
      double s = 0.0;
      for (std::size_t k = (x >= r ? x - r : 0); k <= std::min(n - 1, x + r); ++k) s += in[y * n + k];
      tmp[y * n + x] = s * norm;
    }
  for (std::size_t y = 0; y < n; ++y)
    for (std::size_t x = 0; x < n; ++x) {
      double s = 0.0;
      for (std::size_t k = (y >= r ? y - r : 0); k <= std::min(n - 1, y + r); ++k) s += tmp[k * n + x];
      out[y * n + x] = s * norm;
    }
  return out;
}

}  // namespace

// ---- config --------------------------------------------------------------

void GenConfig::validate() const {
  if (n_classes < 2) throw ConfigError("data.n_classes must be at least 2");
  if (n_train == 0) throw ConfigError("data.n_train must be positive");
  if (!(expert_frac > 0.0 && expert_frac <= 1.0)) throw ConfigError("data.expert_frac must lie in (0, 1]");
  if (!(signal_area_frac > 0.0 && signal_area_frac <= 1.0))
    throw ConfigError("data.signal_area_frac must lie in (0, 1]");
  if (!(noise_std >= 0.0) || !std::isfinite(noise_std)) throw ConfigError("data.noise_std must be non-negative");
  if (image_size < 2 * kMarker + 2) throw ConfigError("data.image_size is too small");
  if (n_attributes > kAttributeWords.size()) throw ConfigError("data.n_attributes must be at most 8");
  if (1 + n_classes * Vocabulary::kTokensPerClass + n_attributes > Vocabulary::kFirstFiller)
    throw ConfigError("data.n_classes leaves no room for attribute tokens below the filler range");
  if (vocab <= Vocabulary::kFirstFiller) throw ConfigError("data.vocab must exceed 64");
  if (max_len < Vocabulary::kTokensPerClass + 1 + Vocabulary::kFillers)
    throw ConfigError("data.max_len must hold 19 tokens");
}

std::size_t GenConfig::n_expert() const {
  return static_cast<std::size_t>(std::floor(expert_frac * static_cast<double>(n_train) + 1e-9));
}

std::size_t GenConfig::signal_side() const {
  const double side = std::round(static_cast<double>(image_size) * std::sqrt(signal_area_frac));
  return std::clamp<std::size_t>(static_cast<std::size_t>(side), 1, image_size);
}

void to_json(json& j, const GenConfig& c) {
  j = json{{"n_classes", c.n_classes},     {"n_train", c.n_train},
           {"n_test", c.n_test},           {"expert_frac", c.expert_frac},
           {"signal_area_frac", c.signal_area_frac}, {"noise_std", c.noise_std},
           {"seed", c.seed},               {"random_heatmaps", c.random_heatmaps},
           {"image_size", c.image_size},   {"max_len", c.max_len},
           {"vocab", c.vocab},             {"n_attributes", c.n_attributes}};
}

void from_json(const json& j, GenConfig& c) {
  auto count = [&](const char* key, std::size_t& out) {
    if (!j.contains(key)) return;
    if (!j.at(key).is_number_unsigned()) throw ConfigError(std::string("data.") + key + " must be a non-negative integer");
    out = j.at(key).get<std::size_t>();
  };
  auto real = [&](const char* key, double& out) {
    if (!j.contains(key)) return;
    if (!j.at(key).is_number()) throw ConfigError(std::string("data.") + key + " must be a number");
    out = j.at(key).get<double>();
  };
  count("n_classes", c.n_classes);
  count("n_train", c.n_train);
  count("n_test", c.n_test);
  real("expert_frac", c.expert_frac);
  real("signal_area_frac", c.signal_area_frac);
  real("noise_std", c.noise_std);
  if (j.contains("seed")) {
    if (!j.at("seed").is_number_unsigned()) throw ConfigError("data.seed must be a non-negative integer");
    c.seed = j.at("seed").get<std::uint64_t>();
  }
  if (j.contains("random_heatmaps")) {
    if (!j.at("random_heatmaps").is_boolean()) throw ConfigError("data.random_heatmaps must be a boolean");
    c.random_heatmaps = j.at("random_heatmaps").get<bool>();
  }
  count("image_size", c.image_size);
  count("max_len", c.max_len);
  count("vocab", c.vocab);
  count("n_attributes", c.n_attributes);
}

// ---- vocabulary ----------------------------------------------------------

Vocabulary::Vocabulary(const GenConfig& cfg)
    : n_classes(cfg.n_classes), n_attributes(cfg.n_attributes), size(cfg.vocab) {}

std::uint32_t Vocabulary::class_token(std::size_t c, std::size_t k) const {
  return static_cast<std::uint32_t>(1 + c * kTokensPerClass + k);
}

std::uint32_t Vocabulary::attribute_token(std::size_t a) const {
  return static_cast<std::uint32_t>(1 + n_classes * kTokensPerClass + a);
}

std::string Vocabulary::class_name(std::size_t c) const {
  return c < kClassWords.size() ? kClassWords[c][0] : "finding" + std::to_string(c);
}

std::string Vocabulary::word(std::uint32_t id) const {
  if (id == kPad) return "<pad>";
  if (id < attribute_token(0)) {
    const std::size_t c = (id - 1) / kTokensPerClass, k = (id - 1) % kTokensPerClass;
    if (c < kClassWords.size()) return kClassWords[c][k];
    return "finding" + std::to_string(c) + "-" + std::to_string(k);
  }
  if (id < attribute_token(n_attributes)) return kAttributeWords[id - attribute_token(0)];
  return "w" + std::to_string(id);
}

std::string Vocabulary::render(std::span<const std::uint32_t> ids) const {
  std::string out;
  std::size_t words = 0;
  for (std::uint32_t id : ids) {
    if (id == kPad) continue;
    if (words > 0) out += ' ';
    out += word(id);
    if (++words % 6 == 0) out += '.';
  }
  if (words % 6 != 0) out += '.';
  return out;
}

std::vector<std::uint32_t> Vocabulary::parse(const std::string& text) const {
  std::unordered_map<std::string, std::uint32_t> lookup;
  for (std::uint32_t id = 1; id < size; ++id) lookup.emplace(word(id), id);
  std::vector<std::uint32_t> ids;
  std::istringstream in(text);
  std::string w;
  while (in >> w) {
    while (!w.empty() && (w.back() == '.' || w.back() == ',')) w.pop_back();
    std::transform(w.begin(), w.end(), w.begin(), [](unsigned char ch) { return std::tolower(ch); });
    if (auto it = lookup.find(w); it != lookup.end()) ids.push_back(it->second);
  }
  return ids;
}

// ---- generator -----------------------------------------------------------

SignalRect signal_rect(const GenConfig& cfg, std::size_t cls) {
  const std::size_t side = cfg.signal_side();
  const double half = static_cast<double>(cfg.image_size - side) / 2.0;
  const double angle = 2.0 * std::numbers::pi * static_cast<double>(cls) / static_cast<double>(cfg.n_classes);
  return {static_cast<std::size_t>(std::lround(half + half * std::cos(angle))),
          static_cast<std::size_t>(std::lround(half + half * std::sin(angle))), side};
}

Dataset generate_dataset(const GenConfig& cfg) {
  cfg.validate();
  const std::size_t n = cfg.image_size, total = cfg.n_train + cfg.n_test;
  const Vocabulary vocab(cfg);
  Dataset ds;
  ds.config_ = cfg;
  ds.pixels_ = n * n;
  ds.images_.resize(total * n * n);
  ds.tokens_.assign(total * cfg.max_len, Vocabulary::kPad);
  ds.labels_.resize(total);
  ds.attributes_.resize(total);

  for (std::size_t id = 0; id < total; ++id) {
    const std::size_t cls = (id < cfg.n_train ? id : id - cfg.n_train) % cfg.n_classes;
    std::mt19937_64 rng = stream(cfg.seed, id);
    std::normal_distribution<double> noise(0.0, 1.0);
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    const std::size_t attr = cfg.n_attributes > 0 ? static_cast<std::size_t>(unit(rng) * cfg.n_attributes) : 0;
    const double phase = 2.0 * std::numbers::pi * unit(rng);
    const double theta = std::numbers::pi * static_cast<double>(cls) / static_cast<double>(cfg.n_classes);
    const double kx = 2.0 * std::numbers::pi / kTexturePeriod * std::cos(theta);
    const double ky = 2.0 * std::numbers::pi / kTexturePeriod * std::sin(theta);
    const SignalRect r = signal_rect(cfg, cls);

    double* img = ds.images_.data() + id * n * n;
    for (std::size_t y = 0; y < n; ++y)
      for (std::size_t x = 0; x < n; ++x) {
        const bool inside = x >= r.x0 && x < r.x0 + r.side && y >= r.y0 && y < r.y0 + r.side;
        double v = inside ? kTextureMean + kTextureAmplitude * std::sin(kx * x + ky * y + phase) : kBackground;
        v += cfg.noise_std * noise(rng);
        img[y * n + x] = std::clamp(v, 0.0, 1.0);
      }
    if (cfg.n_attributes > 0) {
      const auto [mx, my] = marker_origin(attr, n);
      for (std::size_t y = my; y < my + kMarker; ++y)
        for (std::size_t x = mx; x < mx + kMarker; ++x) img[y * n + x] = 1.0;
    }
    for (std::size_t p = 0; p < n * n; ++p) img[p] = to_f32(img[p]);

    std::vector<std::uint32_t> toks;
    for (std::size_t k = 0; k < Vocabulary::kTokensPerClass; ++k) toks.push_back(vocab.class_token(cls, k));
    if (cfg.n_attributes > 0) toks.push_back(vocab.attribute_token(attr));
    std::uniform_int_distribution<std::uint32_t> filler(Vocabulary::kFirstFiller,
                                                        static_cast<std::uint32_t>(cfg.vocab - 1));
    for (std::size_t k = 0; k < Vocabulary::kFillers; ++k) toks.push_back(filler(rng));
    std::shuffle(toks.begin(), toks.end(), rng);
    std::copy(toks.begin(), toks.end(), ds.tokens_.begin() + id * cfg.max_len);

    ds.labels_[id] = cls;
    ds.attributes_[id] = attr;
  }

  std::vector<std::size_t> train(cfg.n_train);
  for (std::size_t i = 0; i < cfg.n_train; ++i) train[i] = i;
  std::mt19937_64 pick = stream(cfg.seed, ~std::uint64_t{0}, 1);
  std::shuffle(train.begin(), train.end(), pick);
  ds.expert_ids_.assign(train.begin(), train.begin() + cfg.n_expert());
  std::sort(ds.expert_ids_.begin(), ds.expert_ids_.end());

  ds.heatmap_row_.assign(total, kNoRow);
  ds.heatmaps_.resize(ds.expert_ids_.size() * n * n);
  for (std::size_t row = 0; row < ds.expert_ids_.size(); ++row) {
    const std::size_t id = ds.expert_ids_[row];
    ds.heatmap_row_[id] = row;
    std::vector<double> field(n * n, 0.0);
    if (cfg.random_heatmaps) {
      std::mt19937_64 rng = stream(cfg.seed, id, 2);
      std::uniform_real_distribution<double> unit(0.0, 1.0);
      for (double& v : field) v = unit(rng);
    } else {
      const SignalRect r = signal_rect(cfg, ds.labels_[id]);
      for (std::size_t y = r.y0; y < r.y0 + r.side; ++y)
        for (std::size_t x = r.x0; x < r.x0 + r.side; ++x) field[y * n + x] = 1.0;
      field = box_blur(field, n, kBlurRadius);
      const double peak = *std::max_element(field.begin(), field.end());
      for (double& v : field) v /= peak;
    }
    for (std::size_t p = 0; p < n * n; ++p) ds.heatmaps_[row * n * n + p] = to_f32(field[p]);
  }
  return ds;
}

// ---- dataset access ------------------------------------------------------

std::vector<std::size_t> Dataset::train_ids() const {
  std::vector<std::size_t> ids(n_train());
  for (std::size_t i = 0; i < ids.size(); ++i) ids[i] = i;
  return ids;
}

std::vector<std::size_t> Dataset::test_ids() const {
  std::vector<std::size_t> ids(n_test());
  for (std::size_t i = 0; i < ids.size(); ++i) ids[i] = n_train() + i;
  return ids;
}

bool Dataset::has_heatmap(std::size_t id) const { return heatmap_row_.at(id) != kNoRow; }

std::span<const double> Dataset::image(std::size_t id) const {
  if (id >= size()) throw ContractError("sample id " + std::to_string(id) + " out of range");
  return std::span<const double>(images_).subspan(id * pixels_, pixels_);
}

std::span<const std::uint32_t> Dataset::tokens(std::size_t id) const {
  if (id >= size()) throw ContractError("sample id " + std::to_string(id) + " out of range");
  return std::span<const std::uint32_t>(tokens_).subspan(id * config_.max_len, config_.max_len);
}

std::span<const double> Dataset::heatmap(std::size_t id) const {
  if (!has_heatmap(id)) throw ContractError("sample " + std::to_string(id) + " has no heatmap");
  return std::span<const double>(heatmaps_).subspan(heatmap_row_[id] * pixels_, pixels_);
}

Tensor Dataset::images(std::span<const std::size_t> ids) const {
  const std::size_t n = config_.image_size;
  Tensor out({ids.size(), 1, n, n});
  for (std::size_t b = 0; b < ids.size(); ++b) {
    const auto src = image(ids[b]);
    std::copy(src.begin(), src.end(), out.data().begin() + b * pixels_);
  }
  return out;
}

Tensor Dataset::heatmaps(std::span<const std::size_t> ids) const {
  const std::size_t n = config_.image_size;
  Tensor out({ids.size(), 1, n, n});
  for (std::size_t b = 0; b < ids.size(); ++b) {
    const auto src = heatmap(ids[b]);
    std::copy(src.begin(), src.end(), out.data().begin() + b * pixels_);
  }
  return out;
}

IndexMatrix Dataset::token_batch(std::span<const std::size_t> ids) const {
  IndexMatrix m{ids.size(), config_.max_len, {}};
  m.values.reserve(ids.size() * config_.max_len);
  for (std::size_t id : ids) {
    const auto row = tokens(id);
    m.values.insert(m.values.end(), row.begin(), row.end());
  }
  return m;
}

std::vector<std::size_t> Dataset::labels(std::span<const std::size_t> ids) const {
  std::vector<std::size_t> out;
  out.reserve(ids.size());
  for (std::size_t id : ids) out.push_back(label(id));
  return out;
}

std::vector<std::size_t> Dataset::class_histogram(std::span<const std::size_t> ids) const {
  std::vector<std::size_t> h(config_.n_classes, 0);
  for (std::size_t id : ids) ++h[label(id)];
  return h;
}

// ---- persistence ---------------------------------------------------------

void Dataset::write(const fs::path& dir) const {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw IoError("cannot create " + dir.string() + ": " + ec.message());
  const std::size_t n = config_.image_size, total = size();
  eclt::write(dir / "images.eclt", Tensor({total, 1, n, n}, images_));
  eclt::write(dir / "heatmaps.eclt", Tensor({expert_ids_.size(), 1, n, n}, heatmaps_));
  eclt::write_u32(dir / "tokens.eclt", {{total, config_.max_len}, tokens_});
  std::vector<std::uint32_t> labels(labels_.begin(), labels_.end());
  std::vector<std::uint32_t> attrs(attributes_.begin(), attributes_.end());
  eclt::write_u32(dir / "labels.eclt", {{total}, labels});
  eclt::write_u32(dir / "attributes.eclt", {{total}, attrs});

  const Vocabulary vocab(config_);
  json names = json::array();
  for (std::size_t c = 0; c < config_.n_classes; ++c) names.push_back(vocab.class_name(c));
  const auto train = train_ids(), test = test_ids();
  json manifest{
      {"format_version", kFormatVersion},
      {"generator", config_},
      {"counts", {{"train", n_train()}, {"test", n_test()}, {"expert", expert_ids_.size()}}},
      {"splits", {{"train", {0, n_train()}}, {"test", {n_train(), total}}}},
      {"class_names", names},
      {"class_histogram", {{"train", class_histogram(train)}, {"test", class_histogram(test)}}},
      {"expert_indices", expert_ids_},
      {"files",
       {{"images", "images.eclt"},
        {"tokens", "tokens.eclt"},
        {"heatmaps", "heatmaps.eclt"},
        {"labels", "labels.eclt"},
        {"attributes", "attributes.eclt"}}},
  };
  const fs::path path = dir / "manifest.json";
  const fs::path tmp = dir / "manifest.json.tmp";
  {
    std::ofstream out(tmp);
    out << manifest.dump(2) << '\n';
    if (!out) throw IoError("cannot write " + tmp.string());
  }
  fs::rename(tmp, path, ec);
  if (ec) throw IoError("cannot rename " + tmp.string() + ": " + ec.message());
}

Dataset Dataset::load(const fs::path& dir) {
  const fs::path path = dir / "manifest.json";
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());
  json m;
  try {
    in >> m;
  } catch (const json::exception& e) {
    throw DataError(path.string() + ": not valid JSON: " + e.what());
  }
  auto field = [&](const char* key) -> const json& {
    if (!m.is_object() || !m.contains(key)) throw DataError(path.string() + ": missing field '" + key + "'");
    return m.at(key);
  };
  if (!field("format_version").is_number_integer() || field("format_version").get<int>() != kFormatVersion)
    throw DataError(path.string() + ": field 'format_version' must be " + std::to_string(kFormatVersion));

  Dataset ds;
  try {
    ds.config_ = field("generator").get<GenConfig>();
    ds.config_.validate();
  } catch (const ConfigError& e) {
    throw DataError(path.string() + ": field 'generator': " + e.what());
  } catch (const json::exception& e) {
    throw DataError(path.string() + ": field 'generator': " + e.what());
  }
  const GenConfig& cfg = ds.config_;
  const std::size_t n = cfg.image_size, total = cfg.n_train + cfg.n_test;
  ds.pixels_ = n * n;

  const json& counts = field("counts");
  auto count = [&](const char* key) -> std::size_t {
    if (!counts.contains(key) || !counts.at(key).is_number_unsigned())
      throw DataError(path.string() + ": field 'counts." + key + "' missing or not a count");
    return counts.at(key).get<std::size_t>();
  };
  if (count("train") != cfg.n_train || count("test") != cfg.n_test)
    throw DataError(path.string() + ": field 'counts' disagrees with 'generator'");
  const json& experts = field("expert_indices");
  if (!experts.is_array()) throw DataError(path.string() + ": field 'expert_indices' must be an array");
  for (const json& e : experts) {
    if (!e.is_number_unsigned() || e.get<std::size_t>() >= cfg.n_train)
      throw DataError(path.string() + ": field 'expert_indices' holds a non-train id");
    ds.expert_ids_.push_back(e.get<std::size_t>());
  }
  if (count("expert") != ds.expert_ids_.size())
    throw DataError(path.string() + ": field 'counts.expert' disagrees with 'expert_indices'");

  const json& files = field("files");
  auto file = [&](const char* key) {
    if (!files.contains(key) || !files.at(key).is_string())
      throw DataError(path.string() + ": field 'files." + key + "' missing");
    const fs::path p = dir / files.at(key).get<std::string>();
    if (!fs::exists(p)) throw IoError("missing dataset file " + p.string());
    return p;
  };
  auto expect = [&](const fs::path& p, const Shape& got, const Shape& want) {
    if (got != want)
      throw DataError(p.string() + ": shape " + shape_str(got) + ", manifest implies " + shape_str(want));
  };

  const fs::path images_path = file("images");
  Tensor images = eclt::read_float(images_path);
  expect(images_path, images.dims(), {total, 1, n, n});
  ds.images_ = std::move(images.storage());

  const fs::path heat_path = file("heatmaps");
  Tensor heat = eclt::read_float(heat_path);
  expect(heat_path, heat.dims(), {ds.expert_ids_.size(), 1, n, n});
  ds.heatmaps_ = std::move(heat.storage());

  const fs::path tok_path = file("tokens");
  eclt::U32Tensor toks = eclt::read_u32(tok_path);
  expect(tok_path, toks.dims, {total, cfg.max_len});
  for (std::uint32_t t : toks.values)
    if (t >= cfg.vocab) throw DataError(tok_path.string() + ": token id " + std::to_string(t) + " >= vocab");
  ds.tokens_ = std::move(toks.values);

  const fs::path lab_path = file("labels");
  eclt::U32Tensor labels = eclt::read_u32(lab_path);
  expect(lab_path, labels.dims, {total});
  for (std::uint32_t l : labels.values) {
    if (l >= cfg.n_classes) throw DataError(lab_path.string() + ": label " + std::to_string(l) + " >= n_classes");
    ds.labels_.push_back(l);
  }
  const fs::path attr_path = file("attributes");
  eclt::U32Tensor attrs = eclt::read_u32(attr_path);
  expect(attr_path, attrs.dims, {total});
  ds.attributes_.assign(attrs.values.begin(), attrs.values.end());

  ds.heatmap_row_.assign(total, kNoRow);
  for (std::size_t row = 0; row < ds.expert_ids_.size(); ++row) ds.heatmap_row_[ds.expert_ids_[row]] = row;
  return ds;
}

// ---- batches -------------------------------------------------------------

BatchStream::BatchStream(std::vector<std::size_t> ids, std::size_t batch_size, std::uint64_t seed)
    : ids_(std::move(ids)), batch_size_(batch_size), seed_(seed) {
  if (ids_.empty()) throw ConfigError("batch stream over an empty subset");
  if (batch_size_ == 0 || batch_size_ > ids_.size())
    throw ConfigError("batch size " + std::to_string(batch_size_) + " must lie in [1, " +
                      std::to_string(ids_.size()) + "]");
  reshuffle();
}

void BatchStream::reshuffle() {
  order_ = ids_;
  std::mt19937_64 rng = stream(seed_, state_.epoch, 3);
  std::shuffle(order_.begin(), order_.end(), rng);
}

std::vector<std::size_t> BatchStream::next() {
  if (state_.pos + batch_size_ > order_.size()) {
    ++state_.epoch;
    state_.pos = 0;
    reshuffle();
  }
  std::vector<std::size_t> batch(order_.begin() + state_.pos, order_.begin() + state_.pos + batch_size_);
  state_.pos += batch_size_;
  return batch;
}

void BatchStream::restore(State s) {
  if (s.pos > order_.size()) throw ContractError("batch stream position beyond the subset");
  state_ = s;
  reshuffle();
}

}  // namespace eclip
