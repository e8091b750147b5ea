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

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "eclip/tensor.hpp"
#include "json.hpp"

namespace eclip {

struct GenConfig {
  std::size_t n_classes = 5;
  std::size_t n_train = 5000;
  std::size_t n_test = 500;
  double expert_frac = 0.01;
  double signal_area_frac = 0.1;
  double noise_std = 0.1;
  std::uint64_t seed = 0;
  bool random_heatmaps = false;
  std::size_t image_size = 32;
  std::size_t max_len = 32;
  std::size_t vocab = 256;
  // Per-sample attribute (a bright border marker plus its token); lets a
  // report be retrieved among reports of the same class.
  std::size_t n_attributes = 8;

  void validate() const;
  std::size_t n_expert() const;
  // Side of the square signal region.
  std::size_t signal_side() const;
};

void to_json(nlohmann::json& j, const GenConfig& c);
void from_json(const nlohmann::json& j, GenConfig& c);

// Token id layout shared by the generator, prompts and text rendering.
struct Vocabulary {
  static constexpr std::uint32_t kPad = 0;
  static constexpr std::size_t kTokensPerClass = 3;
  static constexpr std::size_t kFillers = 15;
  static constexpr std::uint32_t kFirstFiller = 64;

  std::size_t n_classes = 5;
  std::size_t n_attributes = 8;
  std::size_t size = 256;

  explicit Vocabulary(const GenConfig& cfg);

  std::uint32_t class_token(std::size_t c, std::size_t k) const;
  std::uint32_t attribute_token(std::size_t a) const;
  std::string class_name(std::size_t c) const;
  std::string word(std::uint32_t id) const;
  // Space-separated words, a period closing every sixth word and the last.
  std::string render(std::span<const std::uint32_t> ids) const;
  // Inverse of render up to padding; unknown words are skipped.
  std::vector<std::uint32_t> parse(const std::string& text) const;
};

// Rectangle [x0, x0+side) x [y0, y0+side) of a class's planted signal.
struct SignalRect {
  std::size_t x0 = 0, y0 = 0, side = 0;
};
SignalRect signal_rect(const GenConfig& cfg, std::size_t cls);

// In-memory dataset: train samples are ids [0, n_train), test samples
// [n_train, n_train + n_test). Heatmaps exist for the expert subset only.
class Dataset {
 public:
  const GenConfig& config() const { return config_; }
  std::size_t size() const { return labels_.size(); }
  std::size_t n_train() const { return config_.n_train; }
  std::size_t n_test() const { return config_.n_test; }
  std::vector<std::size_t> train_ids() const;
  std::vector<std::size_t> test_ids() const;
  const std::vector<std::size_t>& expert_ids() const { return expert_ids_; }

  std::size_t label(std::size_t id) const { return labels_.at(id); }
  std::size_t attribute(std::size_t id) const { return attributes_.at(id); }
  bool has_heatmap(std::size_t id) const;
  std::span<const double> image(std::size_t id) const;
  std::span<const std::uint32_t> tokens(std::size_t id) const;
  std::span<const double> heatmap(std::size_t id) const;  // ContractError without one

  // Batched views: [B,1,H,W] images/heatmaps, [B,max_len] tokens.
  Tensor images(std::span<const std::size_t> ids) const;
  Tensor heatmaps(std::span<const std::size_t> ids) const;
  IndexMatrix token_batch(std::span<const std::size_t> ids) const;
  std::vector<std::size_t> labels(std::span<const std::size_t> ids) const;

  // Per-class counts over the given ids.
  std::vector<std::size_t> class_histogram(std::span<const std::size_t> ids) const;

  // Writes manifest.json and the ECLT tensors.
  void write(const std::filesystem::path& dir) const;
  // DataError naming the field on schema violations, IoError naming missing
  // files, IntegrityError on corrupt tensors.
  static Dataset load(const std::filesystem::path& dir);

 private:
  friend Dataset generate_dataset(const GenConfig& cfg);

  GenConfig config_;
  std::size_t pixels_ = 0;
  std::vector<double> images_;
  std::vector<std::uint32_t> tokens_;
  std::vector<double> heatmaps_;  // expert rows in expert_ids_ order
  std::vector<std::size_t> labels_;
  std::vector<std::size_t> attributes_;
  std::vector<std::size_t> expert_ids_;
  std::vector<std::size_t> heatmap_row_;  // id -> row in heatmaps_, or npos
};

// Deterministic in cfg: identical configs give byte-identical datasets.
Dataset generate_dataset(const GenConfig& cfg);

// Endless stream of shuffled batches over a fixed id set. Each epoch is a
// full shuffle seeded by (seed, epoch); the final partial batch is dropped.
class BatchStream {
 public:
  struct State {
    std::uint64_t epoch = 0;
    std::size_t pos = 0;
  };

  // ConfigError on an empty id set or batch_size outside [1, ids.size()].
  BatchStream(std::vector<std::size_t> ids, std::size_t batch_size, std::uint64_t seed);

  std::vector<std::size_t> next();
  State state() const { return state_; }
  void restore(State s);

 private:
  void reshuffle();

  std::vector<std::size_t> ids_;
  std::vector<std::size_t> order_;
  std::size_t batch_size_;
  std::uint64_t seed_;
  State state_;
};

}  // namespace eclip
