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
#include <string>
#include <string_view>
#include <vector>

#include "eclip/autograd.hpp"
#include "json.hpp"

namespace eclip {

enum class HeatmapMode { kMha, kMultiply, kConv };

std::string_view to_string(HeatmapMode mode);
// ConfigError on an unknown name.
HeatmapMode parse_heatmap_mode(std::string_view name);

struct ModelConfig {
  std::size_t channels = 1;
  std::size_t image_size = 32;
  std::size_t patch = 8;
  std::size_t width = 64;       // transformer width
  std::size_t mlp_hidden = 128;
  std::size_t heads = 4;        // image encoder attention
  std::size_t embed_dim = 64;   // shared hypersphere dimension d
  std::size_t vocab = 256;
  std::size_t max_len = 32;
  std::size_t hp_heads = 4;     // heatmap processor attention
  HeatmapMode hp_mode = HeatmapMode::kMha;

  std::size_t grid() const { return image_size / patch; }
  std::size_t patches() const { return grid() * grid(); }
  std::size_t patch_dim() const { return channels * patch * patch; }

  // ConfigError naming the offending field.
  void validate() const;
};

void to_json(nlohmann::json& j, const ModelConfig& c);
void from_json(const nlohmann::json& j, ModelConfig& c);

// [B,C,H,W] -> [B,S,C*P*P]. Patches are row-major over the grid, each
// flattened channel-first. ShapeError unless P divides H and W.
Var patchify(const Var& images, std::size_t patch);
// Inverse of patchify.
Var unpatchify(const Var& patches, std::size_t channels, std::size_t height, std::size_t width,
               std::size_t patch);

struct AttentionParams {
  Var wq, wk, wv, wo;  // each [D,D], applied as x * w
  std::size_t heads = 1;
};

// Scaled dot-product attention over q[B,Sq,D] and k,v[B,Sk,D], split into
// heads of width D/heads with scale 1/sqrt(D/heads). ConfigError if heads
// does not divide D.
Var mha(const Var& q, const Var& k, const Var& v, const AttentionParams& p);

struct NamedParam {
  std::string name;
  Var var;
  bool decay = true;  // subject to weight decay
};

// Image encoder f, text encoder g, heatmap processor and the learnable
// temperature, all held as named leaves.
class Model {
 public:
  Model(const ModelConfig& config, std::uint64_t seed);
  // Parameters are graph leaves; a copy would alias them.
  Model(const Model&) = delete;
  Model& operator=(const Model&) = delete;
  Model(Model&&) = default;
  Model& operator=(Model&&) = default;

  const ModelConfig& config() const { return config_; }
  // Swapping a Var here redirects every later forward pass to it.
  std::vector<NamedParam>& params() { return params_; }
  const std::vector<NamedParam>& params() const { return params_; }
  // ContractError on an unknown name.
  const Var& param(std::string_view name) const;

  // images [B,C,H,W] -> unit rows [B,d].
  Var encode_image(const Var& images) const;
  // ids [B,L] -> unit rows [B,d]. DataError on ids >= vocab.
  Var encode_text(const IndexMatrix& tokens) const;
  // I^E from images [B,C,H,W] and heatmaps [B,1,H,W].
  Var heatmap_process(const Var& images, const Var& heatmaps) const;
  // log(1/tau), a [1] leaf.
  const Var& log_inv_tau() const { return param("log_inv_tau"); }
  double tau() const;

  // Directory of f64 ECLT tensors (one per parameter) plus model.json.
  void save(const std::filesystem::path& dir) const;
  static Model load(const std::filesystem::path& dir);

 private:
  Var& add(std::string name, Tensor value, bool decay = true);

  ModelConfig config_;
  std::vector<NamedParam> params_;
};

}  // namespace eclip
