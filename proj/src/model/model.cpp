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

#include "eclip/model.hpp"

#include <cmath>
#include <fstream>
#include <random>

#include "eclip/eclt.hpp"
#include "eclip/errors.hpp"

namespace eclip {

namespace fs = std::filesystem;
using nlohmann::json;

std::string_view to_string(HeatmapMode mode) {
  switch (mode) {
    case HeatmapMode::kMha:
      return "mha";
    case HeatmapMode::kMultiply:
      return "multiply";
    case HeatmapMode::kConv:
      return "conv";
  }
  return "mha";
}

HeatmapMode parse_heatmap_mode(std::string_view name) {
  if (name == "mha") return HeatmapMode::kMha;
  if (name == "multiply") return HeatmapMode::kMultiply;
  if (name == "conv") return HeatmapMode::kConv;
  throw ConfigError("heatmap mode must be one of mha, multiply, conv (got '" + std::string(name) + "')");
}

void ModelConfig::validate() const {
  auto positive = [](std::size_t v, const char* field) {
    if (v == 0) throw ConfigError(std::string("model.") + field + " must be positive");
  };
  positive(channels, "channels");
  positive(image_size, "image_size");
  positive(patch, "patch");
  positive(width, "width");
  positive(mlp_hidden, "mlp_hidden");
  positive(heads, "heads");
  positive(embed_dim, "embed_dim");
  positive(vocab, "vocab");
  positive(max_len, "max_len");
  positive(hp_heads, "hp_heads");
  if (image_size % patch != 0) throw ConfigError("model.patch must divide model.image_size");
  if (width % heads != 0) throw ConfigError("model.heads must divide model.width");
  if (patch_dim() % hp_heads != 0) throw ConfigError("model.hp_heads must divide channels*patch*patch");
  if (vocab < 2) throw ConfigError("model.vocab must leave room for the pad id");
}

void to_json(json& j, const ModelConfig& c) {
  j = json{{"channels", c.channels},   {"image_size", c.image_size}, {"patch", c.patch},
           {"width", c.width},         {"mlp_hidden", c.mlp_hidden}, {"heads", c.heads},
           {"embed_dim", c.embed_dim}, {"vocab", c.vocab},           {"max_len", c.max_len},
           {"hp_heads", c.hp_heads},   {"hp_mode", std::string(to_string(c.hp_mode))}};
}

void from_json(const json& j, ModelConfig& c) {
  auto get = [&](const char* key, std::size_t& out) {
    if (!j.contains(key)) return;
    if (!j.at(key).is_number_unsigned()) throw ConfigError(std::string("model.") + key + " must be a non-negative integer");
    out = j.at(key).get<std::size_t>();
  };
  get("channels", c.channels);
  get("image_size", c.image_size);
  get("patch", c.patch);
  get("width", c.width);
  get("mlp_hidden", c.mlp_hidden);
  get("heads", c.heads);
  get("embed_dim", c.embed_dim);
  get("vocab", c.vocab);
  get("max_len", c.max_len);
  get("hp_heads", c.hp_heads);
  if (j.contains("hp_mode")) {
    if (!j.at("hp_mode").is_string()) throw ConfigError("model.hp_mode must be a string");
    c.hp_mode = parse_heatmap_mode(j.at("hp_mode").get<std::string>());
  }
}

namespace {

void check_image(const Var& x, const char* what) {
  if (x.dims().size() != 4) throw ShapeError(std::string(what) + ": expected [B,C,H,W], got " + shape_str(x.dims()));
}

std::vector<std::size_t> patch_index(std::size_t b, std::size_t c, std::size_t h, std::size_t w,
                                     std::size_t p) {
  const std::size_t gh = h / p;
  const std::size_t gw = w / p;
  std::vector<std::size_t> index;
  index.reserve(b * c * h * w);
  for (std::size_t n = 0; n < b; ++n)
    for (std::size_t gy = 0; gy < gh; ++gy)
      for (std::size_t gx = 0; gx < gw; ++gx)
        for (std::size_t ch = 0; ch < c; ++ch)
          for (std::size_t py = 0; py < p; ++py)
            for (std::size_t px = 0; px < p; ++px)
              index.push_back(((n * c + ch) * h + gy * p + py) * w + gx * p + px);
  return index;
}

// [B,S,h*dh] <-> [B*h,S,dh]
Var split_heads(const Var& x, std::size_t heads) {
  const std::size_t b = x.dim(0), s = x.dim(1), d = x.dim(2);
  Var y = permute(reshape(x, {b, s, heads, d / heads}), {0, 2, 1, 3});
  return reshape(y, {b * heads, s, d / heads});
}

Var merge_heads(const Var& x, std::size_t batch, std::size_t heads) {
  const std::size_t s = x.dim(1), dh = x.dim(2);
  Var y = permute(reshape(x, {batch, heads, s, dh}), {0, 2, 1, 3});
  return reshape(y, {batch, s, heads * dh});
}

// Stacks a and b along the channel axis.
Var concat_channels(const Var& a, const Var& b) {
  const std::size_t n = a.dim(0), c = a.dim(1), hw = a.dim(2) * a.dim(3);
  std::vector<Var> rows{reshape(a, {n, c * hw}), reshape(b, {n, c * hw})};
  Var stacked = concat_rows(rows);
  std::vector<std::size_t> index;
  index.reserve(2 * n * c * hw);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < c * hw; ++j) index.push_back(i * c * hw + j);
    for (std::size_t j = 0; j < c * hw; ++j) index.push_back((n + i) * c * hw + j);
  }
  return gather(stacked, {n, 2 * c, a.dim(2), a.dim(3)}, std::move(index));
}

Tensor uniform(Shape dims, double bound, std::mt19937_64& rng) {
  Tensor t(std::move(dims));
  std::uniform_real_distribution<double> dist(-bound, bound);
  for (double& v : t.data()) v = dist(rng);
  return t;
}

Tensor normal(Shape dims, double stddev, std::mt19937_64& rng) {
  Tensor t(std::move(dims));
  std::normal_distribution<double> dist(0.0, stddev);
  for (double& v : t.data()) v = dist(rng);
  return t;
}

Tensor linear_init(std::size_t in, std::size_t out, std::mt19937_64& rng) {
  return uniform({in, out}, 1.0 / std::sqrt(static_cast<double>(in)), rng);
}

Tensor xavier(std::size_t in, std::size_t out, std::mt19937_64& rng) {
  return uniform({in, out}, std::sqrt(6.0 / static_cast<double>(in + out)), rng);
}

}  // namespace

Var patchify(const Var& images, std::size_t patch) {
  check_image(images, "patchify");
  const Shape& d = images.dims();
  if (patch == 0 || d[2] % patch != 0 || d[3] % patch != 0)
    throw ShapeError("patchify: patch size " + std::to_string(patch) + " does not divide " + shape_str(d));
  const std::size_t s = (d[2] / patch) * (d[3] / patch);
  return gather(images, {d[0], s, d[1] * patch * patch}, patch_index(d[0], d[1], d[2], d[3], patch));
}

Var unpatchify(const Var& patches, std::size_t channels, std::size_t height, std::size_t width,
               std::size_t patch) {
  const Shape& d = patches.dims();
  if (d.size() != 3 || patch == 0 || height % patch != 0 || width % patch != 0 ||
      d[1] * patch * patch != height * width || d[2] != channels * patch * patch)
    throw ShapeError("unpatchify: " + shape_str(d) + " is inconsistent with a " + std::to_string(channels) + "x" +
                     std::to_string(height) + "x" + std::to_string(width) + " image");
  const std::vector<std::size_t> forward = patch_index(d[0], channels, height, width, patch);
  std::vector<std::size_t> inverse(forward.size());
  for (std::size_t i = 0; i < forward.size(); ++i) inverse[forward[i]] = i;
  return gather(patches, {d[0], channels, height, width}, std::move(inverse));
}

Var mha(const Var& q, const Var& k, const Var& v, const AttentionParams& p) {
  if (q.dims().size() != 3 || k.dims().size() != 3 || v.dims() != k.dims() || q.dim(0) != k.dim(0) ||
      q.dim(2) != k.dim(2))
    throw ShapeError("mha: incompatible q " + shape_str(q.dims()) + ", k " + shape_str(k.dims()) + ", v " +
                     shape_str(v.dims()));
  const std::size_t d = q.dim(2);
  if (p.heads == 0 || d % p.heads != 0)
    throw ConfigError("mha: " + std::to_string(p.heads) + " heads do not divide width " + std::to_string(d));
  const std::size_t batch = q.dim(0);
  Var qh = split_heads(linear(q, p.wq), p.heads);
  Var kh = split_heads(linear(k, p.wk), p.heads);
  Var vh = split_heads(linear(v, p.wv), p.heads);
  const double scale_factor = 1.0 / std::sqrt(static_cast<double>(d / p.heads));
  Var weights = softmax(scale(bmm(qh, kh, true), scale_factor), 2);
  return linear(merge_heads(bmm(weights, vh), batch, p.heads), p.wo);
}

Var& Model::add(std::string name, Tensor value, bool decay) {
  params_.push_back({std::move(name), Var::parameter(std::move(value)), decay});
  return params_.back().var;
}

Model::Model(const ModelConfig& config, std::uint64_t seed) : config_(config) {
  config_.validate();
  std::mt19937_64 rng(seed);
  const ModelConfig& c = config_;
  const std::size_t w = c.width, pd = c.patch_dim();

  add("image.patch_w", linear_init(pd, w, rng));
  add("image.patch_b", Tensor({w}));
  add("image.pos", Tensor({c.patches(), w}));
  add("image.ln1_g", Tensor::full({w}, 1.0), false);
  add("image.ln1_b", Tensor({w}), false);
  add("image.attn_q", xavier(w, w, rng));
  add("image.attn_k", xavier(w, w, rng));
  add("image.attn_v", xavier(w, w, rng));
  add("image.attn_o", xavier(w, w, rng));
  add("image.ln2_g", Tensor::full({w}, 1.0), false);
  add("image.ln2_b", Tensor({w}), false);
  add("image.mlp1_w", linear_init(w, c.mlp_hidden, rng));
  add("image.mlp1_b", Tensor({c.mlp_hidden}));
  add("image.mlp2_w", linear_init(c.mlp_hidden, w, rng));
  add("image.mlp2_b", Tensor({w}));
  add("image.proj", linear_init(w, c.embed_dim, rng));

  add("text.embed", normal({c.vocab, w}, 0.02, rng));
  add("text.proj", linear_init(w, c.embed_dim, rng));

  switch (c.hp_mode) {
    case HeatmapMode::kMha:
      add("heatmap.q", xavier(pd, pd, rng));
      add("heatmap.k", xavier(pd, pd, rng));
      add("heatmap.v", xavier(pd, pd, rng));
      add("heatmap.o", xavier(pd, pd, rng));
      break;
    case HeatmapMode::kConv: {
      Tensor kernel({c.channels, 2 * c.channels, 3, 3});
      for (std::size_t ch = 0; ch < c.channels; ++ch) kernel[((ch * 2 * c.channels + ch) * 3 + 1) * 3 + 1] = 1.0;
      add("heatmap.conv_w", std::move(kernel));
      add("heatmap.conv_b", Tensor({c.channels}));
      break;
    }
    case HeatmapMode::kMultiply:
      break;
  }

  add("log_inv_tau", Tensor({1}, {std::log(1.0 / 0.07)}), false);
}

const Var& Model::param(std::string_view name) const {
  for (const NamedParam& p : params_)
    if (p.name == name) return p.var;
  throw ContractError("no parameter named '" + std::string(name) + "'");
}

double Model::tau() const { return std::exp(-log_inv_tau().value()[0]); }

Var Model::encode_image(const Var& images) const {
  check_image(images, "encode_image");
  const ModelConfig& c = config_;
  if (images.dim(1) != c.channels || images.dim(2) != c.image_size || images.dim(3) != c.image_size)
    throw ShapeError("encode_image: expected [B," + std::to_string(c.channels) + "," + std::to_string(c.image_size) +
                     "," + std::to_string(c.image_size) + "], got " + shape_str(images.dims()));
  Var x = linear(patchify(images, c.patch), param("image.patch_w"), param("image.patch_b"));
  x = add_broadcast(x, param("image.pos"));
  const AttentionParams attn{param("image.attn_q"), param("image.attn_k"), param("image.attn_v"),
                             param("image.attn_o"), c.heads};
  Var h = layer_norm(x, param("image.ln1_g"), param("image.ln1_b"));
  x = eclip::add(x, mha(h, h, h, attn));
  h = layer_norm(x, param("image.ln2_g"), param("image.ln2_b"));
  h = linear(gelu(linear(h, param("image.mlp1_w"), param("image.mlp1_b"))), param("image.mlp2_w"),
             param("image.mlp2_b"));
  x = eclip::add(x, h);
  return l2_normalize(linear(mean_axis(x, 1), param("image.proj")), 1);
}

Var Model::encode_text(const IndexMatrix& tokens) const {
  if (tokens.cols > config_.max_len)
    throw DataError("encode_text: sequence length " + std::to_string(tokens.cols) + " exceeds max_len " +
                    std::to_string(config_.max_len));
  return l2_normalize(linear(embedding_mean(param("text.embed"), tokens), param("text.proj")), 1);
}

Var Model::heatmap_process(const Var& images, const Var& heatmaps) const {
  check_image(images, "heatmap_process");
  check_image(heatmaps, "heatmap_process");
  const Shape& d = images.dims();
  const Shape& hd = heatmaps.dims();
  if (hd[0] != d[0] || hd[1] != 1 || hd[2] != d[2] || hd[3] != d[3])
    throw ShapeError("heatmap_process: heatmap " + shape_str(hd) + " does not match image " + shape_str(d));
  Var hm = heatmaps;
  if (d[1] > 1) {
    const std::size_t hw = d[2] * d[3];
    std::vector<std::size_t> index;
    index.reserve(d[0] * d[1] * hw);
    for (std::size_t n = 0; n < d[0]; ++n)
      for (std::size_t ch = 0; ch < d[1]; ++ch)
        for (std::size_t j = 0; j < hw; ++j) index.push_back(n * hw + j);
    hm = gather(heatmaps, d, std::move(index));
  }
  Var masked = mul(hm, images);
  switch (config_.hp_mode) {
    case HeatmapMode::kMultiply:
      return masked;
    case HeatmapMode::kConv:
      return conv2d_3x3(concat_channels(images, masked), param("heatmap.conv_w"), param("heatmap.conv_b"));
    case HeatmapMode::kMha:
      break;
  }
  const std::size_t p = config_.patch;
  const AttentionParams attn{param("heatmap.q"), param("heatmap.k"), param("heatmap.v"), param("heatmap.o"),
                             config_.hp_heads};
  Var keys = patchify(images, p);
  return unpatchify(mha(patchify(masked, p), keys, keys, attn), d[1], d[2], d[3], p);
}

void Model::save(const fs::path& dir) const {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw IoError("cannot create " + dir.string() + ": " + ec.message());
  json manifest{{"config", config_}, {"tensors", json::array()}};
  for (const NamedParam& p : params_) {
    eclt::write(dir / (p.name + ".eclt"), p.var.value(), eclt::Payload::kF64);
    manifest["tensors"].push_back({{"name", p.name}, {"shape", p.var.dims()}});
  }
  std::ofstream out(dir / "model.json");
  out << manifest.dump(2) << '\n';
  if (!out) throw IoError("cannot write " + (dir / "model.json").string());
}

Model Model::load(const fs::path& dir) {
  std::ifstream in(dir / "model.json");
  if (!in) throw IoError("cannot open " + (dir / "model.json").string());
  ModelConfig config;
  try {
    json manifest;
    in >> manifest;
    config = manifest.at("config").get<ModelConfig>();
  } catch (const json::exception& e) {
    throw IntegrityError((dir / "model.json").string() + ": " + e.what());
  }
  Model model(config, 0);
  for (NamedParam& p : model.params_) {
    const fs::path file = dir / (p.name + ".eclt");
    Tensor t = eclt::read_float(file);
    if (t.dims() != p.var.dims())
      throw IntegrityError(file.string() + ": shape " + shape_str(t.dims()) + " does not match " +
                           shape_str(p.var.dims()));
    p.var.mutable_value() = std::move(t);
  }
  return model;
}

}  // namespace eclip
