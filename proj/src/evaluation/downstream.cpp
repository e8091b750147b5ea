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
#include <cstdlib>
#include <exception>
#include <limits>
#include <mutex>
#include <numeric>
#include <random>
#include <string>
#include <thread>

#include "eclip/autograd.hpp"
#include "eclip/errors.hpp"
#include "eclip/evaluation.hpp"
#include "eclip/kernels.hpp"
#include "eclip/trainer.hpp"

namespace eclip {
namespace {

constexpr std::size_t kEmbedChunk = 256;

Tensor stack_rows(const std::vector<Tensor>& parts, std::size_t d) {
  std::size_t n = 0;
  for (const Tensor& p : parts) n += p.dim(0);
  Tensor out({n, d});
  std::size_t at = 0;
  for (const Tensor& p : parts) {
    std::copy(p.data().begin(), p.data().end(), out.ptr() + at);
    at += p.size();
  }
  return out;
}

template <typename Encode>
Tensor chunked(std::span<const std::size_t> ids, std::size_t d, Encode encode) {
  std::vector<Tensor> parts;
  for (std::size_t at = 0; at < ids.size(); at += kEmbedChunk)
    parts.push_back(encode(ids.subspan(at, std::min(kEmbedChunk, ids.size() - at))));
  return stack_rows(parts, d);
}

}  // namespace

Tensor embed_images(const Model& model, const Dataset& data, std::span<const std::size_t> ids) {
  return chunked(ids, model.config().embed_dim, [&](std::span<const std::size_t> part) {
    return model.encode_image(Var::constant(data.images(part))).value();
  });
}

Tensor embed_texts(const Model& model, const Dataset& data, std::span<const std::size_t> ids) {
  return chunked(ids, model.config().embed_dim,
                 [&](std::span<const std::size_t> part) { return model.encode_text(data.token_batch(part)).value(); });
}

Tensor embed_tokens(const Model& model, const IndexMatrix& tokens) { return model.encode_text(tokens).value(); }

std::size_t worker_threads() {
  if (const char* env = std::getenv("ECLIP_NUM_THREADS"); env != nullptr && *env != '\0') {
    char* end = nullptr;
    const long v = std::strtol(env, &end, 10);
    if (*end != '\0' || v < 1) throw ConfigError(std::string("ECLIP_NUM_THREADS must be a positive integer, got '") + env + "'");
    return static_cast<std::size_t>(v);
  }
  return std::max(1u, std::thread::hardware_concurrency());
}

void parallel_for(std::size_t n, const std::function<void(std::size_t)>& job) {
  const std::size_t workers = std::min(worker_threads(), n);
  if (workers <= 1) {
    for (std::size_t i = 0; i < n; ++i) job(i);
    return;
  }
  std::mutex mu;
  std::size_t next = 0;
  std::exception_ptr first;
  auto loop = [&] {
    for (;;) {
      std::size_t i;
      {
        std::lock_guard lock(mu);
        if (next >= n || first) return;
        i = next++;
      }
      try {
        job(i);
      } catch (...) {
        std::lock_guard lock(mu);
        if (!first) first = std::current_exception();
      }
    }
  };
  std::vector<std::thread> pool;
  for (std::size_t w = 0; w < workers; ++w) pool.emplace_back(loop);
  for (std::thread& t : pool) t.join();
  if (first) std::rethrow_exception(first);
}

// ---- zero-shot -----------------------------------------------------------

PromptSet make_prompts(const GenConfig& cfg, std::size_t per_class, std::uint64_t seed) {
  if (per_class == 0) throw ContractError("make_prompts: need at least one prompt per class");
  const Vocabulary vocab(cfg);
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<std::uint32_t> filler(Vocabulary::kFirstFiller,
                                                      static_cast<std::uint32_t>(cfg.vocab - 1));
  PromptSet set;
  for (std::size_t c = 0; c < cfg.n_classes; ++c) {
    IndexMatrix m{per_class, cfg.max_len, std::vector<std::uint32_t>(per_class * cfg.max_len, Vocabulary::kPad)};
    for (std::size_t p = 0; p < per_class; ++p) {
      std::vector<std::uint32_t> t;
      for (std::size_t k = 0; k < Vocabulary::kTokensPerClass; ++k) t.push_back(vocab.class_token(c, k));
      for (std::size_t f = 0; f < Vocabulary::kFillers; ++f) t.push_back(filler(rng));
      std::shuffle(t.begin(), t.end(), rng);
      t.resize(std::min(t.size(), cfg.max_len));
      std::copy(t.begin(), t.end(), m.values.begin() + static_cast<std::ptrdiff_t>(p * cfg.max_len));
    }
    set.classes.push_back(std::move(m));
  }
  return set;
}

Tensor label_embeddings(const Model& model, const PromptSet& prompts) {
  if (prompts.classes.empty()) throw ContractError("label_embeddings: empty prompt set");
  const std::size_t d = model.config().embed_dim;
  Tensor out({prompts.classes.size(), d});
  for (std::size_t c = 0; c < prompts.classes.size(); ++c) {
    const IndexMatrix& m = prompts.classes[c];
    if (m.rows == 0) throw ContractError("label_embeddings: class " + std::to_string(c) + " has no prompts");
    const Tensor e = embed_tokens(model, m);
    for (std::size_t r = 0; r < m.rows; ++r)
      kernels::axpy(1.0 / static_cast<double>(m.rows), e.ptr() + r * d, out.ptr() + c * d, d);
  }
  return l2_normalize_rows(out);
}

std::vector<std::size_t> zero_shot_classify(const Tensor& image_embeds, const Tensor& class_embeds) {
  if (image_embeds.rank() != 2 || class_embeds.rank() != 2 || image_embeds.dim(1) != class_embeds.dim(1))
    throw ShapeError("zero_shot_classify: embedding widths differ");
  if (class_embeds.dim(0) < 2) throw ContractError("zero_shot_classify: needs at least 2 classes");
  const Tensor v = l2_normalize_rows(image_embeds), c = l2_normalize_rows(class_embeds);
  const std::size_t d = v.dim(1), k = c.dim(0);
  std::vector<std::size_t> pred(v.dim(0));
  for (std::size_t i = 0; i < v.dim(0); ++i) {
    double best = -std::numeric_limits<double>::infinity();
    for (std::size_t m = 0; m < k; ++m) {
      const double s = kernels::dot(v.ptr() + i * d, c.ptr() + m * d, d);
      if (s > best) {
        best = s;
        pred[i] = m;
      }
    }
  }
  return pred;
}

double accuracy(std::span<const std::size_t> pred, std::span<const std::size_t> truth) {
  if (pred.size() != truth.size() || pred.empty()) throw ContractError("accuracy: need equal non-empty vectors");
  std::size_t hit = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) hit += pred[i] == truth[i];
  return static_cast<double>(hit) / static_cast<double>(pred.size());
}

double macro_f1(std::span<const std::size_t> pred, std::span<const std::size_t> truth, std::size_t n_classes) {
  if (pred.size() != truth.size() || pred.empty()) throw ContractError("macro_f1: need equal non-empty vectors");
  std::vector<double> tp(n_classes, 0), fp(n_classes, 0), fn(n_classes, 0);
  for (std::size_t i = 0; i < pred.size(); ++i) {
    if (pred[i] >= n_classes || truth[i] >= n_classes) throw ContractError("macro_f1: label out of range");
    if (pred[i] == truth[i]) {
      ++tp[truth[i]];
    } else {
      ++fp[pred[i]];
      ++fn[truth[i]];
    }
  }
  double total = 0.0;
  for (std::size_t c = 0; c < n_classes; ++c) {
    const double denom = 2 * tp[c] + fp[c] + fn[c];
    if (denom > 0) total += 2 * tp[c] / denom;
  }
  return total / static_cast<double>(n_classes);
}

// ---- retrieval -----------------------------------------------------------

FlatIndex::FlatIndex(const Tensor& embeds, std::vector<std::uint64_t> ids) : ids_(std::move(ids)) {
  if (embeds.rank() != 2 || embeds.dim(0) != ids_.size())
    throw ShapeError("FlatIndex: expected one [N,d] row per id");
  dim_ = embeds.dim(1);
  const Tensor unit = l2_normalize_rows(embeds);
  rows_.assign(unit.data().begin(), unit.data().end());
  for (std::size_t r = 0; r < ids_.size(); ++r)
    if (!pos_.emplace(ids_[r], r).second) throw ContractError("FlatIndex: duplicate id " + std::to_string(ids_[r]));
}

std::span<const double> FlatIndex::row(std::size_t r) const {
  return std::span<const double>(rows_).subspan(r * dim_, dim_);
}

std::size_t FlatIndex::position(std::uint64_t id) const {
  const auto it = pos_.find(id);
  if (it == pos_.end()) throw ContractError("FlatIndex: unknown id " + std::to_string(id));
  return it->second;
}

std::vector<SearchHit> FlatIndex::query(std::span<const double> v, std::size_t k) const {
  if (k == 0 || k > size()) throw ContractError("FlatIndex::query: k must lie in [1, " + std::to_string(size()) + "]");
  if (v.size() != dim_) throw ShapeError("FlatIndex::query: query width differs from the index");
  double norm = std::sqrt(kernels::dot(v.data(), v.data(), dim_));
  norm = std::max(norm, 1e-8);
  std::vector<SearchHit> hits(size());
  for (std::size_t r = 0; r < size(); ++r) hits[r] = {ids_[r], kernels::dot(v.data(), rows_.data() + r * dim_, dim_) / norm};
  auto better = [](const SearchHit& a, const SearchHit& b) { return a.score > b.score || (a.score == b.score && a.id < b.id); };
  std::partial_sort(hits.begin(), hits.begin() + static_cast<std::ptrdiff_t>(k), hits.end(), better);
  hits.resize(k);
  return hits;
}

double recall_at_k(const std::vector<std::vector<SearchHit>>& results, std::span<const std::uint64_t> truth,
                   std::size_t k) {
  if (results.size() != truth.size() || results.empty()) throw ContractError("recall_at_k: need one truth per query");
  std::size_t hit = 0;
  for (std::size_t q = 0; q < results.size(); ++q) {
    if (k > results[q].size()) throw ContractError("recall_at_k: k exceeds the retrieved list");
    for (std::size_t r = 0; r < k; ++r)
      if (results[q][r].id == truth[q]) {
        ++hit;
        break;
      }
  }
  return static_cast<double>(hit) / static_cast<double>(results.size());
}

// ---- linear probe --------------------------------------------------------

double roc_auc(std::span<const double> scores, std::span<const bool> positive) {
  if (scores.size() != positive.size()) throw ShapeError("roc_auc: scores and labels differ in length");
  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });
  double rank_sum = 0.0, n_pos = 0.0;
  for (std::size_t i = 0; i < order.size();) {
    std::size_t j = i;
    while (j < order.size() && scores[order[j]] == scores[order[i]]) ++j;
    const double avg = 0.5 * static_cast<double>(i + 1 + j);  // mean of ranks i+1..j
    for (std::size_t m = i; m < j; ++m)
      if (positive[order[m]]) {
        rank_sum += avg;
        ++n_pos;
      }
    i = j;
  }
  const double n_neg = static_cast<double>(scores.size()) - n_pos;
  if (n_pos == 0 || n_neg == 0) throw ContractError("roc_auc: needs both positive and negative samples");
  return (rank_sum - n_pos * (n_pos + 1) / 2) / (n_pos * n_neg);
}

namespace {

Tensor one_hot(std::span<const std::size_t> y, std::size_t k) {
  Tensor t({y.size(), k});
  for (std::size_t i = 0; i < y.size(); ++i) {
    if (y[i] >= k) throw ContractError("linear_probe: label out of range");
    t[i * k + y[i]] = 1.0;
  }
  return t;
}

Tensor take_rows(const Tensor& x, std::span<const std::size_t> rows) {
  const std::size_t d = x.dim(1);
  Tensor out({rows.size(), d});
  for (std::size_t r = 0; r < rows.size(); ++r) std::copy_n(x.ptr() + rows[r] * d, d, out.ptr() + r * d);
  return out;
}

}  // namespace

ProbeResult linear_probe(const Tensor& x_train, std::span<const std::size_t> y_train, const Tensor& x_val,
                         std::span<const std::size_t> y_val, const Tensor& x_test, std::span<const std::size_t> y_test,
                         std::size_t n_classes, const ProbeConfig& cfg) {
  if (x_train.rank() != 2 || x_train.dim(0) != y_train.size() || x_val.dim(0) != y_val.size() ||
      x_test.dim(0) != y_test.size())
    throw ShapeError("linear_probe: features and labels differ in count");
  if (y_train.empty() || y_val.empty() || y_test.empty()) throw ContractError("linear_probe: empty split");
  if (cfg.epochs == 0 || cfg.batch_size == 0) throw ConfigError("linear_probe: epochs and batch_size must be positive");
  const std::size_t d = x_train.dim(1), n = y_train.size();

  std::vector<NamedParam> params{{"w", Var::parameter(Tensor({d, n_classes})), true},
                                 {"b", Var::parameter(Tensor({n_classes})), false}};
  Adam adam(params);
  const Var xv = Var::constant(x_val);
  const Tensor tv = one_hot(y_val, n_classes);

  const std::size_t per_epoch = (n + cfg.batch_size - 1) / cfg.batch_size;
  const std::size_t total = per_epoch * cfg.epochs;
  const auto warmup = static_cast<std::size_t>(std::floor(cfg.warmup_frac * static_cast<double>(total)));
  auto lr_at = [&](std::size_t s) {
    if (s < warmup) return cfg.lr * static_cast<double>(s + 1) / static_cast<double>(warmup);
    const double t = static_cast<double>(s - warmup) / static_cast<double>(std::max<std::size_t>(total - warmup, 1));
    return cfg.lr * 0.5 * (1.0 + std::cos(M_PI * t));
  };

  std::mt19937_64 rng(cfg.seed);
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  ProbeResult result;
  result.best_val_loss = std::numeric_limits<double>::infinity();
  Tensor best_w, best_b;
  std::size_t step = 0;
  for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    for (std::size_t at = 0; at < n; at += cfg.batch_size) {
      const std::span<const std::size_t> rows(order.data() + at, std::min(cfg.batch_size, n - at));
      std::vector<std::size_t> labels;
      for (std::size_t r : rows) labels.push_back(y_train[r]);
      const Var loss = bce_with_logits(linear(Var::constant(take_rows(x_train, rows)), params[0].var, params[1].var),
                                       one_hot(labels, n_classes));
      backward(loss);
      adam.step(params, lr_at(step++), 0.0);
      for (NamedParam& p : params) p.var.zero_grad();
    }
    const double val = bce_with_logits(linear(xv, params[0].var, params[1].var), tv).value().item();
    if (val < result.best_val_loss) {
      result.best_val_loss = val;
      result.best_epoch = epoch;
      best_w = params[0].var.value();
      best_b = params[1].var.value();
    }
  }

  const Tensor scores =
      linear(Var::constant(x_test), Var::constant(best_w), Var::constant(best_b)).value();
  std::vector<double> col(y_test.size());
  std::unique_ptr<bool[]> pos(new bool[y_test.size()]);
  double sum = 0.0;
  for (std::size_t c = 0; c < n_classes; ++c) {
    for (std::size_t i = 0; i < y_test.size(); ++i) {
      col[i] = scores[i * n_classes + c];
      pos[i] = y_test[i] == c;
    }
    result.auc.push_back(roc_auc(col, std::span<const bool>(pos.get(), y_test.size())));
    sum += result.auc.back();
  }
  result.macro_auc = sum / static_cast<double>(n_classes);
  return result;
}

}  // namespace eclip
