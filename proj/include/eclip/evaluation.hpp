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
#include <functional>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "eclip/model.hpp"
#include "eclip/synthdata.hpp"
#include "eclip/tensor.hpp"
#include "json.hpp"

// Embedding-quality and downstream metrics. Every function here is pure given
// frozen embeddings or parameters; embeddings are [N,d] row-major tensors.
namespace eclip {

// ---- embedding helpers ---------------------------------------------------

// Encodes in chunks so large splits do not build one huge graph.
Tensor embed_images(const Model& model, const Dataset& data, std::span<const std::size_t> ids);
Tensor embed_texts(const Model& model, const Dataset& data, std::span<const std::size_t> ids);
Tensor embed_tokens(const Model& model, const IndexMatrix& tokens);

// Worker count for fan-out jobs: ECLIP_NUM_THREADS when set (>= 1), else the
// hardware concurrency. ConfigError on a malformed value.
std::size_t worker_threads();
// Runs job(i) for i in [0, n) on up to worker_threads() threads. The first
// exception thrown by any job is rethrown after all workers join.
void parallel_for(std::size_t n, const std::function<void(std::size_t)>& job);

// ---- geometry ------------------------------------------------------------

// -mean_i(|v_i - t_i|^2 - min_{j != i} |v_i - t_j|^2). ContractError for N < 2.
double alignment(const Tensor& v, const Tensor& t);

enum class UniformityPairs { kOffDiagonal, kAll };
// -log mean exp(-2 |v_i - t_j|^2) over cross-modal pairs.
double uniformity(const Tensor& v, const Tensor& t, UniformityPairs pairs = UniformityPairs::kOffDiagonal);

// Distance between the modality centroids.
double modality_gap(const Tensor& v, const Tensor& t);

// Fixed-width bins over [lo, hi]; the last bin is closed on the right.
struct Histogram {
  double lo = -1.0;
  double hi = 1.0;
  std::vector<std::size_t> counts;
  double mean = 0.0;

  double bin_left(std::size_t b) const;
  double bin_right(std::size_t b) const;
  std::size_t total() const;
};

struct GroupPairHistogram {
  std::size_t a = 0;
  std::size_t b = 0;
  Histogram hist;
};

// For every ordered pair of distinct groups, the cosine similarities between
// all members of a and all members of b. Groups are the distinct values of
// group_of, in ascending order. ContractError with fewer than two groups.
std::vector<GroupPairHistogram> cosine_histograms(const Tensor& x, std::span<const std::size_t> group_of,
                                                  std::size_t bins);

void write_histogram_csv(const std::filesystem::path& path, const Histogram& h);
void write_histogram_svg(const std::filesystem::path& path, const Histogram& h, const std::string& title);

// ---- clustering ----------------------------------------------------------

struct KMeansResult {
  std::vector<std::size_t> labels;
  Tensor centroids;  // [k,d]
  // Within-cluster SSE after each assignment pass.
  std::vector<double> sse;
  std::size_t iterations = 0;
};

// k-means++ seeding then Lloyd iterations until the assignment stops changing
// or max_iter passes. An emptied cluster is re-seeded at the point farthest
// from its centroid.
KMeansResult kmeans(const Tensor& x, std::size_t k, std::uint64_t seed, std::size_t max_iter = 100);

// Arithmetic-mean normalization; two constant labelings score 1.
double nmi(std::span<const std::size_t> a, std::span<const std::size_t> b);
double silhouette(const Tensor& x, std::span<const std::size_t> labels);
double calinski_harabasz(const Tensor& x, std::span<const std::size_t> labels);

// ---- zero-shot -----------------------------------------------------------

// Token sequences per class.
struct PromptSet {
  std::vector<IndexMatrix> classes;
};

// per_class prompts for each class: its class tokens plus random fillers,
// shuffled, padded to the dataset's max_len.
PromptSet make_prompts(const GenConfig& cfg, std::size_t per_class, std::uint64_t seed);

// Mean prompt embedding per class, re-normalized. [K,d].
Tensor label_embeddings(const Model& model, const PromptSet& prompts);

// Argmax cosine per row; ties go to the lowest class index.
std::vector<std::size_t> zero_shot_classify(const Tensor& image_embeds, const Tensor& class_embeds);

double accuracy(std::span<const std::size_t> pred, std::span<const std::size_t> truth);
// Unweighted mean of per-class F1; a class absent from both pred and truth
// scores 0.
double macro_f1(std::span<const std::size_t> pred, std::span<const std::size_t> truth, std::size_t n_classes);

// ---- retrieval -----------------------------------------------------------

struct SearchHit {
  std::uint64_t id = 0;
  double score = 0.0;
};

// Exact cosine search over row-normalized embeddings.
class FlatIndex {
 public:
  // Rows are normalized on insertion. ContractError on duplicate ids or a
  // size mismatch.
  FlatIndex(const Tensor& embeds, std::vector<std::uint64_t> ids);

  std::size_t size() const { return ids_.size(); }
  std::size_t dim() const { return dim_; }
  const std::vector<std::uint64_t>& ids() const { return ids_; }
  std::span<const double> row(std::size_t r) const;
  // Row position of an id; ContractError when absent.
  std::size_t position(std::uint64_t id) const;

  // Top k by descending cosine, ties by ascending id. ContractError if k is 0
  // or exceeds size().
  std::vector<SearchHit> query(std::span<const double> v, std::size_t k) const;

 private:
  std::vector<std::uint64_t> ids_;
  std::map<std::uint64_t, std::size_t> pos_;
  std::size_t dim_ = 0;
  std::vector<double> rows_;
};

// Fraction of queries whose truth id is among the first k results.
double recall_at_k(const std::vector<std::vector<SearchHit>>& results, std::span<const std::uint64_t> truth,
                   std::size_t k);

// ---- linear probe --------------------------------------------------------

struct ProbeConfig {
  std::size_t epochs = 5;
  std::size_t batch_size = 32;
  double lr = 0.05;
  double warmup_frac = 0.10;
  std::uint64_t seed = 0;
};

struct ProbeResult {
  std::vector<double> auc;  // one-vs-rest, per class
  double macro_auc = 0.0;
  std::size_t best_epoch = 0;  // 1-based epoch whose weights were kept
  double best_val_loss = 0.0;
};

// One linear layer with sigmoid outputs trained by binary cross-entropy on
// one-hot targets; the epoch with the lowest validation loss is kept and
// scored on the test split.
ProbeResult linear_probe(const Tensor& x_train, std::span<const std::size_t> y_train, const Tensor& x_val,
                         std::span<const std::size_t> y_val, const Tensor& x_test, std::span<const std::size_t> y_test,
                         std::size_t n_classes, const ProbeConfig& cfg);

// Mann-Whitney rank statistic, ties averaged. ContractError unless both
// classes occur.
double roc_auc(std::span<const double> scores, std::span<const bool> positive);

// ---- report --------------------------------------------------------------

struct MetricsReport {
  std::optional<double> alignment;
  std::optional<double> uniformity;
  std::optional<double> modality_gap;
  std::optional<double> nmi;
  std::optional<double> silhouette;
  std::optional<double> calinski_harabasz;
  std::optional<double> macro_f1;
  std::optional<double> accuracy;
  std::map<std::size_t, double> recall;  // k -> recall@k
  std::optional<double> roc_auc;

  // ContractError when a present metric leaves its range or recall is not
  // monotone in k.
  void validate() const;
};

// Absent metrics are omitted; recall appears as "recall@k" keys.
void to_json(nlohmann::json& j, const MetricsReport& r);
void from_json(const nlohmann::json& j, MetricsReport& r);

}  // namespace eclip
