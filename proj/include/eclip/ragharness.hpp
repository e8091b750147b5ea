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

#include <chrono>
#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "eclip/evaluation.hpp"
#include "eclip/model.hpp"
#include "eclip/synthdata.hpp"
#include "json.hpp"

// Retrieval-augmented report generation: index report embeddings, retrieve an
// expanded candidate set for an image, keep one representative per k-means
// cluster, prompt a pluggable generator and score what comes back.
namespace eclip {

// Read-only after construction; safe to query from several threads.
class SnippetStore {
 public:
  // ContractError unless every index id has exactly one text.
  SnippetStore(FlatIndex index, std::map<std::uint64_t, std::string> texts);
  // Reports of the given dataset ids, embedded with the model's text encoder.
  static SnippetStore build(const Model& model, const Dataset& data, std::span<const std::size_t> ids);

  const FlatIndex& index() const { return index_; }
  std::size_t size() const { return index_.size(); }
  const std::string& text(std::uint64_t id) const;
  std::span<const double> embedding(std::uint64_t id) const { return index_.row(index_.position(id)); }

 private:
  FlatIndex index_;
  std::map<std::uint64_t, std::string> texts_;
};

// Top k_final * expansion snippets by cosine, best first. ContractError when
// the store is smaller than that.
std::vector<SearchHit> retrieve_expanded(std::span<const double> image_embed, const SnippetStore& store,
                                         std::size_t k_final = 5, std::size_t expansion = 4);

// k-means with k = k_final over the candidates' embeddings; from each cluster
// the member nearest its centroid. The result keeps the candidates' order.
// When the candidate embeddings are all identical the first k_final are
// returned.
std::vector<SearchHit> cluster_select(const std::vector<SearchHit>& candidates, const SnippetStore& store,
                                      std::size_t k_final, std::uint64_t seed);

struct Exemplar {
  std::vector<std::string> snippets;
  std::string report;
};

struct Prompt {
  std::string system;
  std::string user;
};

extern const char* const kRadiologistSystemPrompt;

// User text: exactly two exemplars (snippets then report), then the test
// snippets. Byte-deterministic. ContractError on empty snippets or an
// exemplar count other than two.
Prompt assemble_prompt(const std::vector<std::string>& snippets, const std::vector<Exemplar>& exemplars);

struct GenerationRequest {
  Prompt prompt;
  std::vector<std::string> snippets;  // the test snippets, in prompt order
};

class GeneratorClient {
 public:
  virtual ~GeneratorClient() = default;
  // TransportError on timeouts, broken pipes and protocol errors.
  virtual std::string generate(const GenerationRequest& request) const = 0;
  virtual std::string describe() const = 0;
};

// First sentence of every snippet, joined by single spaces.
class MockClient : public GeneratorClient {
 public:
  std::string generate(const GenerationRequest& request) const override;
  std::string describe() const override { return "mock"; }
};

// Runs "/bin/sh -c command" per request: system and user text on stdin,
// separated by a blank line; the completion is everything on stdout.
class SubprocessClient : public GeneratorClient {
 public:
  SubprocessClient(std::string command, std::chrono::milliseconds timeout);
  std::string generate(const GenerationRequest& request) const override;
  std::string describe() const override { return "cmd:" + command_; }

 private:
  std::string command_;
  std::chrono::milliseconds timeout_;
};

// POSTs {"system": ..., "user": ...} to url and reads {"text": ...}.
class HttpClient : public GeneratorClient {
 public:
  // ConfigError on a URL that is not http://host[:port][/path].
  HttpClient(const std::string& url, std::chrono::milliseconds timeout);
  std::string generate(const GenerationRequest& request) const override;
  std::string describe() const override;

 private:
  std::string host_;
  int port_ = 80;
  std::string path_;
  std::chrono::milliseconds timeout_;
};

// "mock", "cmd:<shell command>" or an http:// URL.
std::unique_ptr<GeneratorClient> make_client(const std::string& spec, std::chrono::milliseconds timeout);

// Lowercased whitespace tokens.
std::vector<std::string> tokenize(const std::string& text);
// Geometric mean of clipped unigram and bigram precision times the brevity
// penalty. 0 for an empty candidate.
double bleu2(const std::string& candidate, const std::string& reference);
// Cosine of the text-encoder embeddings of both texts, read with vocab.
// ContractError on blank input; 0 when either text has no known word.
double embed_similarity(const Model& model, const Vocabulary& vocab, std::size_t max_len,
                        const std::string& candidate, const std::string& reference);

struct RagConfig {
  std::size_t k_final = 5;
  std::size_t expansion = 4;
  std::uint64_t seed = 0;
};

struct RagRow {
  std::uint64_t id = 0;
  std::string generated;
  std::string reference;
  double bleu2 = 0.0;
  double embed_sim = 0.0;
};

void to_json(nlohmann::json& j, const RagRow& r);

// Generates a report for every query id from its image's retrieved snippets.
// The two exemplars are store entries drawn with the seed; each exemplar's
// own report is kept out of its snippets.
std::vector<RagRow> run_rag(const Model& model, const Dataset& data, const SnippetStore& store,
                            const GeneratorClient& client, std::span<const std::size_t> query_ids,
                            const RagConfig& cfg);

}  // namespace eclip
