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
#include <cctype>
#include <cmath>
#include <map>
#include <random>
#include <set>
#include <sstream>

#include "eclip/autograd.hpp"
#include "eclip/errors.hpp"
#include "eclip/kernels.hpp"
#include "eclip/ragharness.hpp"

namespace eclip {

const char* const kRadiologistSystemPrompt =
    "You are to act as a radiologist, trained to generate radiology reports. Your task is to synthesize the "
    "information from the closest report snippets provided below into a comprehensive and medically accurate "
    "radiologist report for each case. Craft a comprehensive response that is concise, succinct, and focuses on "
    "the key findings and potential diagnoses. Your report should maintain a professional tone, with clarity and "
    "precision in medical terminology, suitable for medical experts. Remember to be concise, succinct, and focus "
    "on the key findings and potential diagnoses, avoiding unnecessary elaboration.";

namespace {

constexpr const char* kUserLead = "The following snippets are from reports closely related to the patient's X-ray image.";
constexpr const char* kUserTail = "Based on these, generate a radiologist report.";

void append_block(std::string& out, const std::vector<std::string>& snippets) {
  out += kUserLead;
  out += '\n';
  for (std::size_t i = 0; i < snippets.size(); ++i) out += std::to_string(i + 1) + ". " + snippets[i] + '\n';
  out += kUserTail;
  out += '\n';
}

std::string first_sentence(const std::string& text) {
  const auto begin = text.find_first_not_of(" \t\r\n");
  if (begin == std::string::npos) return "";
  const auto stop = text.find('.', begin);
  std::string s = stop == std::string::npos ? text.substr(begin) : text.substr(begin, stop - begin + 1);
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.back()))) s.pop_back();
  return s;
}

}  // namespace

// ---- store and retrieval -------------------------------------------------

SnippetStore::SnippetStore(FlatIndex index, std::map<std::uint64_t, std::string> texts)
    : index_(std::move(index)), texts_(std::move(texts)) {
  if (texts_.size() != index_.size()) throw ContractError("SnippetStore: text count differs from the index size");
  for (std::uint64_t id : index_.ids())
    if (!texts_.count(id)) throw ContractError("SnippetStore: id " + std::to_string(id) + " has no text");
}

SnippetStore SnippetStore::build(const Model& model, const Dataset& data, std::span<const std::size_t> ids) {
  const Vocabulary vocab(data.config());
  std::map<std::uint64_t, std::string> texts;
  std::vector<std::uint64_t> keys;
  for (std::size_t id : ids) {
    texts.emplace(id, vocab.render(data.tokens(id)));
    keys.push_back(id);
  }
  return SnippetStore(FlatIndex(embed_texts(model, data, ids), std::move(keys)), std::move(texts));
}

const std::string& SnippetStore::text(std::uint64_t id) const {
  const auto it = texts_.find(id);
  if (it == texts_.end()) throw ContractError("SnippetStore: unknown id " + std::to_string(id));
  return it->second;
}

std::vector<SearchHit> retrieve_expanded(std::span<const double> image_embed, const SnippetStore& store,
                                         std::size_t k_final, std::size_t expansion) {
  if (k_final == 0 || expansion == 0) throw ContractError("retrieve_expanded: k_final and expansion must be positive");
  const std::size_t want = k_final * expansion;
  if (want > store.size())
    throw ContractError("retrieve_expanded: " + std::to_string(want) + " candidates requested from a store of " +
                        std::to_string(store.size()));
  return store.index().query(image_embed, want);
}

std::vector<SearchHit> cluster_select(const std::vector<SearchHit>& candidates, const SnippetStore& store,
                                      std::size_t k_final, std::uint64_t seed) {
  if (k_final == 0 || candidates.size() < k_final)
    throw ContractError("cluster_select: need at least k_final candidates");
  if (candidates.size() == k_final) return candidates;
  const std::size_t d = store.index().dim();
  Tensor x({candidates.size(), d});
  for (std::size_t i = 0; i < candidates.size(); ++i) {
    const auto e = store.embedding(candidates[i].id);
    std::copy(e.begin(), e.end(), x.ptr() + i * d);
  }
  bool degenerate = true;
  for (std::size_t i = 1; i < candidates.size() && degenerate; ++i)
    degenerate = std::equal(x.ptr(), x.ptr() + d, x.ptr() + i * d);
  if (degenerate) return {candidates.begin(), candidates.begin() + static_cast<std::ptrdiff_t>(k_final)};

  const KMeansResult km = kmeans(x, k_final, seed);
  std::set<std::size_t> chosen;
  for (std::size_t m = 0; m < k_final; ++m) {
    std::size_t best = candidates.size();
    double bd = 0.0;
    for (std::size_t i = 0; i < candidates.size(); ++i) {
      if (km.labels[i] != m) continue;
      const double dd = kernels::squared_distance(x.ptr() + i * d, km.centroids.ptr() + m * d, d);
      if (best == candidates.size() || dd < bd) {
        best = i;
        bd = dd;
      }
    }
    if (best < candidates.size()) chosen.insert(best);
  }
  // Clusters left empty by duplicate points: top up in rank order.
  for (std::size_t i = 0; chosen.size() < k_final; ++i) chosen.insert(i);
  std::vector<SearchHit> out;
  for (std::size_t i : chosen) out.push_back(candidates[i]);
  return out;
}

// ---- prompting -----------------------------------------------------------

Prompt assemble_prompt(const std::vector<std::string>& snippets, const std::vector<Exemplar>& exemplars) {
  if (snippets.empty()) throw ContractError("assemble_prompt: no snippets");
  if (exemplars.size() != 2) throw ContractError("assemble_prompt: exactly two exemplars are required");
  Prompt p{kRadiologistSystemPrompt, ""};
  for (std::size_t e = 0; e < exemplars.size(); ++e) {
    if (exemplars[e].snippets.empty()) throw ContractError("assemble_prompt: exemplar without snippets");
    p.user += "Example " + std::to_string(e + 1) + ":\n";
    append_block(p.user, exemplars[e].snippets);
    p.user += "Report: " + exemplars[e].report + "\n\n";
  }
  append_block(p.user, snippets);
  return p;
}

std::string MockClient::generate(const GenerationRequest& request) const {
  std::string out;
  for (const std::string& s : request.snippets) {
    const std::string f = first_sentence(s);
    if (f.empty()) continue;
    if (!out.empty()) out += ' ';
    out += f;
  }
  return out;
}

std::unique_ptr<GeneratorClient> make_client(const std::string& spec, std::chrono::milliseconds timeout) {
  if (spec == "mock") return std::make_unique<MockClient>();
  if (spec.rfind("cmd:", 0) == 0) {
    if (spec.size() == 4) throw ConfigError("generator: empty command after 'cmd:'");
    return std::make_unique<SubprocessClient>(spec.substr(4), timeout);
  }
  if (spec.rfind("http://", 0) == 0) return std::make_unique<HttpClient>(spec, timeout);
  throw ConfigError("generator must be 'mock', 'cmd:<command>' or an http:// URL, got '" + spec + "'");
}

// ---- scoring -------------------------------------------------------------

std::vector<std::string> tokenize(const std::string& text) {
  std::vector<std::string> out;
  std::istringstream in(text);
  std::string w;
  while (in >> w) {
    for (char& c : w) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
    out.push_back(w);
  }
  return out;
}

double bleu2(const std::string& candidate, const std::string& reference) {
  const auto c = tokenize(candidate), r = tokenize(reference);
  if (c.empty()) return 0.0;
  auto clipped = [&](std::size_t n) {
    std::map<std::vector<std::string>, std::size_t> ref_counts, cand_counts;
    for (std::size_t i = 0; i + n <= r.size(); ++i) ++ref_counts[{r.begin() + i, r.begin() + i + n}];
    for (std::size_t i = 0; i + n <= c.size(); ++i) ++cand_counts[{c.begin() + i, c.begin() + i + n}];
    std::size_t hit = 0;
    for (const auto& [gram, k] : cand_counts) {
      const auto it = ref_counts.find(gram);
      if (it != ref_counts.end()) hit += std::min(k, it->second);
    }
    const std::size_t total = c.size() + 1 > n ? c.size() + 1 - n : 0;
    return total == 0 ? 0.0 : static_cast<double>(hit) / static_cast<double>(total);
  };
  const double p1 = clipped(1), p2 = clipped(2);
  if (p1 == 0.0 || p2 == 0.0) return 0.0;
  const double cl = static_cast<double>(c.size()), rl = static_cast<double>(r.size());
  const double bp = cl < rl ? std::exp(1.0 - rl / cl) : 1.0;
  return bp * std::sqrt(p1 * p2);
}

double embed_similarity(const Model& model, const Vocabulary& vocab, std::size_t max_len,
                        const std::string& candidate, const std::string& reference) {
  if (tokenize(candidate).empty() || tokenize(reference).empty())
    throw ContractError("embed_similarity: both texts must be non-empty");
  IndexMatrix tok{2, max_len, std::vector<std::uint32_t>(2 * max_len, Vocabulary::kPad)};
  for (std::size_t r = 0; r < 2; ++r) {
    auto ids = vocab.parse(r == 0 ? candidate : reference);
    if (ids.empty()) return 0.0;
    ids.resize(std::min(ids.size(), max_len));
    std::copy(ids.begin(), ids.end(), tok.values.begin() + static_cast<std::ptrdiff_t>(r * max_len));
  }
  const Tensor e = model.encode_text(tok).value();
  const std::size_t d = e.dim(1);
  return std::clamp(kernels::dot(e.ptr(), e.ptr() + d, d), -1.0, 1.0);
}

// ---- pipeline ------------------------------------------------------------

void to_json(nlohmann::json& j, const RagRow& r) {
  j = nlohmann::json{{"id", r.id}, {"generated", r.generated}, {"reference", r.reference}, {"bleu2", r.bleu2},
                     {"embed_sim", r.embed_sim}};
}

std::vector<RagRow> run_rag(const Model& model, const Dataset& data, const SnippetStore& store,
                            const GeneratorClient& client, std::span<const std::size_t> query_ids,
                            const RagConfig& cfg) {
  if (store.size() < 3) throw ContractError("run_rag: the store needs at least three entries");
  const Vocabulary vocab(data.config());
  auto snippets_for = [&](std::span<const double> embed, std::optional<std::uint64_t> exclude) {
    std::vector<SearchHit> cand = retrieve_expanded(embed, store, cfg.k_final, cfg.expansion);
    if (exclude) {
      std::erase_if(cand, [&](const SearchHit& h) { return h.id == *exclude; });
      if (cand.size() < cfg.k_final) cand = retrieve_expanded(embed, store, cfg.k_final, cfg.expansion);
    }
    std::vector<std::string> out;
    for (const SearchHit& h : cluster_select(cand, store, cfg.k_final, cfg.seed)) out.push_back(store.text(h.id));
    return out;
  };

  std::mt19937_64 rng(cfg.seed);
  std::vector<std::uint64_t> pool = store.index().ids();
  std::shuffle(pool.begin(), pool.end(), rng);
  std::vector<Exemplar> exemplars;
  for (std::size_t e = 0; e < 2; ++e) {
    const std::size_t id = pool[e];
    const Tensor v = embed_images(model, data, std::vector<std::size_t>{id});
    exemplars.push_back({snippets_for(v.data(), id), store.text(id)});
  }

  const Tensor images = embed_images(model, data, query_ids);
  const std::size_t d = images.dim(1);
  std::vector<RagRow> rows(query_ids.size());
  parallel_for(query_ids.size(), [&](std::size_t q) {
    GenerationRequest req;
    req.snippets = snippets_for(std::span<const double>(images.ptr() + q * d, d), std::nullopt);
    req.prompt = assemble_prompt(req.snippets, exemplars);
    RagRow& row = rows[q];
    row.id = query_ids[q];
    row.reference = vocab.render(data.tokens(query_ids[q]));
    try {
      row.generated = client.generate(req);
    } catch (const TransportError& e) {
      throw TransportError("query " + std::to_string(row.id) + ": " + e.what());
    }
    row.bleu2 = bleu2(row.generated, row.reference);
    row.embed_sim = tokenize(row.generated).empty()
                        ? 0.0
                        : embed_similarity(model, vocab, data.config().max_len, row.generated, row.reference);
  });
  return rows;
}

}  // namespace eclip
