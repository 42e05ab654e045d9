// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <limits>
#include <optional>
#include <string>
#include <vector>

#include "raptor/tree.hpp"

namespace raptor {

struct RetrievedDoc {
  std::string id;
  std::string text;
  double similarity = 0;
};

/// Retrieval source for the post-retrieval summarization pipeline. k is
/// clamped to the corpus size; no token limit applies at this stage.
class Retriever {
 public:
  virtual ~Retriever() = default;
  virtual std::vector<RetrievedDoc> retrieve(const Vec& query_embedding, int k) = 0;
};

/// Top-k leaves by cosine similarity (flat dense retrieval).
class LeafRetriever final : public Retriever {
 public:
  explicit LeafRetriever(const RaTree& tree) : tree_(tree) {}

  std::vector<RetrievedDoc> retrieve(const Vec& query_embedding, int k) override {
    std::vector<RetrievedDoc> ranked;
    for (const auto& id : tree_.layers.at(0)) {
      const TreeNode& node = tree_.nodes.at(id);
      ranked.push_back({id, node.text, cosine_similarity(query_embedding, node.embedding)});
    }
    std::sort(ranked.begin(), ranked.end(), [](const RetrievedDoc& a, const RetrievedDoc& b) {
      if (a.similarity != b.similarity) return a.similarity > b.similarity;
      return a.id < b.id;
    });
    if (static_cast<int>(ranked.size()) > k) ranked.resize(static_cast<size_t>(k));
    return ranked;
  }

 private:
  const RaTree& tree_;
};

/// Collapsed-tree retrieval over all nodes, with the token limit disabled.
class CollapsedRetriever final : public Retriever {
 public:
  explicit CollapsedRetriever(const RaTree& tree) : tree_(tree) {}

  std::vector<RetrievedDoc> retrieve(const Vec& query_embedding, int k) override {
    auto hits = collapsed_query(tree_, query_embedding, k, std::numeric_limits<long>::max());
    std::vector<RetrievedDoc> out;
    out.reserve(hits.size());
    for (const auto& h : hits) out.push_back({h.node_id, h.text, h.similarity});
    return out;
  }

 private:
  const RaTree& tree_;
};

struct PostQfrapConfig {
  int k0 = 20;            // documents retrieved before summarization
  int token_budget = 2000;  // final summary cap
  bool expand_query = false;
  std::uint64_t seed = 0;
};

struct PostQfrapResult {
  std::string summary;
  std::string effective_query;
  std::vector<RetrievedDoc> retrieved;
  int summary_calls = 0;  // clusters + 1 (cluster summaries plus the final pass)
  int cluster_count = 0;
};

/// Repeat the query 5 times and append model-extracted keywords from the
/// top 3 retrieved documents; falls back to plain repetition when the
/// summarizer yields no keywords.
inline std::string expand_query(const std::string& query,
                                const std::vector<RetrievedDoc>& docs, Summarizer& summarizer) {
  std::string repeated;
  for (int i = 0; i < 5; ++i) {
    if (!repeated.empty()) repeated += ' ';
    repeated += query;
  }
  std::string context;
  for (size_t i = 0; i < docs.size() && i < 3; ++i) {
    if (!context.empty()) context += "\n\n";
    context += docs[i].text;
  }
  std::string kw = context.empty() ? "" : summarizer.keywords(context, query);
  size_t a = kw.find_first_not_of(" \t\n\r");
  if (a == std::string::npos) return repeated;
  size_t b = kw.find_last_not_of(" \t\n\r");
  return repeated + ' ' + kw.substr(a, b - a + 1);
}

/// Post-retrieval query-focused summarization: retrieve k0 documents, build
/// a one-layer query-focused tree over them, then fuse the top layer into a
/// single summary within the token budget.
inline PostQfrapResult run_postqfrap(Retriever& retriever, Embedder& embedder,
                                     Summarizer& summarizer, const std::string& query,
                                     const PostQfrapConfig& cfg = {}) {
  if (query.empty()) throw std::invalid_argument("run_postqfrap: empty query");
  if (cfg.k0 < 1 || cfg.token_budget < 1)
    throw std::invalid_argument("run_postqfrap: k0 and token_budget must be >= 1");

  PostQfrapResult res;
  res.effective_query = query;
  res.retrieved = retriever.retrieve(embedder.embed(query), cfg.k0);
  if (res.retrieved.empty()) throw std::invalid_argument("run_postqfrap: retrieval came back empty");

  if (cfg.expand_query) {
    res.effective_query = expand_query(query, res.retrieved, summarizer);
    res.retrieved = retriever.retrieve(embedder.embed(res.effective_query), cfg.k0);
  }

  const int calls_before = summarizer.calls();

  if (res.retrieved.size() == 1) {
    // nothing to cluster; a single query-focused pass
    SummaryRequest req;
    req.context = res.retrieved[0].text;
    req.question = query;
    req.max_tokens = cfg.token_budget;
    res.summary = summarizer.summarize(req);
    res.cluster_count = 0;
    res.summary_calls = summarizer.calls() - calls_before;
    return res;
  }

  // one clustering level over the retrieved documents
  std::vector<Vec> emb;
  emb.reserve(res.retrieved.size());
  for (const auto& d : res.retrieved) emb.push_back(embedder.embed(d.text));
  ClusteringResult clustering = cluster_one_step(emb, derive_seed(cfg.seed, 0x9f));
  res.cluster_count = static_cast<int>(clustering.clusters.size());

  std::vector<std::string> cluster_summaries;
  for (const auto& members : clustering.clusters) {
    std::string context;
    for (int idx : members) {
      if (!context.empty()) context += "\n\n";
      context += res.retrieved[static_cast<size_t>(idx)].text;
    }
    SummaryRequest req;
    req.context = context;
    req.question = query;
    req.max_tokens = kSummaryBudget;
    cluster_summaries.push_back(summarizer.summarize(req));
  }

  std::string fused;
  for (const auto& s : cluster_summaries) {
    if (!fused.empty()) fused += "\n\n";
    fused += s;
  }
  SummaryRequest final_req;
  final_req.context = fused;
  final_req.question = query;
  final_req.max_tokens = cfg.token_budget;
  res.summary = summarizer.summarize(final_req);
  res.summary_calls = summarizer.calls() - calls_before;
  return res;
}

}  // namespace raptor
