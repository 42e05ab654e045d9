// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "raptor/clustering.hpp"
#include "raptor/core.hpp"
#include "raptor/embedding.hpp"
#include "raptor/summarize.hpp"
#include "raptor/text.hpp"

namespace raptor {

constexpr int kMaxLayers = 5;
constexpr int kTopLayerTarget = 10;
constexpr int kSummaryBudget = 1000;

struct TreeNode {
  std::string id;
  int layer = 0;
  bool is_leaf = true;
  std::string text;
  int token_count = 0;
  Vec embedding;
  std::vector<std::string> children;  // sorted
  std::vector<std::string> parents;   // sorted
  // leaf provenance
  std::string doc_id;
  int position = 0;
};

/// One local clustering inside a layer's model set. `parent_ids[c]` is the
/// node (one layer up) formed from local cluster c; `cluster_members[c]`
/// holds positions into `member_ids`. Trivial fits (fewer than 3 members)
/// have no reducer/GMM and a single cluster.
struct LayerLocal {
  bool trivial = false;
  std::optional<ReducerModel> reducer;
  std::optional<GmmModel> gmm;
  std::vector<std::string> member_ids;
  std::vector<Vec> member_low;  // aligned with member_ids; empty when trivial
  std::vector<std::vector<int>> cluster_members;
  std::vector<std::string> parent_ids;
};

struct LayerModels {
  std::optional<ReducerModel> global_reducer;
  std::optional<GmmModel> global_model;
  std::vector<LayerLocal> locals;
};

enum class ClusteringMode { two_step, one_step };
enum class SummaryMode { generic, query_focused };

struct RaTree {
  std::vector<std::vector<std::string>> layers;  // layers[0] = leaves
  std::map<std::string, TreeNode> nodes;
  std::vector<LayerModels> layer_models;  // layer_models[i] clusters layer i into layer i+1
  // config snapshot
  int embed_dim = 0;
  std::uint64_t seed = 0;
  ClusteringMode clustering_mode = ClusteringMode::two_step;
  ChunkingConfig chunking;
  std::string embedder_name;
  int next_summary_ordinal = 0;

  bool empty() const { return nodes.empty(); }
  int height() const { return static_cast<int>(layers.size()); }
};

namespace detail {

inline void link(RaTree& tree, const std::string& parent, const std::string& child) {
  auto& p = tree.nodes.at(parent).children;
  auto& c = tree.nodes.at(child).parents;
  if (!std::binary_search(p.begin(), p.end(), child))
    p.insert(std::upper_bound(p.begin(), p.end(), child), child);
  if (!std::binary_search(c.begin(), c.end(), parent))
    c.insert(std::upper_bound(c.begin(), c.end(), parent), parent);
}

inline void unlink(RaTree& tree, const std::string& parent, const std::string& child) {
  auto& p = tree.nodes.at(parent).children;
  auto& c = tree.nodes.at(child).parents;
  p.erase(std::remove(p.begin(), p.end(), child), p.end());
  c.erase(std::remove(c.begin(), c.end(), parent), c.end());
}

// Children concatenated in layer order (construction/insertion order),
// separated by blank lines; the stable input for summarization.
inline std::string children_context(const RaTree& tree, const std::string& node_id) {
  const TreeNode& node = tree.nodes.at(node_id);
  std::vector<std::pair<int, const std::string*>> ordered;
  for (const auto& cid : node.children) {
    const TreeNode& child = tree.nodes.at(cid);
    const auto& layer = tree.layers[static_cast<size_t>(child.layer)];
    auto it = std::find(layer.begin(), layer.end(), cid);
    ordered.emplace_back(static_cast<int>(it - layer.begin()), &child.text);
  }
  std::sort(ordered.begin(), ordered.end(),
            [](const auto& a, const auto& b) { return a.first < b.first; });
  std::string out;
  for (const auto& [pos, text] : ordered) {
    if (!out.empty()) out += "\n\n";
    out += *text;
  }
  return out;
}

inline std::string summarize_members(const RaTree& tree, const std::string& node_id,
                                     Summarizer& summarizer, SummaryMode mode,
                                     const std::optional<std::string>& query) {
  SummaryRequest req;
  req.context = children_context(tree, node_id);
  req.max_tokens = kSummaryBudget;
  if (mode == SummaryMode::query_focused) req.question = query;
  return summarizer.summarize(req);
}

}  // namespace detail

/// Build a recursive-abstractive tree: leaves are the chunks; each upper
/// layer holds one summary node per cluster of the layer below. Stops once
/// the top layer has at most 10 nodes or 5 layers exist.
inline RaTree build_tree(const std::vector<Chunk>& chunks, Embedder& embedder,
                         Summarizer& summarizer,
                         ClusteringMode clustering_mode = ClusteringMode::two_step,
                         SummaryMode summary_mode = SummaryMode::generic,
                         const std::optional<std::string>& query = std::nullopt,
                         std::uint64_t seed = 0) {
  if (chunks.empty()) throw std::invalid_argument("build_tree: no chunks");
  if ((summary_mode == SummaryMode::query_focused) != query.has_value())
    throw std::invalid_argument("build_tree: query must be present iff query_focused");

  RaTree tree;
  tree.embed_dim = embedder.dim();
  tree.seed = seed;
  tree.clustering_mode = clustering_mode;

  std::vector<std::string> texts;
  texts.reserve(chunks.size());
  for (const auto& c : chunks) texts.push_back(c.text);
  auto embeddings = embedder.embed_batch(texts);

  tree.layers.emplace_back();
  for (size_t i = 0; i < chunks.size(); ++i) {
    TreeNode node;
    node.id = chunks[i].id;
    node.layer = 0;
    node.is_leaf = true;
    node.text = chunks[i].text;
    node.token_count = chunks[i].token_count;
    node.embedding = embeddings[i];
    node.doc_id = chunks[i].doc_id;
    node.position = chunks[i].position;
    tree.layers[0].push_back(node.id);
    tree.nodes.emplace(node.id, std::move(node));
  }

  while (static_cast<int>(tree.layers.back().size()) > kTopLayerTarget &&
         tree.height() < kMaxLayers) {
    const int layer = tree.height() - 1;
    const std::vector<std::string> top_ids = tree.layers.back();
    std::vector<Vec> top_emb;
    top_emb.reserve(top_ids.size());
    for (const auto& id : top_ids) top_emb.push_back(tree.nodes.at(id).embedding);

    std::uint64_t layer_seed = derive_seed(seed, 0x4c + static_cast<std::uint64_t>(layer));
    ClusteringResult clustering = (clustering_mode == ClusteringMode::two_step)
                                      ? cluster_two_step(top_emb, layer_seed)
                                      : cluster_one_step(top_emb, layer_seed);

    LayerModels models;
    models.global_reducer = clustering.global_reducer;
    models.global_model = clustering.global_model;
    for (const auto& lf : clustering.locals) {
      LayerLocal ll;
      ll.trivial = lf.trivial;
      ll.reducer = lf.reducer;
      ll.gmm = lf.model;
      for (int idx : lf.member_idx) ll.member_ids.push_back(top_ids[static_cast<size_t>(idx)]);
      ll.member_low = lf.member_low;
      ll.cluster_members = lf.cluster_members;
      ll.parent_ids.resize(lf.cluster_members.size());
      models.locals.push_back(std::move(ll));
    }

    tree.layers.emplace_back();
    for (size_t c = 0; c < clustering.clusters.size(); ++c) {
      auto [local_idx, local_cluster] = clustering.cluster_origin[c];
      TreeNode node;
      node.id = "s" + std::to_string(layer + 1) + "_" +
                std::to_string(tree.next_summary_ordinal++);
      node.layer = layer + 1;
      node.is_leaf = false;
      tree.layers.back().push_back(node.id);
      tree.nodes.emplace(node.id, node);
      for (int member : clustering.clusters[c])
        detail::link(tree, node.id, top_ids[static_cast<size_t>(member)]);

      std::string summary =
          detail::summarize_members(tree, node.id, summarizer, summary_mode, query);
      TreeNode& stored = tree.nodes.at(node.id);
      stored.text = summary;
      stored.token_count = count_tokens(summary);
      stored.embedding = embedder.embed(summary);
      models.locals[static_cast<size_t>(local_idx)]
          .parent_ids[static_cast<size_t>(local_cluster)] = node.id;
    }
    tree.layer_models.push_back(std::move(models));
  }
  return tree;
}

struct QueryHit {
  std::string node_id;
  std::string text;
  double similarity;
  int token_count;
};

/// Collapsed-tree retrieval: rank every node (leaves and summaries) by
/// cosine similarity, emit in descending order, stopping before the node
/// that would exceed the cumulative token threshold, and after k nodes.
inline std::vector<QueryHit> collapsed_query(const RaTree& tree, const Vec& query_embedding,
                                             int k, long token_threshold) {
  if (tree.empty()) throw std::invalid_argument("collapsed_query: empty tree");
  if (k < 1 || token_threshold < 1)
    throw std::invalid_argument("collapsed_query: k and token_threshold must be >= 1");

  std::vector<QueryHit> ranked;
  ranked.reserve(tree.nodes.size());
  for (const auto& [id, node] : tree.nodes)
    ranked.push_back({id, node.text, cosine_similarity(query_embedding, node.embedding),
                      node.token_count});
  std::sort(ranked.begin(), ranked.end(), [](const QueryHit& a, const QueryHit& b) {
    if (a.similarity != b.similarity) return a.similarity > b.similarity;
    return a.node_id < b.node_id;
  });

  std::vector<QueryHit> out;
  long used = 0;
  for (const auto& hit : ranked) {
    if (static_cast<int>(out.size()) >= k) break;
    if (used + hit.token_count > token_threshold) break;
    used += hit.token_count;
    out.push_back(hit);
  }
  return out;
}

struct TreeStats {
  size_t leaf_count = 0;
  size_t internal_count = 0;
  std::vector<size_t> layer_sizes;
  double mean_cluster_size = 0, std_cluster_size = 0;
  double mean_parents_per_leaf = 0, std_parents_per_leaf = 0;
};

inline TreeStats tree_stats(const RaTree& tree) {
  TreeStats st;
  std::vector<double> cluster_sizes, parents;
  for (const auto& layer : tree.layers) st.layer_sizes.push_back(layer.size());
  for (const auto& [id, node] : tree.nodes) {
    if (node.is_leaf) {
      ++st.leaf_count;
      if (tree.height() > 1) parents.push_back(static_cast<double>(node.parents.size()));
    } else {
      ++st.internal_count;
      cluster_sizes.push_back(static_cast<double>(node.children.size()));
    }
  }
  auto mean_std = [](const std::vector<double>& xs, double& mean, double& sd) {
    if (xs.empty()) return;
    double s = 0;
    for (double x : xs) s += x;
    mean = s / static_cast<double>(xs.size());
    double v = 0;
    for (double x : xs) v += (x - mean) * (x - mean);
    sd = std::sqrt(v / static_cast<double>(xs.size()));
  };
  mean_std(cluster_sizes, st.mean_cluster_size, st.std_cluster_size);
  mean_std(parents, st.mean_parents_per_leaf, st.std_parents_per_leaf);
  return st;
}

}  // namespace raptor
