// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <chrono>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "raptor/tree.hpp"

namespace raptor {

enum class UpdateMode { adaptive, greedy };

struct UpdateReport {
  std::vector<std::string> new_node_ids;
  std::map<int, std::vector<int>> changed_cluster_ids;  // per layer
  std::vector<std::string> resummarized_node_ids;
  int summary_call_count = 0;
  int new_layers_created = 0;
  bool split_attempted = false;
};

namespace detail {

inline Eigen::VectorXd to_evec(const Vec& v) {
  return Eigen::Map<const Eigen::VectorXd>(v.data(), static_cast<long>(v.size()));
}

// Single-update engine: applies structural changes immediately and defers
// all summary regeneration to finalize(), so each affected node is
// resummarized at most once per update.
class UpdateEngine {
 public:
  UpdateEngine(RaTree& tree, Embedder& embedder, Summarizer& summarizer,
               const AdaptiveConfig& cfg, UpdateMode mode, bool defer_summaries = false)
      : tree_(tree),
        embedder_(embedder),
        summarizer_(summarizer),
        cfg_(cfg),
        mode_(mode),
        defer_(defer_summaries) {}

  UpdateReport report;
  std::set<std::string> dirty;

  void insert_at_layer(int layer, const std::string& node_id, const Vec& emb) {
    if (layer >= static_cast<int>(tree_.layer_models.size())) return;  // top layer
    LayerModels& lm = tree_.layer_models[static_cast<size_t>(layer)];

    size_t local_idx = 0;
    if (lm.global_model && lm.global_reducer) {
      Vec vg = knn_transform(*lm.global_reducer, emb);
      Eigen::VectorXd gamma = responsibilities(*lm.global_model, to_evec(vg));
      int g = 0;
      gamma.maxCoeff(&g);
      local_idx = static_cast<size_t>(g);
    }
    LayerLocal& local = lm.locals.at(local_idx);

    if (local.trivial || !local.gmm) {
      int pos = static_cast<int>(local.member_ids.size());
      local.member_ids.push_back(node_id);
      local.cluster_members.at(0).push_back(pos);
      attach(local.parent_ids.at(0), node_id, layer, 0, /*membership_changed=*/true);
      return;
    }

    Vec vl = knn_transform(*local.reducer, emb);
    if (mode_ == UpdateMode::greedy) {
      Eigen::VectorXd gamma = responsibilities(*local.gmm, to_evec(vl));
      int j = 0;
      gamma.maxCoeff(&j);
      int pos = static_cast<int>(local.member_ids.size());
      local.member_ids.push_back(node_id);
      local.member_low.push_back(vl);
      local.cluster_members.at(static_cast<size_t>(j)).push_back(pos);
      attach(local.parent_ids.at(static_cast<size_t>(j)), node_id, layer, j, true);
      return;
    }

    // adaptive: run the online clustering step on the local model
    Eigen::MatrixXd points(local.member_low.size(), local.member_low[0].size());
    for (size_t i = 0; i < local.member_low.size(); ++i)
      points.row(static_cast<long>(i)) = to_evec(local.member_low[i]).transpose();

    std::vector<std::vector<int>> old_assignments(local.member_ids.size());
    for (size_t c = 0; c < local.cluster_members.size(); ++c)
      for (int pos : local.cluster_members[c])
        old_assignments[static_cast<size_t>(pos)].push_back(static_cast<int>(c));

    UpdateOutcome outcome = adaptive_cluster_update(
        *local.gmm, points, old_assignments, to_evec(vl), cfg_,
        derive_seed(tree_.seed, fnv1a64(node_id) + static_cast<std::uint64_t>(layer)));
    report.split_attempted = report.split_attempted || outcome.split_attempted;

    local.gmm = outcome.model;
    local.member_ids.push_back(node_id);
    local.member_low.push_back(vl);
    apply_memberships(layer, local, outcome.old_to_new, outcome.memberships,
                      outcome.changed_clusters, outcome.created_clusters, emb);
  }

  void remove_node(int layer, const std::string& node_id, bool recluster) {
    TreeNode node = tree_.nodes.at(node_id);

    if (layer < static_cast<int>(tree_.layer_models.size())) {
      LayerModels& lm = tree_.layer_models[static_cast<size_t>(layer)];
      for (LayerLocal& local : lm.locals) {
        auto it = std::find(local.member_ids.begin(), local.member_ids.end(), node_id);
        if (it == local.member_ids.end()) continue;
        int pos = static_cast<int>(it - local.member_ids.begin());
        detach_member(layer, local, pos, recluster, node.embedding);
      }
    }

    // normally childless at this point; drop any stragglers
    for (const auto& child : std::vector<std::string>(node.children))
      if (tree_.nodes.count(child)) unlink(tree_, node_id, child);

    auto& layer_ids = tree_.layers.at(static_cast<size_t>(layer));
    layer_ids.erase(std::remove(layer_ids.begin(), layer_ids.end(), node_id), layer_ids.end());
    tree_.nodes.erase(node_id);
    dirty.erase(node_id);

    // drop empty top layers and their models
    while (!tree_.layers.empty() && tree_.layers.back().empty()) {
      tree_.layers.pop_back();
      if (!tree_.layer_models.empty()) tree_.layer_models.pop_back();
    }
  }

  /// Regenerate summaries/embeddings for all dirty nodes plus their
  /// ancestors, bottom-up. When `deferred` is given, the set is handed to
  /// the caller instead (batched ingestion).
  void finalize(std::set<std::string>* deferred = nullptr) {
    std::set<std::string> affected;
    for (const auto& id : dirty) collect_ancestors(id, affected);
    if (deferred) {
      deferred->insert(affected.begin(), affected.end());
      return;
    }
    auto count = resummarize_set(tree_, affected, embedder_, summarizer_,
                                 &report.resummarized_node_ids);
    report.summary_call_count += count;
  }

  static int resummarize_set(RaTree& tree, const std::set<std::string>& affected,
                             Embedder& embedder, Summarizer& summarizer,
                             std::vector<std::string>* out_ids) {
    std::vector<std::string> ordered;
    for (const auto& id : affected)
      if (tree.nodes.count(id)) ordered.push_back(id);
    std::sort(ordered.begin(), ordered.end(), [&](const std::string& a, const std::string& b) {
      return tree.nodes.at(a).layer < tree.nodes.at(b).layer;
    });
    int count = 0;
    for (const auto& id : ordered) {
      TreeNode& node = tree.nodes.at(id);
      if (node.is_leaf || node.children.empty()) continue;
      SummaryRequest req;
      req.context = children_context(tree, id);
      req.max_tokens = kSummaryBudget;
      node.text = summarizer.summarize(req);
      node.token_count = count_tokens(node.text);
      node.embedding = embedder.embed(node.text);
      if (out_ids) out_ids->push_back(id);
      ++count;
    }
    return count;
  }

 private:
  RaTree& tree_;
  Embedder& embedder_;
  Summarizer& summarizer_;
  AdaptiveConfig cfg_;
  UpdateMode mode_;
  bool defer_ = false;

  void collect_ancestors(const std::string& id, std::set<std::string>& out) {
    if (!tree_.nodes.count(id) || out.count(id)) return;
    out.insert(id);
    for (const auto& p : tree_.nodes.at(id).parents) collect_ancestors(p, out);
  }

  void attach(const std::string& parent_id, const std::string& node_id, int layer, int cluster,
              bool membership_changed) {
    link(tree_, parent_id, node_id);
    if (membership_changed) {
      dirty.insert(parent_id);
      report.changed_cluster_ids[layer].push_back(cluster);
    }
  }

  std::string create_summary_node(int layer_above, const std::vector<std::string>& children,
                                  Vec* out_embedding) {
    TreeNode node;
    node.id = "s" + std::to_string(layer_above) + "_" +
              std::to_string(tree_.next_summary_ordinal++);
    node.layer = layer_above;
    node.is_leaf = false;
    tree_.layers.at(static_cast<size_t>(layer_above)).push_back(node.id);
    tree_.nodes.emplace(node.id, node);
    for (const auto& c : children) link(tree_, node.id, c);

    TreeNode& stored = tree_.nodes.at(node.id);
    if (defer_) {
      // batched ingestion: the final pass writes the real summary; route on
      // the embedding of the raw member context for now
      stored.embedding = embedder_.embed(children_context(tree_, node.id));
      dirty.insert(node.id);
    } else {
      SummaryRequest req;
      req.context = children_context(tree_, node.id);
      req.max_tokens = kSummaryBudget;
      stored.text = summarizer_.summarize(req);
      stored.token_count = count_tokens(stored.text);
      stored.embedding = embedder_.embed(stored.text);
      report.summary_call_count += 1;
      report.resummarized_node_ids.push_back(node.id);
    }
    report.new_node_ids.push_back(node.id);
    if (out_embedding) *out_embedding = stored.embedding;
    return node.id;
  }

  // Rewire parents/children after a local model changed shape. `old_to_new`
  // maps old cluster ids into the new model; unmatched old clusters dissolve
  // (their nodes are removed), unmatched new clusters become fresh nodes and
  // recurse the insertion one layer up.
  void apply_memberships(int layer, LayerLocal& local, const std::vector<int>& old_to_new,
                         const std::vector<std::vector<int>>& memberships,
                         const std::vector<int>& changed, const std::vector<int>& created,
                         const Vec& /*inserted_emb*/) {
    const int new_k = local.gmm->K;
    std::vector<std::string> new_parents(static_cast<size_t>(new_k));
    std::vector<std::string> dissolved;
    for (size_t ok = 0; ok < old_to_new.size(); ++ok) {
      int nk = old_to_new[ok];
      if (nk >= 0)
        new_parents[static_cast<size_t>(nk)] = local.parent_ids[ok];
      else
        dissolved.push_back(local.parent_ids[ok]);
    }

    local.cluster_members.assign(static_cast<size_t>(new_k), {});
    for (size_t pos = 0; pos < memberships.size(); ++pos)
      for (int c : memberships[pos])
        local.cluster_members[static_cast<size_t>(c)].push_back(static_cast<int>(pos));
    local.parent_ids = new_parents;

    for (int c : changed) report.changed_cluster_ids[layer].push_back(c);
    for (int c : created) report.changed_cluster_ids[layer].push_back(c);

    // sync children of surviving parents
    std::set<int> created_set(created.begin(), created.end());
    for (int c = 0; c < new_k; ++c) {
      if (created_set.count(c)) continue;
      const std::string& pid = local.parent_ids[static_cast<size_t>(c)];
      if (pid.empty() || !tree_.nodes.count(pid)) continue;
      std::set<std::string> desired;
      for (int pos : local.cluster_members[static_cast<size_t>(c)])
        desired.insert(local.member_ids[static_cast<size_t>(pos)]);
      TreeNode& parent = tree_.nodes.at(pid);
      std::vector<std::string> current = parent.children;
      bool touched = false;
      for (const auto& child : current)
        if (!desired.count(child)) {
          unlink(tree_, pid, child);
          touched = true;
        }
      for (const auto& child : desired)
        if (!std::binary_search(parent.children.begin(), parent.children.end(), child)) {
          link(tree_, pid, child);
          touched = true;
        }
      if (touched) dirty.insert(pid);
    }

    // fresh nodes for created clusters, then recurse upward
    for (int c : created) {
      std::vector<std::string> children;
      for (int pos : local.cluster_members[static_cast<size_t>(c)])
        children.push_back(local.member_ids[static_cast<size_t>(pos)]);
      Vec emb;
      std::string nid = create_summary_node(layer + 1, children, &emb);
      local.parent_ids[static_cast<size_t>(c)] = nid;
      insert_at_layer(layer + 1, nid, emb);
    }

    for (const auto& pid : dissolved) {
      if (!tree_.nodes.count(pid)) continue;
      // children were already rewired above; remove the node itself
      TreeNode& p = tree_.nodes.at(pid);
      for (const auto& child : std::vector<std::string>(p.children)) unlink(tree_, pid, child);
      for (const auto& gp : std::vector<std::string>(p.parents)) dirty.insert(gp);
      remove_node(layer + 1, pid, false);
    }
  }

  // Remove one member (by position) from a local fit, decrementing the
  // mixture statistics by the point's responsibility under the current
  // parameters.
  void detach_member(int layer, LayerLocal& local, int pos, bool recluster,
                     const Vec& /*emb*/) {
    const std::string node_id = local.member_ids[static_cast<size_t>(pos)];

    if (!local.trivial && local.gmm && !local.member_low.empty()) {
      GmmModel& m = *local.gmm;
      Eigen::VectorXd x = to_evec(local.member_low[static_cast<size_t>(pos)]);
      Eigen::VectorXd gamma = responsibilities(m, x);
      m.n = std::max(1.0, m.n - 1.0);
      for (int k = 0; k < m.K; ++k) {
        m.suff_s0(k) = std::max(1e-12, m.suff_s0(k) - gamma(k));
        m.suff_s1[static_cast<size_t>(k)] -= gamma(k) * x;
        m.suff_s2[static_cast<size_t>(k)] -= gamma(k) * (x * x.transpose());
        m.weights(k) = m.suff_s0(k) / m.n;
        if (m.suff_s0(k) > 1e-9) {
          m.means[static_cast<size_t>(k)] = m.suff_s1[static_cast<size_t>(k)] / m.suff_s0(k);
          Eigen::MatrixXd cov = m.suff_s2[static_cast<size_t>(k)] / m.suff_s0(k) -
                                m.means[static_cast<size_t>(k)] *
                                    m.means[static_cast<size_t>(k)].transpose();
          cov = 0.5 * (cov + cov.transpose());
          cov += m.reg_eps * Eigen::MatrixXd::Identity(m.d, m.d);
          // keep the ridge effective even if the decrement went degenerate
          Eigen::LLT<Eigen::MatrixXd> llt(cov);
          if (llt.info() == Eigen::Success) m.covs[static_cast<size_t>(k)] = cov;
        }
      }
    }

    // membership bookkeeping
    std::vector<std::string> childless;
    for (size_t c = 0; c < local.cluster_members.size(); ++c) {
      auto& members = local.cluster_members[c];
      bool had = std::find(members.begin(), members.end(), pos) != members.end();
      members.erase(std::remove(members.begin(), members.end(), pos), members.end());
      for (int& p : members)
        if (p > pos) --p;
      if (!had) continue;
      const std::string& pid = local.parent_ids[c];
      if (!tree_.nodes.count(pid)) continue;
      unlink(tree_, pid, node_id);
      if (tree_.nodes.at(pid).children.empty())
        childless.push_back(pid);
      else
        dirty.insert(pid);
    }
    local.member_ids.erase(local.member_ids.begin() + pos);
    if (!local.member_low.empty()) local.member_low.erase(local.member_low.begin() + pos);

    if (recluster && !local.trivial && local.gmm && local.member_ids.size() >= 2) {
      refit_local(layer, local);
    }

    for (const auto& pid : childless) {
      if (!tree_.nodes.count(pid)) continue;  // a refit may have dissolved it already
      for (const auto& gp : std::vector<std::string>(tree_.nodes.at(pid).parents))
        dirty.insert(gp);
      remove_node(layer + 1, pid, false);
    }
  }

  // Deletion-triggered refit: scan K down to max(1, K-2) by BIC and remap
  // clusters onto the surviving parent nodes by member overlap.
  void refit_local(int layer, LayerLocal& local) {
    Eigen::MatrixXd points(local.member_low.size(), local.member_low[0].size());
    for (size_t i = 0; i < local.member_low.size(); ++i)
      points.row(static_cast<long>(i)) = to_evec(local.member_low[i]).transpose();

    int old_k = local.gmm->K;
    GmmModel refit = fit_best_k(points, std::max(1, old_k - 2), old_k,
                                derive_seed(tree_.seed, 0xde1 + static_cast<std::uint64_t>(layer)));
    auto memberships = soft_memberships(refit, points, cfg_.assign_threshold);

    // greedy overlap matching, as in the adaptive full-EM branch
    std::vector<std::vector<int>> old_members(static_cast<size_t>(old_k));
    for (size_t c = 0; c < local.cluster_members.size(); ++c)
      old_members[c] = local.cluster_members[c];
    std::vector<std::vector<int>> new_members(static_cast<size_t>(refit.K));
    for (size_t i = 0; i < memberships.size(); ++i)
      for (int c : memberships[i]) new_members[static_cast<size_t>(c)].push_back(static_cast<int>(i));

    std::vector<int> old_to_new(static_cast<size_t>(old_k), -1);
    std::vector<int> new_to_old(static_cast<size_t>(refit.K), -1);
    while (true) {
      int bo = -1, bn = -1, bov = 0;
      for (int ok = 0; ok < old_k; ++ok) {
        if (old_to_new[static_cast<size_t>(ok)] >= 0) continue;
        for (int nk = 0; nk < refit.K; ++nk) {
          if (new_to_old[static_cast<size_t>(nk)] >= 0) continue;
          int ov = 0;
          for (int i : new_members[static_cast<size_t>(nk)])
            if (std::find(old_members[static_cast<size_t>(ok)].begin(),
                          old_members[static_cast<size_t>(ok)].end(),
                          i) != old_members[static_cast<size_t>(ok)].end())
              ++ov;
          if (ov > bov) {
            bov = ov;
            bo = ok;
            bn = nk;
          }
        }
      }
      if (bo < 0) break;
      old_to_new[static_cast<size_t>(bo)] = bn;
      new_to_old[static_cast<size_t>(bn)] = bo;
    }

    std::vector<int> changed, created;
    for (int nk = 0; nk < refit.K; ++nk) {
      if (new_to_old[static_cast<size_t>(nk)] < 0)
        created.push_back(nk);
      else
        changed.push_back(nk);
    }
    local.gmm = refit;
    apply_memberships(layer, local, old_to_new, memberships, changed, created, {});
  }
};

}  // namespace detail

/// Insert one chunk into an existing tree (Alg. 4). `deferred_dirty`, when
/// given, collects nodes needing resummarization instead of regenerating
/// them immediately (used by batched ingestion benchmarks).
inline UpdateReport add_document(RaTree& tree, const Chunk& chunk, Embedder& embedder,
                                 Summarizer& summarizer, const AdaptiveConfig& cfg,
                                 UpdateMode mode = UpdateMode::adaptive,
                                 std::set<std::string>* deferred_dirty = nullptr) {
  if (chunk.token_count > 300)
    throw std::invalid_argument("add_document: chunk exceeds 300 tokens");
  if (tree.height() > 1 &&
      tree.layer_models.size() != static_cast<size_t>(tree.height() - 1))
    throw std::invalid_argument("add_document: tree lacks retained layer models");
  if (tree.nodes.count(chunk.id))
    throw std::invalid_argument("add_document: node id already present");

  detail::UpdateEngine engine(tree, embedder, summarizer, cfg, mode,
                              deferred_dirty != nullptr);

  TreeNode leaf;
  leaf.id = chunk.id;
  leaf.layer = 0;
  leaf.is_leaf = true;
  leaf.text = chunk.text;
  leaf.token_count = chunk.token_count;
  leaf.embedding = embedder.embed(chunk.text);
  leaf.doc_id = chunk.doc_id;
  leaf.position = chunk.position;
  if (tree.layers.empty()) tree.layers.emplace_back();
  tree.layers[0].push_back(leaf.id);
  Vec emb = leaf.embedding;
  tree.nodes.emplace(leaf.id, std::move(leaf));
  engine.report.new_node_ids.push_back(chunk.id);

  engine.insert_at_layer(0, chunk.id, emb);
  engine.finalize(deferred_dirty);
  return engine.report;
}

/// Remove one leaf, resummarizing affected ancestors; childless parents are
/// deleted and treated as removals one layer up.
inline UpdateReport remove_document(RaTree& tree, const std::string& chunk_id,
                                    Embedder& embedder, Summarizer& summarizer,
                                    const AdaptiveConfig& cfg, bool recluster = false,
                                    std::set<std::string>* deferred_dirty = nullptr) {
  auto it = tree.nodes.find(chunk_id);
  if (it == tree.nodes.end() || !it->second.is_leaf)
    throw std::invalid_argument("remove_document: unknown leaf id " + chunk_id);

  detail::UpdateEngine engine(tree, embedder, summarizer, cfg, UpdateMode::adaptive,
                              deferred_dirty != nullptr);
  engine.remove_node(0, chunk_id, recluster);
  engine.finalize(deferred_dirty);
  return engine.report;
}

/// Regenerate a deferred dirty set bottom-up. With `include_ancestors` the
/// whole ancestor closure is refreshed; without it only the listed nodes
/// are, leaving untouched ancestors slightly stale (the usual cost/freshness
/// tradeoff of batched incremental maintenance).
inline int resummarize_nodes(RaTree& tree, const std::set<std::string>& ids, Embedder& embedder,
                             Summarizer& summarizer, bool include_ancestors = true) {
  std::set<std::string> affected;
  for (const auto& id : ids) {
    if (!tree.nodes.count(id)) continue;
    if (!include_ancestors) {
      affected.insert(id);
      continue;
    }
    std::vector<std::string> stack = {id};
    while (!stack.empty()) {
      std::string cur = stack.back();
      stack.pop_back();
      if (!tree.nodes.count(cur) || affected.count(cur)) continue;
      affected.insert(cur);
      for (const auto& p : tree.nodes.at(cur).parents) stack.push_back(p);
    }
  }
  return detail::UpdateEngine::resummarize_set(tree, affected, embedder, summarizer, nullptr);
}

struct SplitIngestResult {
  RaTree tree_adrap;
  int full_rebuild_calls = 0;
  int adrap_calls = 0;
  int build_initial_calls = 0;
  double adrap_seconds = 0;
  double rebuild_seconds = 0;
};

/// The 70/30 protocol: build a tree on the first fraction of the chunks,
/// stream the rest through add_document (summary regeneration batched at
/// the end), and compare summary-call counts against one full build on the
/// complete corpus.
inline SplitIngestResult simulate_split_ingest(const std::vector<Chunk>& chunks, double fraction,
                                               const AdaptiveConfig& cfg, std::uint64_t seed,
                                               Embedder& embedder, Summarizer& summarizer) {
  if (chunks.size() < 2) throw std::invalid_argument("simulate_split_ingest: corpus too small");
  size_t n0 = static_cast<size_t>(std::ceil(fraction * static_cast<double>(chunks.size())));
  n0 = std::min(std::max<size_t>(n0, 1), chunks.size());

  SplitIngestResult res;
  std::vector<Chunk> initial(chunks.begin(), chunks.begin() + static_cast<long>(n0));

  int calls0 = summarizer.calls();
  res.tree_adrap = build_tree(initial, embedder, summarizer, ClusteringMode::two_step,
                              SummaryMode::generic, std::nullopt, seed);
  res.build_initial_calls = summarizer.calls() - calls0;

  auto t0 = std::chrono::steady_clock::now();
  int calls1 = summarizer.calls();
  std::set<std::string> deferred;
  for (size_t i = n0; i < chunks.size(); ++i)
    add_document(res.tree_adrap, chunks[i], embedder, summarizer, cfg, UpdateMode::adaptive,
                 &deferred);
  resummarize_nodes(res.tree_adrap, deferred, embedder, summarizer,
                    /*include_ancestors=*/false);
  res.adrap_calls = summarizer.calls() - calls1;
  res.adrap_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();

  auto t1 = std::chrono::steady_clock::now();
  int calls2 = summarizer.calls();
  RaTree full = build_tree(chunks, embedder, summarizer, ClusteringMode::two_step,
                           SummaryMode::generic, std::nullopt, seed);
  res.full_rebuild_calls = summarizer.calls() - calls2;
  res.rebuild_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t1).count();
  return res;
}

}  // namespace raptor
