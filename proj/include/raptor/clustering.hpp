// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <optional>
#include <vector>

#include "raptor/core.hpp"
#include "raptor/gmm.hpp"
#include "raptor/reduction.hpp"

namespace raptor {

/// One local fit inside a global cluster. Groups of fewer than 3 members
/// skip reduction/fitting and form a single trivial cluster.
struct LocalFit {
  bool trivial = false;
  std::optional<ReducerModel> reducer;
  std::optional<GmmModel> model;
  std::vector<int> member_idx;               // indices into the clustering input
  std::vector<Vec> member_low;               // aligned with member_idx (empty when trivial)
  std::vector<std::vector<int>> cluster_members;  // per local cluster, positions in member_idx
};

struct ClusteringResult {
  std::vector<std::vector<int>> clusters;  // final clusters, input indices
  std::optional<ReducerModel> global_reducer;
  std::optional<GmmModel> global_model;
  std::vector<LocalFit> locals;
  std::vector<std::pair<int, int>> cluster_origin;  // final cluster -> (local, local cluster)
};

namespace detail {

inline Eigen::MatrixXd to_matrix(const std::vector<Vec>& rows) {
  Eigen::MatrixXd X(rows.size(), rows.empty() ? 0 : rows[0].size());
  for (size_t i = 0; i < rows.size(); ++i)
    for (size_t j = 0; j < rows[i].size(); ++j) X(static_cast<long>(i), static_cast<long>(j)) = rows[i][j];
  return X;
}

inline int k_scan_limit(int n) {
  int root = static_cast<int>(std::ceil(std::sqrt(static_cast<double>(n))));
  int cap = std::min(n, std::max(50, root));
  // full-covariance fits on a handful of points go singular and BIC then
  // rewards the blown-up likelihood; keep a few points per component
  return std::max(1, std::min(cap, n / 3));
}

// Fit one local-style reducer+GMM over the given members and fill a LocalFit.
inline LocalFit fit_local(const std::vector<Vec>& embeddings, std::vector<int> member_idx,
                          std::uint64_t seed) {
  LocalFit lf;
  lf.member_idx = std::move(member_idx);
  const int m = static_cast<int>(lf.member_idx.size());
  if (m < 3) {
    lf.trivial = true;
    std::vector<int> all(static_cast<size_t>(m));
    for (int i = 0; i < m; ++i) all[static_cast<size_t>(i)] = i;
    lf.cluster_members.push_back(std::move(all));
    return lf;
  }

  std::vector<Vec> high;
  high.reserve(static_cast<size_t>(m));
  for (int idx : lf.member_idx) high.push_back(embeddings[static_cast<size_t>(idx)]);

  lf.reducer = fit_reducer(high, 10, 10);
  lf.member_low = lf.reducer->train_low;
  Eigen::MatrixXd low = to_matrix(lf.member_low);
  lf.model = fit_best_k(low, 1, k_scan_limit(m), seed);

  lf.cluster_members.assign(static_cast<size_t>(lf.model->K), {});
  for (int i = 0; i < m; ++i) {
    for (int k : soft_assign(*lf.model, low.row(i).transpose(), 0.1))
      lf.cluster_members[static_cast<size_t>(k)].push_back(i);
  }
  return lf;
}

inline void append_local_clusters(ClusteringResult& res, int local_idx) {
  const LocalFit& lf = res.locals[static_cast<size_t>(local_idx)];
  for (size_t c = 0; c < lf.cluster_members.size(); ++c) {
    std::vector<int> global_ids;
    global_ids.reserve(lf.cluster_members[c].size());
    for (int pos : lf.cluster_members[c])
      global_ids.push_back(lf.member_idx[static_cast<size_t>(pos)]);
    res.clusters.push_back(std::move(global_ids));
    res.cluster_origin.emplace_back(local_idx, static_cast<int>(c));
  }
}

}  // namespace detail

/// Global reduction+GMM (n_neighbors = sqrt(n)) followed by per-global-cluster
/// local reduction+GMM (n_neighbors = 10); the result is the union of all
/// local clusters.
inline ClusteringResult cluster_two_step(const std::vector<Vec>& embeddings,
                                         std::uint64_t seed = 0) {
  const int n = static_cast<int>(embeddings.size());
  if (n < 2) throw std::invalid_argument("cluster_two_step: need at least 2 points");

  ClusteringResult res;
  int nn = static_cast<int>(std::lround(std::sqrt(static_cast<double>(n))));
  res.global_reducer = fit_reducer(embeddings, nn, 10);
  Eigen::MatrixXd low = detail::to_matrix(res.global_reducer->train_low);
  res.global_model = fit_best_k(low, 1, detail::k_scan_limit(n), derive_seed(seed, 0x91));

  std::vector<std::vector<int>> global_members(static_cast<size_t>(res.global_model->K));
  for (int i = 0; i < n; ++i)
    for (int k : soft_assign(*res.global_model, low.row(i).transpose(), 0.1))
      global_members[static_cast<size_t>(k)].push_back(i);

  for (int g = 0; g < res.global_model->K; ++g) {
    res.locals.push_back(detail::fit_local(embeddings, global_members[static_cast<size_t>(g)],
                                           derive_seed(seed, 0x1000 + static_cast<std::uint64_t>(g))));
    detail::append_local_clusters(res, g);
  }
  return res;
}

/// Single local-style reduction+GMM over all points; no global stage.
inline ClusteringResult cluster_one_step(const std::vector<Vec>& embeddings,
                                         std::uint64_t seed = 0) {
  const int n = static_cast<int>(embeddings.size());
  if (n < 2) throw std::invalid_argument("cluster_one_step: need at least 2 points");

  ClusteringResult res;
  std::vector<int> all(static_cast<size_t>(n));
  for (int i = 0; i < n; ++i) all[static_cast<size_t>(i)] = i;
  res.locals.push_back(detail::fit_local(embeddings, std::move(all), derive_seed(seed, 0x1)));
  detail::append_local_clusters(res, 0);
  return res;
}

}  // namespace raptor
