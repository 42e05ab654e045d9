// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <numeric>
#include <vector>

#include "raptor/core.hpp"

namespace raptor {

enum class ReducerKind { reference_linear, imported };

/// Fitted dimensionality-reduction state. New points are mapped by
/// interpolating the stored low-d positions of their nearest high-d
/// training neighbors, so any external reducer (e.g. a real UMAP fit)
/// can be imported as (high, low) training pairs.
struct ReducerModel {
  ReducerKind kind = ReducerKind::reference_linear;
  int n_neighbors = 2;
  int target_dim = 1;
  std::vector<Vec> train_high;
  std::vector<Vec> train_low;
  // reference_linear only
  Eigen::MatrixXd linear_map;  // target_dim x D
  Eigen::VectorXd mean;        // D

  int input_dim() const { return train_high.empty() ? 0 : static_cast<int>(train_high[0].size()); }
};

/// Principal-component reference reducer. Eigenvector signs are fixed by
/// making each component's largest-magnitude entry positive; directions
/// with (near-)zero variance map to 0.
inline ReducerModel fit_reducer(const std::vector<Vec>& points, int n_neighbors,
                                int target_dim = 10) {
  const int n = static_cast<int>(points.size());
  if (n < 2) throw std::invalid_argument("fit_reducer: need at least 2 points");
  const int d = static_cast<int>(points[0].size());

  ReducerModel m;
  m.kind = ReducerKind::reference_linear;
  m.target_dim = std::max(1, std::min({target_dim, 10, d, n - 1}));
  m.n_neighbors = std::clamp(n_neighbors, std::min(2, n - 1), n - 1);

  Eigen::MatrixXd X(n, d);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < d; ++j) X(i, j) = points[static_cast<size_t>(i)][static_cast<size_t>(j)];

  m.mean = X.colwise().mean();
  Eigen::MatrixXd C = X.rowwise() - m.mean.transpose();
  Eigen::MatrixXd cov = (C.transpose() * C) / static_cast<double>(n);

  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(cov);
  // eigenvalues ascending; take the top target_dim
  m.linear_map.resize(m.target_dim, d);
  for (int t = 0; t < m.target_dim; ++t) {
    int idx = d - 1 - t;
    Eigen::VectorXd v = es.eigenvectors().col(idx);
    if (es.eigenvalues()(idx) <= 1e-12) {
      m.linear_map.row(t).setZero();
      continue;
    }
    int arg = 0;
    v.cwiseAbs().maxCoeff(&arg);
    if (v(arg) < 0) v = -v;
    m.linear_map.row(t) = v.transpose();
  }

  m.train_high = points;
  m.train_low.resize(static_cast<size_t>(n));
  for (int i = 0; i < n; ++i) {
    Eigen::VectorXd low = m.linear_map * (X.row(i).transpose() - m.mean);
    m.train_low[static_cast<size_t>(i)].assign(low.data(), low.data() + m.target_dim);
  }
  return m;
}

/// Map a new point into the fitted low-d space: inverse-distance-weighted
/// average of the n_neighbors nearest training points' low-d positions.
/// A point coinciding with a training point gets that point's position.
inline Vec knn_transform(const ReducerModel& model, const Vec& v) {
  const size_t n = model.train_high.size();
  if (n == 0) throw std::invalid_argument("knn_transform: empty model");
  if (v.size() != model.train_high[0].size())
    throw std::invalid_argument("knn_transform: dimension mismatch");

  std::vector<double> dist(n);
  for (size_t i = 0; i < n; ++i) {
    double s = 0;
    const Vec& t = model.train_high[i];
    for (size_t j = 0; j < v.size(); ++j) {
      double diff = v[j] - t[j];
      s += diff * diff;
    }
    dist[i] = std::sqrt(s);
    if (dist[i] < 1e-12) return model.train_low[i];
  }

  const size_t k = std::min(static_cast<size_t>(std::max(1, model.n_neighbors)), n);
  std::vector<size_t> idx(n);
  std::iota(idx.begin(), idx.end(), size_t{0});
  std::partial_sort(idx.begin(), idx.begin() + static_cast<long>(k), idx.end(),
                    [&](size_t a, size_t b) {
                      if (dist[a] != dist[b]) return dist[a] < dist[b];
                      return a < b;
                    });

  Vec out(static_cast<size_t>(model.target_dim), 0.0);
  double wsum = 0;
  for (size_t r = 0; r < k; ++r) {
    double w = 1.0 / dist[idx[r]];
    wsum += w;
    const Vec& low = model.train_low[idx[r]];
    for (size_t j = 0; j < out.size(); ++j) out[j] += w * low[j];
  }
  for (double& x : out) x /= wsum;
  return out;
}

}  // namespace raptor
