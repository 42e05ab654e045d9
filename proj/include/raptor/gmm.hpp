// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <Eigen/Cholesky>
#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <limits>
#include <random>
#include <vector>

#include "raptor/core.hpp"

namespace raptor {

/// Full-covariance Gaussian mixture with per-cluster sufficient statistics
/// (S0 = responsibility mass, S1 = weighted sum, S2 = weighted outer-product
/// sum). Parameters are always recoverable from the statistics:
///   pi_k = S0_k / n,  mu_k = S1_k / S0_k,  Sigma_k = S2_k/S0_k - mu mu^T + reg I
struct GmmModel {
  int K = 0;
  int d = 0;
  Eigen::VectorXd weights;
  std::vector<Eigen::VectorXd> means;
  std::vector<Eigen::MatrixXd> covs;  // ridge included
  Eigen::VectorXd suff_s0;
  std::vector<Eigen::VectorXd> suff_s1;
  std::vector<Eigen::MatrixXd> suff_s2;
  double n = 0;
  double reg_eps = 1e-6;
};

struct AdaptiveConfig {
  int tau_n = 100;
  int tau_c = 11;
  double assign_threshold = 0.1;
};

inline double gaussian_logpdf(const Eigen::VectorXd& x, const Eigen::VectorXd& mu,
                              const Eigen::MatrixXd& sigma, double reg_eps = 1e-6) {
  const int d = static_cast<int>(x.size());
  Eigen::LLT<Eigen::MatrixXd> llt(sigma);
  if (llt.info() != Eigen::Success) {
    Eigen::MatrixXd reg = sigma + reg_eps * Eigen::MatrixXd::Identity(d, d);
    llt.compute(reg);
    if (llt.info() != Eigen::Success)
      throw std::invalid_argument("gaussian_logpdf: covariance not PD after ridge");
  }
  double logdet = 0;
  for (int i = 0; i < d; ++i) logdet += 2.0 * std::log(llt.matrixL()(i, i));
  Eigen::VectorXd y = llt.matrixL().solve(x - mu);
  static const double log2pi = std::log(2.0 * M_PI);
  return -0.5 * (d * log2pi + logdet + y.squaredNorm());
}

inline double gaussian_logpdf(const Vec& x, const Vec& mu, const std::vector<Vec>& sigma,
                              double reg_eps = 1e-6) {
  const int d = static_cast<int>(x.size());
  Eigen::VectorXd ex = Eigen::Map<const Eigen::VectorXd>(x.data(), d);
  Eigen::VectorXd emu = Eigen::Map<const Eigen::VectorXd>(mu.data(), d);
  Eigen::MatrixXd es(d, d);
  for (int i = 0; i < d; ++i)
    for (int j = 0; j < d; ++j) es(i, j) = sigma[static_cast<size_t>(i)][static_cast<size_t>(j)];
  return gaussian_logpdf(ex, emu, es, reg_eps);
}

namespace detail {

// log N(x_i | mu_k, Sigma_k) for all points and clusters, via one Cholesky
// per cluster.
inline Eigen::MatrixXd log_densities(const Eigen::MatrixXd& X, const GmmModel& m) {
  const int n = static_cast<int>(X.rows());
  Eigen::MatrixXd out(n, m.K);
  static const double log2pi = std::log(2.0 * M_PI);
  for (int k = 0; k < m.K; ++k) {
    Eigen::LLT<Eigen::MatrixXd> llt(m.covs[static_cast<size_t>(k)]);
    if (llt.info() != Eigen::Success) {
      llt.compute(m.covs[static_cast<size_t>(k)] +
                  m.reg_eps * Eigen::MatrixXd::Identity(m.d, m.d));
      if (llt.info() != Eigen::Success)
        throw std::invalid_argument("log_densities: covariance not PD after ridge");
    }
    double logdet = 0;
    for (int i = 0; i < m.d; ++i) logdet += 2.0 * std::log(llt.matrixL()(i, i));
    Eigen::MatrixXd centered = X.rowwise() - m.means[static_cast<size_t>(k)].transpose();
    Eigen::MatrixXd y = llt.matrixL().solve(centered.transpose());
    out.col(k) = -0.5 * (m.d * log2pi + logdet + y.colwise().squaredNorm().transpose().array());
  }
  return out;
}

inline double logsumexp_row(const Eigen::RowVectorXd& v) {
  double mx = v.maxCoeff();
  if (!std::isfinite(mx)) return mx;
  return mx + std::log((v.array() - mx).exp().sum());
}

inline Eigen::VectorXd log_weights(const GmmModel& m) {
  Eigen::VectorXd lw(m.K);
  for (int k = 0; k < m.K; ++k) lw(k) = std::log(std::max(m.weights(k), 1e-300));
  return lw;
}

// gamma matrix (n x K) plus the data log-likelihood.
inline std::pair<Eigen::MatrixXd, double> e_step(const Eigen::MatrixXd& X, const GmmModel& m) {
  Eigen::MatrixXd logp = log_densities(X, m);
  logp.rowwise() += log_weights(m).transpose();
  double ll = 0;
  for (int i = 0; i < logp.rows(); ++i) {
    double lse = logsumexp_row(logp.row(i));
    ll += lse;
    logp.row(i) = (logp.row(i).array() - lse).exp();
  }
  return {logp, ll};
}

}  // namespace detail

inline Eigen::VectorXd responsibilities(const GmmModel& m, const Eigen::VectorXd& x) {
  Eigen::MatrixXd X = x.transpose();
  return detail::e_step(X, m).first.row(0).transpose();
}

inline double log_likelihood(const GmmModel& m, const Eigen::MatrixXd& X) {
  return detail::e_step(X, m).second;
}

/// Rebuild a model (parameters and statistics) from points and a fixed
/// responsibility matrix. Clusters with (near-)zero responsibility mass
/// are dropped.
inline GmmModel model_from_responsibilities(const Eigen::MatrixXd& X,
                                            const Eigen::MatrixXd& gamma,
                                            double reg_eps = 1e-6) {
  const int n = static_cast<int>(X.rows());
  const int d = static_cast<int>(X.cols());
  const int K = static_cast<int>(gamma.cols());

  GmmModel m;
  m.d = d;
  m.n = n;
  m.reg_eps = reg_eps;
  for (int k = 0; k < K; ++k) {
    double s0 = gamma.col(k).sum();
    if (s0 < 1e-12) continue;  // empty cluster dropped
    Eigen::VectorXd s1 = X.transpose() * gamma.col(k);
    Eigen::MatrixXd s2 = X.transpose() * gamma.col(k).asDiagonal() * X;
    m.suff_s0.conservativeResize(m.K + 1);
    m.suff_s0(m.K) = s0;
    m.suff_s1.push_back(s1);
    m.suff_s2.push_back(s2);
    ++m.K;
  }
  m.weights.resize(m.K);
  m.means.resize(static_cast<size_t>(m.K));
  m.covs.resize(static_cast<size_t>(m.K));
  for (int k = 0; k < m.K; ++k) {
    m.weights(k) = m.suff_s0(k) / m.n;
    m.means[static_cast<size_t>(k)] = m.suff_s1[static_cast<size_t>(k)] / m.suff_s0(k);
    Eigen::MatrixXd cov = m.suff_s2[static_cast<size_t>(k)] / m.suff_s0(k) -
                          m.means[static_cast<size_t>(k)] *
                              m.means[static_cast<size_t>(k)].transpose();
    cov = 0.5 * (cov + cov.transpose());
    cov += reg_eps * Eigen::MatrixXd::Identity(d, d);
    m.covs[static_cast<size_t>(k)] = cov;
  }
  return m;
}

struct MStepResult {
  Eigen::VectorXd weights;
  std::vector<Eigen::VectorXd> means;
  std::vector<Eigen::MatrixXd> covs;
  std::vector<bool> empty;  // total responsibility below 1e-12
};

/// The maximization step over a fixed responsibility matrix; empty clusters
/// are flagged rather than dropped.
inline MStepResult m_step(const Eigen::MatrixXd& X, const Eigen::MatrixXd& gamma,
                          double reg_eps = 1e-6) {
  const int d = static_cast<int>(X.cols());
  const int K = static_cast<int>(gamma.cols());
  const double n = static_cast<double>(X.rows());

  MStepResult r;
  r.weights.resize(K);
  r.means.resize(static_cast<size_t>(K));
  r.covs.resize(static_cast<size_t>(K));
  r.empty.resize(static_cast<size_t>(K), false);
  for (int k = 0; k < K; ++k) {
    double s0 = gamma.col(k).sum();
    r.weights(k) = s0 / n;
    if (s0 < 1e-12) {
      r.empty[static_cast<size_t>(k)] = true;
      r.means[static_cast<size_t>(k)] = Eigen::VectorXd::Zero(d);
      r.covs[static_cast<size_t>(k)] = Eigen::MatrixXd::Identity(d, d);
      continue;
    }
    Eigen::VectorXd mu = X.transpose() * gamma.col(k) / s0;
    Eigen::MatrixXd s2 = X.transpose() * gamma.col(k).asDiagonal() * X;
    Eigen::MatrixXd cov = s2 / s0 - mu * mu.transpose();
    cov = 0.5 * (cov + cov.transpose());
    cov += reg_eps * Eigen::MatrixXd::Identity(d, d);
    r.means[static_cast<size_t>(k)] = mu;
    r.covs[static_cast<size_t>(k)] = cov;
  }
  return r;
}

namespace detail {

inline std::vector<int> kmeanspp_centers(const Eigen::MatrixXd& X, int K,
                                         std::mt19937_64& rng) {
  const int n = static_cast<int>(X.rows());
  std::vector<int> centers;
  std::uniform_int_distribution<int> uni(0, n - 1);
  centers.push_back(uni(rng));
  Eigen::VectorXd d2 =
      (X.rowwise() - X.row(centers[0])).rowwise().squaredNorm();
  while (static_cast<int>(centers.size()) < K) {
    double total = d2.sum();
    int pick;
    if (total < 1e-300) {
      pick = uni(rng);  // all remaining points coincide with a center
    } else {
      std::uniform_real_distribution<double> ur(0.0, total);
      double r = ur(rng);
      pick = n - 1;
      double acc = 0;
      for (int i = 0; i < n; ++i) {
        acc += d2(i);
        if (acc >= r) {
          pick = i;
          break;
        }
      }
    }
    centers.push_back(pick);
    Eigen::VectorXd nd = (X.rowwise() - X.row(pick)).rowwise().squaredNorm();
    d2 = d2.cwiseMin(nd);
  }
  return centers;
}

inline Eigen::MatrixXd hard_assignment_gamma(const Eigen::MatrixXd& X,
                                             const std::vector<int>& centers) {
  const int n = static_cast<int>(X.rows());
  const int K = static_cast<int>(centers.size());
  Eigen::MatrixXd gamma = Eigen::MatrixXd::Zero(n, K);
  for (int i = 0; i < n; ++i) {
    int best = 0;
    double bd = std::numeric_limits<double>::infinity();
    for (int k = 0; k < K; ++k) {
      double dist = (X.row(i) - X.row(centers[static_cast<size_t>(k)])).squaredNorm();
      if (dist < bd) {
        bd = dist;
        best = k;
      }
    }
    gamma(i, best) = 1.0;
  }
  return gamma;
}

// EM iterations from a given starting model; returns the converged model
// (statistics rebuilt from the final E-step) and its log-likelihood.
inline std::pair<GmmModel, double> em_iterate(const Eigen::MatrixXd& X, GmmModel m,
                                              int max_iter, double tol) {
  double prev_ll = -std::numeric_limits<double>::infinity();
  Eigen::MatrixXd gamma;
  for (int it = 0; it < max_iter; ++it) {
    auto [g, ll] = e_step(X, m);
    gamma = std::move(g);
    GmmModel next = model_from_responsibilities(X, gamma, m.reg_eps);
    if (next.K == 0) break;
    m = std::move(next);
    if (std::abs(ll - prev_ll) < tol) {
      prev_ll = ll;
      break;
    }
    prev_ll = ll;
  }
  return {m, log_likelihood(m, X)};
}

}  // namespace detail

/// EM fit with k-means++ seeding and restarts; best restart by final
/// log-likelihood. Empty clusters are dropped, so the result may carry
/// fewer than K components.
inline GmmModel fit_em(const Eigen::MatrixXd& X, int K, int max_iter = 200, double tol = 1e-4,
                       int n_init = 3, std::uint64_t seed = 0, double reg_eps = 1e-6) {
  const int n = static_cast<int>(X.rows());
  if (n < K) throw std::invalid_argument("fit_em: fewer points than clusters");
  if (K < 1) throw std::invalid_argument("fit_em: K must be >= 1");

  GmmModel best;
  double best_ll = -std::numeric_limits<double>::infinity();
  for (int r = 0; r < n_init; ++r) {
    std::mt19937_64 rng(derive_seed(seed, static_cast<std::uint64_t>(r) + 1));
    auto centers = detail::kmeanspp_centers(X, K, rng);
    Eigen::MatrixXd gamma0 = detail::hard_assignment_gamma(X, centers);
    GmmModel init = model_from_responsibilities(X, gamma0, reg_eps);
    if (init.K == 0) continue;
    auto [m, ll] = detail::em_iterate(X, std::move(init), max_iter, tol);
    if (ll > best_ll) {
      best_ll = ll;
      best = std::move(m);
    }
  }
  if (best.K == 0) throw std::runtime_error("fit_em: all initializations degenerate");
  return best;
}

/// BIC = p ln(n) - 2 lnL with p = K (d + d(d+1)/2) + (K - 1); lower is better.
inline double bic(const GmmModel& m, const Eigen::MatrixXd& X) {
  double ll = log_likelihood(m, X);
  double p = m.K * (m.d + m.d * (m.d + 1) / 2.0) + (m.K - 1);
  return p * std::log(static_cast<double>(X.rows())) - 2.0 * ll;
}

// BIC gaps below this are not decisive evidence for the larger model; the
// scan prefers the simplest K inside the margin.
constexpr double kBicMargin = 15.0;

/// Fit every K in [k_min, min(k_max, n)] and keep the smallest K whose BIC
/// lands within kBicMargin of the minimum.
inline GmmModel fit_best_k(const Eigen::MatrixXd& X, int k_min, int k_max,
                           std::uint64_t seed = 0, double reg_eps = 1e-6) {
  const int n = static_cast<int>(X.rows());
  if (k_min < 1) throw std::invalid_argument("fit_best_k: k_min must be >= 1");
  k_max = std::min(k_max, n);

  std::vector<std::pair<GmmModel, double>> fits;
  double best_bic = std::numeric_limits<double>::infinity();
  for (int K = k_min; K <= k_max; ++K) {
    GmmModel m = fit_em(X, K, 200, 1e-4, 3, derive_seed(seed, static_cast<std::uint64_t>(K)),
                        reg_eps);
    double b = bic(m, X);
    best_bic = std::min(best_bic, b);
    fits.emplace_back(std::move(m), b);
  }
  for (auto& [m, b] : fits)
    if (b <= best_bic + kBicMargin) return std::move(m);
  return std::move(fits.back().first);  // unreachable
}

/// Absorb one point: add its responsibility-weighted contribution to the
/// sufficient statistics and rebuild the parameters. Matches the batch
/// M-step over n+1 points with all old responsibilities frozen.
inline GmmModel incremental_update(const GmmModel& model, const Eigen::VectorXd& x) {
  GmmModel m = model;
  Eigen::VectorXd gamma = responsibilities(m, x);
  for (int k = 0; k < m.K; ++k) {
    m.suff_s0(k) += gamma(k);
    m.suff_s1[static_cast<size_t>(k)] += gamma(k) * x;
    m.suff_s2[static_cast<size_t>(k)] += gamma(k) * (x * x.transpose());
  }
  m.n += 1;
  for (int k = 0; k < m.K; ++k) {
    m.weights(k) = m.suff_s0(k) / m.n;
    m.means[static_cast<size_t>(k)] = m.suff_s1[static_cast<size_t>(k)] / m.suff_s0(k);
    Eigen::MatrixXd cov = m.suff_s2[static_cast<size_t>(k)] / m.suff_s0(k) -
                          m.means[static_cast<size_t>(k)] *
                              m.means[static_cast<size_t>(k)].transpose();
    cov = 0.5 * (cov + cov.transpose());
    cov += m.reg_eps * Eigen::MatrixXd::Identity(m.d, m.d);
    m.covs[static_cast<size_t>(k)] = cov;
  }
  return m;
}

/// Clusters with posterior above the threshold; falls back to the argmax so
/// the result is never empty.
inline std::vector<int> soft_assign(const GmmModel& m, const Eigen::VectorXd& x,
                                    double threshold = 0.1) {
  Eigen::VectorXd gamma = responsibilities(m, x);
  std::vector<int> ids;
  for (int k = 0; k < m.K; ++k)
    if (gamma(k) > threshold) ids.push_back(k);
  if (ids.empty()) {
    int arg = 0;
    gamma.maxCoeff(&arg);
    ids.push_back(arg);
  }
  return ids;
}

struct SplitResult {
  bool split = false;
  GmmModel model;
  int k_prime = 1;
  std::vector<int> new_cluster_ids;  // ids in the updated model (k_prime entries)
  std::vector<std::vector<int>> member_assign;  // per member, cluster ids in the updated model
};

/// Attempt to subdivide one cluster into at most 3 subclusters, keeping the
/// BIC-best alternative. On a split, the old cluster is replaced by the
/// first subcluster and the others are appended; total weight and total S0
/// are conserved.
inline SplitResult try_split(const GmmModel& model, int cluster_id,
                             const Eigen::MatrixXd& member_points, std::uint64_t seed = 0) {
  const int m_count = static_cast<int>(member_points.rows());
  if (cluster_id < 0 || cluster_id >= model.K)
    throw std::invalid_argument("try_split: bad cluster id");
  if (m_count < 2) throw std::invalid_argument("try_split: cluster needs >= 2 members");

  SplitResult res;
  GmmModel sub = fit_best_k(member_points, 1, std::min(3, m_count),
                            derive_seed(seed, 0x5b11), model.reg_eps);
  res.k_prime = sub.K;
  if (sub.K <= 1) {
    res.split = false;
    res.model = model;
    res.new_cluster_ids = {cluster_id};
    res.member_assign.assign(static_cast<size_t>(m_count), {cluster_id});
    return res;
  }

  res.split = true;
  GmmModel next = model;
  const double old_w = model.weights(cluster_id);
  const double old_s0 = model.suff_s0(cluster_id);
  const double sub_total = sub.suff_s0.sum();

  res.new_cluster_ids.resize(static_cast<size_t>(sub.K));
  for (int j = 0; j < sub.K; ++j) {
    int id;
    if (j == 0) {
      id = cluster_id;
    } else {
      id = next.K;
      next.K += 1;
      next.weights.conservativeResize(next.K);
      next.suff_s0.conservativeResize(next.K);
      next.means.emplace_back();
      next.covs.emplace_back();
      next.suff_s1.emplace_back();
      next.suff_s2.emplace_back();
    }
    double frac = sub.suff_s0(j) / sub_total;
    next.weights(id) = old_w * sub.weights(j);
    next.suff_s0(id) = old_s0 * frac;
    next.means[static_cast<size_t>(id)] = sub.means[static_cast<size_t>(j)];
    next.covs[static_cast<size_t>(id)] = sub.covs[static_cast<size_t>(j)];
    next.suff_s1[static_cast<size_t>(id)] = sub.suff_s1[static_cast<size_t>(j)] * (old_s0 / sub_total);
    next.suff_s2[static_cast<size_t>(id)] = sub.suff_s2[static_cast<size_t>(j)] * (old_s0 / sub_total);
    res.new_cluster_ids[static_cast<size_t>(j)] = id;
  }

  res.member_assign.resize(static_cast<size_t>(m_count));
  for (int i = 0; i < m_count; ++i) {
    auto local = soft_assign(sub, member_points.row(i).transpose(), 0.1);
    for (int j : local)
      res.member_assign[static_cast<size_t>(i)].push_back(
          res.new_cluster_ids[static_cast<size_t>(j)]);
  }
  res.model = std::move(next);
  return res;
}

struct UpdateOutcome {
  GmmModel model;
  std::vector<int> changed_clusters;  // ids in the updated model
  std::vector<int> created_clusters;
  std::vector<int> assignment;  // clusters of the new point
  std::vector<int> old_to_new;  // per old cluster id; -1 when dissolved
  std::vector<std::vector<int>> memberships;  // per point (n+1 rows), updated ids
  bool split_attempted = false;
};

namespace detail {

inline std::vector<std::vector<int>> soft_memberships(const GmmModel& m,
                                                      const Eigen::MatrixXd& X,
                                                      double threshold) {
  std::vector<std::vector<int>> out(static_cast<size_t>(X.rows()));
  for (int i = 0; i < X.rows(); ++i)
    out[static_cast<size_t>(i)] = soft_assign(m, X.row(i).transpose(), threshold);
  return out;
}

inline std::vector<int> cluster_counts(const std::vector<std::vector<int>>& memberships, int K) {
  std::vector<int> counts(static_cast<size_t>(K), 0);
  for (const auto& ids : memberships)
    for (int k : ids)
      if (k >= 0 && k < K) ++counts[static_cast<size_t>(k)];
  return counts;
}

}  // namespace detail

/// One step of the adaptive clustering procedure. Small instances
/// (n <= tau_n) get full EM plus a BIC scan over K..K+c where c counts
/// oversized clusters; large instances get the constant-time incremental
/// update with splitting of any cluster exceeding tau_c members.
/// `old_assignments` carries the caller's per-point cluster sets and is
/// not modified; the outcome reports the new memberships.
inline UpdateOutcome adaptive_cluster_update(const GmmModel& model,
                                             const Eigen::MatrixXd& points_so_far,
                                             const std::vector<std::vector<int>>& old_assignments,
                                             const Eigen::VectorXd& x, const AdaptiveConfig& cfg,
                                             std::uint64_t seed = 0) {
  const int n = static_cast<int>(points_so_far.rows());
  if (static_cast<size_t>(n) != old_assignments.size())
    throw std::invalid_argument("adaptive_cluster_update: assignment/point count mismatch");

  UpdateOutcome out;

  if (n <= cfg.tau_n) {
    Eigen::MatrixXd all(n + 1, points_so_far.cols());
    all.topRows(n) = points_so_far;
    all.row(n) = x.transpose();

    auto [refreshed, refreshed_ll] = detail::em_iterate(all, model, 200, 1e-4);
    (void)refreshed_ll;
    auto refreshed_members = detail::soft_memberships(refreshed, all, cfg.assign_threshold);
    auto counts = detail::cluster_counts(refreshed_members, refreshed.K);
    int c = 0;
    for (int cnt : counts)
      if (cnt > cfg.tau_c) ++c;

    GmmModel best = refreshed;
    double best_bic = bic(refreshed, all);
    if (c > 0) out.split_attempted = true;
    if (c > 0 || refreshed.K != model.K) {
      GmmModel scanned = fit_best_k(all, std::max(1, refreshed.K), refreshed.K + c,
                                    derive_seed(seed, 0xadc1), model.reg_eps);
      double b = bic(scanned, all);
      // growing K needs decisive evidence, same margin as the scan itself
      if (b < best_bic - (scanned.K > refreshed.K ? kBicMargin : 0.0)) {
        best_bic = b;
        best = std::move(scanned);
      }
    }

    out.model = std::move(best);
    out.memberships = detail::soft_memberships(out.model, all, cfg.assign_threshold);
    out.assignment = out.memberships.back();

    // match new clusters to old ones by member overlap over the old points
    std::vector<std::vector<int>> old_members(static_cast<size_t>(model.K));
    for (int i = 0; i < n; ++i)
      for (int k : old_assignments[static_cast<size_t>(i)])
        if (k >= 0 && k < model.K) old_members[static_cast<size_t>(k)].push_back(i);
    std::vector<std::vector<int>> new_members(static_cast<size_t>(out.model.K));
    for (int i = 0; i <= n; ++i)
      for (int k : out.memberships[static_cast<size_t>(i)])
        new_members[static_cast<size_t>(k)].push_back(i);

    out.old_to_new.assign(static_cast<size_t>(model.K), -1);
    std::vector<int> new_to_old(static_cast<size_t>(out.model.K), -1);
    // greedy max-overlap matching
    while (true) {
      int best_old = -1, best_new = -1, best_ov = 0;
      for (int ok = 0; ok < model.K; ++ok) {
        if (out.old_to_new[static_cast<size_t>(ok)] >= 0) continue;
        for (int nk = 0; nk < out.model.K; ++nk) {
          if (new_to_old[static_cast<size_t>(nk)] >= 0) continue;
          int ov = 0;
          size_t a = 0, b = 0;
          const auto& om = old_members[static_cast<size_t>(ok)];
          const auto& nm = new_members[static_cast<size_t>(nk)];
          while (a < om.size() && b < nm.size()) {
            if (om[a] == nm[b]) {
              ++ov;
              ++a;
              ++b;
            } else if (om[a] < nm[b]) {
              ++a;
            } else {
              ++b;
            }
          }
          if (ov > best_ov) {
            best_ov = ov;
            best_old = ok;
            best_new = nk;
          }
        }
      }
      if (best_old < 0) break;
      out.old_to_new[static_cast<size_t>(best_old)] = best_new;
      new_to_old[static_cast<size_t>(best_new)] = best_old;
    }

    for (int nk = 0; nk < out.model.K; ++nk) {
      int ok = new_to_old[static_cast<size_t>(nk)];
      if (ok < 0) {
        out.created_clusters.push_back(nk);
        continue;
      }
      // changed when the member set differs (new memberships include x)
      const auto& om = old_members[static_cast<size_t>(ok)];
      const auto& nm = new_members[static_cast<size_t>(nk)];
      if (om.size() != nm.size() || !std::equal(om.begin(), om.end(), nm.begin()))
        out.changed_clusters.push_back(nk);
    }
    return out;
  }

  // large-n branch: frozen-responsibility incremental update
  out.model = incremental_update(model, x);
  out.assignment = soft_assign(out.model, x, cfg.assign_threshold);
  out.memberships = old_assignments;
  out.memberships.push_back(out.assignment);
  out.changed_clusters = out.assignment;
  out.old_to_new.resize(static_cast<size_t>(model.K));
  for (int k = 0; k < model.K; ++k) out.old_to_new[static_cast<size_t>(k)] = k;

  auto counts = detail::cluster_counts(out.memberships, out.model.K);
  for (int k = 0; k < model.K; ++k) {
    if (counts[static_cast<size_t>(k)] <= cfg.tau_c) continue;
    out.split_attempted = true;

    std::vector<int> member_idx;
    for (size_t i = 0; i < out.memberships.size(); ++i)
      for (int c2 : out.memberships[i])
        if (c2 == k) member_idx.push_back(static_cast<int>(i));
    Eigen::MatrixXd members(member_idx.size(), points_so_far.cols());
    for (size_t r = 0; r < member_idx.size(); ++r) {
      int i = member_idx[r];
      if (i < n)
        members.row(static_cast<long>(r)) = points_so_far.row(i);
      else
        members.row(static_cast<long>(r)) = x.transpose();
    }

    SplitResult sr = try_split(out.model, k, members, derive_seed(seed, 0x57171 + k));
    if (!sr.split) continue;
    out.model = std::move(sr.model);
    for (int id : sr.new_cluster_ids)
      if (id != k) out.created_clusters.push_back(id);
    if (std::find(out.changed_clusters.begin(), out.changed_clusters.end(), k) ==
        out.changed_clusters.end())
      out.changed_clusters.push_back(k);
    // rewrite the split cluster's members with their sub-assignments
    for (size_t r = 0; r < member_idx.size(); ++r) {
      auto& ids = out.memberships[static_cast<size_t>(member_idx[r])];
      ids.erase(std::remove(ids.begin(), ids.end(), k), ids.end());
      for (int id : sr.member_assign[r])
        if (std::find(ids.begin(), ids.end(), id) == ids.end()) ids.push_back(id);
      std::sort(ids.begin(), ids.end());
    }
  }
  out.assignment = out.memberships.back();
  return out;
}

}  // namespace raptor
