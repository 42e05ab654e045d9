// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cctype>
#include <cmath>
#include <mutex>
#include <string>
#include <unordered_map>
#include <vector>

#include "raptor/core.hpp"

namespace raptor {

inline double cosine_similarity(const Vec& a, const Vec& b) {
  if (a.size() != b.size())
    throw std::invalid_argument("cosine_similarity: dimension mismatch");
  double dot = 0, na = 0, nb = 0;
  for (size_t i = 0; i < a.size(); ++i) {
    dot += a[i] * b[i];
    na += a[i] * a[i];
    nb += b[i] * b[i];
  }
  if (na == 0 || nb == 0)
    throw std::invalid_argument("cosine_similarity: zero vector");
  return dot / (std::sqrt(na) * std::sqrt(nb));
}

/// Deterministic test embedder: feature-hashes character 3-grams of the
/// lowercased text into D buckets (signed), then L2-normalizes.
inline Vec mock_embed(const std::string& text, int dim) {
  if (dim < 2) throw std::invalid_argument("mock_embed: dim must be >= 2");
  Vec v(static_cast<size_t>(dim), 0.0);
  std::string lower = text;
  for (auto& c : lower) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));

  auto add_gram = [&](const std::string& g) {
    std::uint64_t h = fnv1a64(g);
    size_t bucket = static_cast<size_t>(h % static_cast<std::uint64_t>(dim));
    double sign = ((h >> 32) & 1) ? 1.0 : -1.0;
    v[bucket] += sign;
  };

  if (lower.size() >= 3) {
    for (size_t i = 0; i + 3 <= lower.size(); ++i) add_gram(lower.substr(i, 3));
  } else if (!lower.empty()) {
    add_gram(lower);
  }

  double norm = 0;
  for (double x : v) norm += x * x;
  norm = std::sqrt(norm);
  if (norm == 0) {
    v[0] = 1.0;  // empty or fully cancelling input
  } else {
    for (double& x : v) x /= norm;
  }
  return v;
}

class Embedder {
 public:
  virtual ~Embedder() = default;
  virtual int dim() const = 0;
  virtual Vec embed(const std::string& text) = 0;
  virtual std::vector<Vec> embed_batch(const std::vector<std::string>& texts) {
    std::vector<Vec> out;
    out.reserve(texts.size());
    for (const auto& t : texts) out.push_back(embed(t));
    return out;
  }
};

class MockEmbedder final : public Embedder {
 public:
  explicit MockEmbedder(int dim = 64) : dim_(dim) {}
  int dim() const override { return dim_; }

  Vec embed(const std::string& text) override {
    {
      std::lock_guard<std::mutex> lock(mu_);
      auto it = cache_.find(text);
      if (it != cache_.end()) return it->second;
    }
    Vec v = mock_embed(text, dim_);
    std::lock_guard<std::mutex> lock(mu_);
    cache_.emplace(text, v);
    return v;
  }

 private:
  int dim_;
  std::mutex mu_;
  std::unordered_map<std::string, Vec> cache_;
};

}  // namespace raptor
