// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

namespace raptor {

using Vec = std::vector<double>;

/// Thrown when a remote endpoint cannot be reached after all retries.
struct NetworkError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Thrown on 401/403 replies; never retried.
struct AuthError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Thrown when a remote reply does not have the expected shape.
struct MalformedResponseError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Thrown by the on-disk index reader on version/corruption problems.
struct IndexFormatError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Thrown when a judge reply cannot be parsed into a rating.
struct ParseError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

inline std::uint64_t fnv1a64(const std::string& s, std::uint64_t h = 0xcbf29ce484222325ull) {
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ull;
  }
  return h;
}

inline std::string fnv1a64_hex(const std::string& s) {
  static const char* digits = "0123456789abcdef";
  std::uint64_t h = fnv1a64(s);
  std::string out(16, '0');
  for (int i = 15; i >= 0; --i) {
    out[static_cast<size_t>(i)] = digits[h & 0xf];
    h >>= 4;
  }
  return out;
}

/// Deterministic per-subtask seed derivation.
inline std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t salt) {
  std::uint64_t x = seed ^ (salt + 0x9e3779b97f4a7c15ull + (seed << 6) + (seed >> 2));
  x ^= x >> 30;
  x *= 0xbf58476d1ce4e5b9ull;
  x ^= x >> 27;
  x *= 0x94d049bb133111ebull;
  x ^= x >> 31;
  return x;
}

}  // namespace raptor
