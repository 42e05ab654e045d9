// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <array>
#include <cctype>
#include <functional>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "raptor/core.hpp"

namespace raptor {

/// A contiguous span of a source document. `text` may start with overlap
/// material taken from the previous chunk; `body` is the chunk's own content.
struct Chunk {
  std::string id;
  std::string doc_id;
  int position = 0;
  std::string text;
  int token_count = 0;
  std::string body;
  std::string overlap;
};

struct ChunkingConfig {
  int max_body_tokens = 250;
  int overlap_tokens = 50;
};

using TokenCounter = std::function<int(const std::string&)>;

namespace detail {

inline bool is_word_char(unsigned char c) {
  // bytes >= 0x80 belong to multi-byte UTF-8 sequences; treat as word material
  return std::isalnum(c) != 0 || c == '_' || c >= 0x80;
}

}  // namespace detail

/// Default counter: maximal runs of word characters count one token each,
/// every other non-whitespace character (punctuation) is its own token.
inline int count_tokens(const std::string& text) {
  int count = 0;
  bool in_word = false;
  for (unsigned char c : text) {
    if (std::isspace(c)) {
      in_word = false;
    } else if (detail::is_word_char(c)) {
      if (!in_word) ++count;
      in_word = true;
    } else {
      ++count;  // punctuation
      in_word = false;
    }
  }
  return count;
}

namespace detail {

inline const std::vector<std::string>& abbreviations() {
  static const std::vector<std::string> abbrevs = {
      "mr", "mrs", "ms", "dr", "prof", "sr", "jr", "st", "vs", "etc",
      "e.g", "i.e", "cf", "al", "fig", "no", "vol", "inc", "ltd", "co"};
  return abbrevs;
}

// Word immediately preceding position `i` (exclusive), lowercased.
inline std::string word_before(const std::string& s, size_t i) {
  size_t end = i;
  size_t start = end;
  while (start > 0) {
    unsigned char c = static_cast<unsigned char>(s[start - 1]);
    if (is_word_char(c) || c == '.') {
      --start;
    } else {
      break;
    }
  }
  std::string w = s.substr(start, end - start);
  for (auto& c : w) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  // strip inner trailing dots so "e.g" matches "e.g."
  while (!w.empty() && w.back() == '.') w.pop_back();
  return w;
}

inline bool is_abbreviation(const std::string& s, size_t dot_pos) {
  std::string w = word_before(s, dot_pos);
  if (w.empty()) return false;
  for (const auto& a : abbreviations()) {
    if (w == a) return true;
  }
  return false;
}

}  // namespace detail

/// Rule-based sentence splitter: a sentence ends at . ! ? followed by
/// whitespace whose next non-space character is uppercase or a digit,
/// unless the period terminates a known abbreviation.
inline std::vector<std::string> split_sentences(const std::string& text) {
  std::vector<std::string> out;
  const size_t n = text.size();
  size_t start = 0;

  auto flush = [&](size_t end) {
    // trim surrounding whitespace
    size_t a = start, b = end;
    while (a < b && std::isspace(static_cast<unsigned char>(text[a]))) ++a;
    while (b > a && std::isspace(static_cast<unsigned char>(text[b - 1]))) --b;
    if (b > a) out.push_back(text.substr(a, b - a));
    start = end;
  };

  for (size_t i = 0; i < n; ++i) {
    char c = text[i];
    if (c != '.' && c != '!' && c != '?') continue;
    if (i + 1 >= n) break;  // end of text, flushed below
    if (!std::isspace(static_cast<unsigned char>(text[i + 1]))) continue;
    size_t j = i + 1;
    while (j < n && std::isspace(static_cast<unsigned char>(text[j]))) ++j;
    if (j >= n) break;
    unsigned char next = static_cast<unsigned char>(text[j]);
    if (!(std::isupper(next) || std::isdigit(next))) continue;
    if (c == '.' && detail::is_abbreviation(text, i)) continue;
    flush(i + 1);
  }
  flush(n);
  return out;
}

namespace detail {

// Split a single over-long sentence at punctuation marks into sub-spans
// of at most max_tokens each; hard-cuts at a token boundary when no
// punctuation is available.
inline std::vector<std::string> split_long_sentence(const std::string& s, int max_tokens,
                                                    const TokenCounter& counter) {
  // token spans: [begin, end) byte offsets, plus a punctuation flag
  struct Tok {
    size_t begin, end;
    bool punct;
  };
  std::vector<Tok> toks;
  size_t i = 0;
  const size_t n = s.size();
  while (i < n) {
    unsigned char c = static_cast<unsigned char>(s[i]);
    if (std::isspace(c)) {
      ++i;
      continue;
    }
    if (is_word_char(c)) {
      size_t b = i;
      while (i < n && is_word_char(static_cast<unsigned char>(s[i]))) ++i;
      toks.push_back({b, i, false});
    } else {
      toks.push_back({i, i + 1, true});
      ++i;
    }
  }
  (void)counter;
  std::vector<std::string> out;
  size_t t = 0;
  while (t < toks.size()) {
    size_t take = std::min(toks.size() - t, static_cast<size_t>(max_tokens));
    // prefer ending right after the last punctuation token inside the window
    size_t end = t + take;
    if (end < toks.size()) {
      size_t best = end;
      for (size_t k = end; k > t; --k) {
        if (toks[k - 1].punct) {
          best = k;
          break;
        }
      }
      end = best;
    }
    size_t lo = toks[t].begin;
    size_t hi = toks[end - 1].end;
    out.push_back(s.substr(lo, hi - lo));
    t = end;
  }
  return out;
}

// Trailing `budget` tokens of a string, verbatim.
inline std::string trailing_tokens(const std::string& s, int budget,
                                   const TokenCounter& counter) {
  if (budget <= 0) return "";
  if (counter(s) <= budget) return s;
  // walk backwards accumulating tokens
  std::vector<size_t> token_begins;
  size_t i = 0;
  const size_t n = s.size();
  while (i < n) {
    unsigned char c = static_cast<unsigned char>(s[i]);
    if (std::isspace(c)) {
      ++i;
      continue;
    }
    token_begins.push_back(i);
    if (is_word_char(c)) {
      while (i < n && is_word_char(static_cast<unsigned char>(s[i]))) ++i;
    } else {
      ++i;
    }
  }
  if (static_cast<int>(token_begins.size()) <= budget) return s;
  size_t from = token_begins[token_begins.size() - static_cast<size_t>(budget)];
  return s.substr(from);
}

}  // namespace detail

/// Group sentences into chunks of at most `max_body_tokens` body tokens,
/// prefixing every chunk but the first with up to `overlap_tokens` of
/// trailing material from its predecessor. Sentences stay intact; a
/// sentence longer than the body budget is split at punctuation marks.
inline std::vector<Chunk> chunk_text(const std::string& doc_id, const std::string& text,
                                     const ChunkingConfig& cfg = {},
                                     const TokenCounter& counter = count_tokens) {
  if (cfg.overlap_tokens < 0 || cfg.max_body_tokens <= 0 ||
      cfg.overlap_tokens >= cfg.max_body_tokens) {
    throw std::invalid_argument("chunk_text: require 0 <= overlap_tokens < max_body_tokens");
  }

  std::vector<std::string> units;
  for (const auto& s : split_sentences(text)) {
    if (counter(s) > cfg.max_body_tokens) {
      for (auto& part : detail::split_long_sentence(s, cfg.max_body_tokens, counter))
        units.push_back(std::move(part));
    } else {
      units.push_back(s);
    }
  }

  // group units into bodies
  std::vector<std::vector<std::string>> bodies;
  std::vector<std::string> cur;
  int cur_tokens = 0;
  for (auto& u : units) {
    int t = counter(u);
    if (!cur.empty() && cur_tokens + t > cfg.max_body_tokens) {
      bodies.push_back(std::move(cur));
      cur.clear();
      cur_tokens = 0;
    }
    cur_tokens += t;
    cur.push_back(std::move(u));
  }
  if (!cur.empty()) bodies.push_back(std::move(cur));

  auto join = [](const std::vector<std::string>& parts) {
    std::string s;
    for (size_t i = 0; i < parts.size(); ++i) {
      if (i) s += ' ';
      s += parts[i];
    }
    return s;
  };

  std::vector<Chunk> chunks;
  for (size_t b = 0; b < bodies.size(); ++b) {
    Chunk c;
    c.doc_id = doc_id;
    c.position = static_cast<int>(b);
    c.body = join(bodies[b]);
    if (b > 0) {
      // trailing whole sentences of the previous body within the budget;
      // if the last sentence alone is too long, take its tail verbatim
      const auto& prev = bodies[b - 1];
      std::vector<std::string> tail;
      int used = 0;
      for (size_t k = prev.size(); k > 0; --k) {
        int t = counter(prev[k - 1]);
        if (used + t > cfg.overlap_tokens) break;
        used += t;
        tail.insert(tail.begin(), prev[k - 1]);
      }
      if (tail.empty() && counter(prev.back()) > cfg.overlap_tokens) {
        c.overlap = detail::trailing_tokens(prev.back(), cfg.overlap_tokens, counter);
      } else {
        c.overlap = join(tail);
      }
    }
    c.text = c.overlap.empty() ? c.body : c.overlap + ' ' + c.body;
    c.token_count = counter(c.text);
    c.id = fnv1a64_hex(doc_id + '\x1f' + std::to_string(c.position) + '\x1f' + c.text);
    chunks.push_back(std::move(c));
  }
  return chunks;
}

}  // namespace raptor
