// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <atomic>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "raptor/core.hpp"
#include "raptor/text.hpp"

namespace raptor {

enum class PromptId { summarize, qf_summarize, qa, coherence, one_shot_qfs, query_expand };

struct PromptTemplate {
  PromptId id;
  std::string system;
  std::string user;
};

/// The shipped prompt catalog. Placeholders use {name} syntax and are
/// substituted byte-exactly by render_prompt.
inline const std::vector<PromptTemplate>& prompt_catalog() {
  static const std::vector<PromptTemplate> catalog = {
      {PromptId::summarize, "You are a helpful assistant.",
       "Write a summary of the following, including as many key details as possible using at "
       "most {max_tokens} tokens:\n{context}"},
      {PromptId::qf_summarize, "You are a helpful assistant.",
       "Summarize the information in the retrieved documents using at most {max_tokens} "
       "tokens. Make sure to include in your summary all the details that can be used to "
       "answer the question and omit any details that are entirely irrelevant to the "
       "question.\nRetrieved documents: {context}\nQuestion: {question}\nSummary:"},
      {PromptId::qa,
       "You are a Question Answering Portal. Given a question with relevant information "
       "sources, your task is to respond to the question using ONLY information from the "
       "provided sources. Ensure that the facts included are directly related to answering "
       "the question. If the sources do not provide an answer, reply with \"No information "
       "is provided in the sources.\"",
       "Sources: {context}\nQuestion: {question}\nGenerate an answer with at most "
       "{max_tokens} tokens.\nAnswer:"},
      {PromptId::coherence, "You are a helpful assistant.",
       "You are given a question and an answer. Your task is to evaluate whether the "
       "provided answer could have been generated by a human expert, focusing on the "
       "coherence of the response. Assess how logically and smoothly the ideas are "
       "connected, how well the answer flows, and whether it maintains a clear and "
       "consistent structure. Provide a brief explanation of your reasoning, and then rate "
       "the likelihood on a scale of 1 to 5, where:\n1: Very unlikely to have been generated "
       "by a human expert (e.g., disjointed or lacking logical flow)\n2: Unlikely (e.g., "
       "partially coherent but ideas do not flow well or seem disconnected)\n3: Possibly "
       "(e.g., somewhat coherent but with noticeable breaks in flow or structure)\n4: Likely "
       "(e.g., mostly coherent with minor disruptions in flow or structure)\n5: Very likely "
       "to have been generated by a human expert (e.g., highly coherent, logically "
       "structured, and well-organized).\nThe final line of your output must be an integer "
       "between 1 and 5.\nQuestion: {question}\nAnswer: {answer}"},
      {PromptId::one_shot_qfs, "You are a helpful assistant.",
       "Instruction: You will be given a query and a set of documents. Your task is to "
       "generate an informative, fluent, and accurate query-focused summary. To do so, you "
       "should obtain a query-focused summary step by step.\nStep 1: Query-Relevant "
       "Information Identification\nIn this step, you will be given a query and a set of "
       "documents. Your task is to find and identify query-relevant information from each "
       "document. This relevant information can be at any level, such as phrases, "
       "sentences, or paragraphs.\nStep 2: Controllable Summarization\nIn this step, you "
       "should take the query and query-relevant information obtained from Step 1 as "
       "inputs. Your task is to summarize this information. The summary should be concise, "
       "include only non-redundant, query-relevant evidence. The output summary must "
       "consist of at most {max_tokens} tokens.\nQuery: {question}\nDocuments: {context}"},
      {PromptId::query_expand, "You are a helpful assistant.",
       "Write a list of keywords for the given question based on the following context. Use "
       "at most {max_tokens} tokens:\nSources: {context}\nQuestion: {question}\nKeywords:"},
  };
  return catalog;
}

inline const PromptTemplate& prompt_template(PromptId id) {
  for (const auto& t : prompt_catalog())
    if (t.id == id) return t;
  throw std::invalid_argument("unknown prompt id");
}

using PromptBindings = std::map<std::string, std::string>;

/// Byte-exact placeholder substitution. Every {placeholder} in the template
/// must have a binding.
inline std::pair<std::string, std::string> render_prompt(PromptId id,
                                                         const PromptBindings& bindings) {
  const PromptTemplate& t = prompt_template(id);
  auto substitute = [&](const std::string& s) {
    std::string out;
    out.reserve(s.size());
    size_t i = 0;
    while (i < s.size()) {
      if (s[i] == '{') {
        size_t close = s.find('}', i);
        if (close != std::string::npos) {
          std::string key = s.substr(i + 1, close - i - 1);
          auto it = bindings.find(key);
          if (it == bindings.end())
            throw std::invalid_argument("render_prompt: missing binding for {" + key + "}");
          out += it->second;
          i = close + 1;
          continue;
        }
      }
      out += s[i++];
    }
    return out;
  };
  return {substitute(t.system), substitute(t.user)};
}

struct SummaryRequest {
  std::string context;
  std::optional<std::string> question;
  int max_tokens = 1000;
};

class Summarizer {
 public:
  virtual ~Summarizer() = default;

  std::string summarize(const SummaryRequest& req) {
    calls_.fetch_add(1, std::memory_order_relaxed);
    return do_summarize(req);
  }

  /// Keyword extraction for query expansion; default: no keywords.
  virtual std::string keywords(const std::string& /*context*/, const std::string& /*question*/) {
    return "";
  }

  int calls() const { return calls_.load(std::memory_order_relaxed); }
  void reset_calls() { calls_.store(0, std::memory_order_relaxed); }

 protected:
  virtual std::string do_summarize(const SummaryRequest& req) = 0;

 private:
  std::atomic<int> calls_{0};
};

namespace detail {

inline std::vector<std::string> paragraphs(const std::string& text) {
  std::vector<std::string> out;
  size_t start = 0;
  while (start < text.size()) {
    size_t brk = text.find("\n\n", start);
    if (brk == std::string::npos) brk = text.size();
    std::string p = text.substr(start, brk - start);
    size_t a = p.find_first_not_of(" \t\n\r");
    if (a != std::string::npos) out.push_back(p.substr(a));
    start = brk + 2;
  }
  return out;
}

inline std::vector<std::string> long_words(const std::string& s) {
  std::vector<std::string> words;
  std::string cur;
  for (unsigned char c : s + " ") {
    if (is_word_char(c)) {
      cur += static_cast<char>(std::tolower(c));
    } else {
      if (cur.size() >= 4) words.push_back(cur);
      cur.clear();
    }
  }
  return words;
}

}  // namespace detail

/// Deterministic extractive summary: the first sentence of each paragraph,
/// ranked by question-word overlap when a question is given, concatenated
/// until the token budget would be exceeded.
inline std::string mock_summarize(const SummaryRequest& req,
                                  const TokenCounter& counter = count_tokens) {
  if (req.max_tokens < 1) throw std::invalid_argument("mock_summarize: max_tokens must be >= 1");

  std::vector<std::string> leads;
  for (const auto& p : detail::paragraphs(req.context)) {
    auto sentences = split_sentences(p);
    if (!sentences.empty()) leads.push_back(sentences.front());
  }

  std::vector<size_t> order(leads.size());
  for (size_t i = 0; i < order.size(); ++i) order[i] = i;
  if (req.question) {
    auto qwords = detail::long_words(*req.question);
    std::sort(qwords.begin(), qwords.end());
    std::vector<int> score(leads.size(), 0);
    for (size_t i = 0; i < leads.size(); ++i) {
      auto swords = detail::long_words(leads[i]);
      std::sort(swords.begin(), swords.end());
      swords.erase(std::unique(swords.begin(), swords.end()), swords.end());
      for (const auto& w : swords)
        if (std::binary_search(qwords.begin(), qwords.end(), w)) ++score[i];
    }
    std::stable_sort(order.begin(), order.end(),
                     [&](size_t a, size_t b) { return score[a] > score[b]; });
  }

  std::string out;
  int used = 0;
  for (size_t i : order) {
    int t = counter(leads[i]);
    if (used + t > req.max_tokens) break;
    if (!out.empty()) out += ' ';
    out += leads[i];
    used += t;
  }
  return out;
}

class MockSummarizer final : public Summarizer {
 protected:
  std::string do_summarize(const SummaryRequest& req) override { return mock_summarize(req); }
};

/// Sentinel emitted by the QA prompt when the sources carry no answer.
inline const std::string& qa_unanswered_sentinel() {
  static const std::string s = "No information is provided in the sources.";
  return s;
}

inline bool is_unanswered(const std::string& answer) {
  size_t a = answer.find_first_not_of(" \t\n\r");
  if (a == std::string::npos) return false;
  size_t b = answer.find_last_not_of(" \t\n\r");
  return answer.substr(a, b - a + 1) == qa_unanswered_sentinel();
}

struct CoherenceRating {
  int rating;    // 1..5
  double score;  // rating / 5
};

/// Parse a judge reply whose final line must be an integer 1..5.
inline CoherenceRating parse_coherence_reply(const std::string& reply) {
  size_t end = reply.find_last_not_of(" \t\n\r");
  if (end == std::string::npos) throw ParseError("coherence: empty reply");
  size_t begin = reply.find_last_of('\n', end);
  begin = (begin == std::string::npos) ? 0 : begin + 1;
  std::string line = reply.substr(begin, end - begin + 1);
  size_t a = line.find_first_not_of(" \t");
  line = (a == std::string::npos) ? "" : line.substr(a);

  if (line.size() != 1 || line[0] < '1' || line[0] > '5')
    throw ParseError("coherence: final line is not an integer in 1..5: \"" + line + "\"");
  int rating = line[0] - '0';
  return {rating, rating / 5.0};
}

}  // namespace raptor
