// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <chrono>
#include <cstdlib>
#include <string>
#include <thread>
#include <vector>

#include <httplib.h>
#include <nlohmann/json.hpp>

#include "raptor/core.hpp"
#include "raptor/embedding.hpp"
#include "raptor/summarize.hpp"
#include "raptor/text.hpp"

namespace raptor {

struct RemoteConfig {
  std::string base_url = "http://localhost:8080";
  std::string api_key;           // usually from an environment variable
  std::string embed_model = "text-embedding-3-large";
  std::string chat_model = "gpt-4o-mini";
  int embed_dim = 64;
  int max_retries = 3;
  int backoff_ms = 200;          // doubled per attempt
  int timeout_sec = 60;
  int batch_size = 64;

  static RemoteConfig from_env() {
    RemoteConfig cfg;
    if (const char* v = std::getenv("RAPTOR_API_BASE")) cfg.base_url = v;
    if (const char* v = std::getenv("RAPTOR_API_KEY")) cfg.api_key = v;
    if (const char* v = std::getenv("RAPTOR_EMBED_MODEL")) cfg.embed_model = v;
    if (const char* v = std::getenv("RAPTOR_CHAT_MODEL")) cfg.chat_model = v;
    return cfg;
  }
};

namespace detail {

// POST with exponential backoff on transient failures (connection errors,
// 429, 5xx). 401/403 and other 4xx fail immediately.
inline nlohmann::json post_json(const RemoteConfig& cfg, const std::string& path,
                                const nlohmann::json& body) {
  httplib::Client client(cfg.base_url);
  client.set_connection_timeout(cfg.timeout_sec, 0);
  client.set_read_timeout(cfg.timeout_sec, 0);
  httplib::Headers headers;
  if (!cfg.api_key.empty()) headers.emplace("Authorization", "Bearer " + cfg.api_key);

  int attempts = 0;
  std::string last_error;
  for (int attempt = 0; attempt <= cfg.max_retries; ++attempt) {
    ++attempts;
    if (attempt > 0) {
      std::this_thread::sleep_for(
          std::chrono::milliseconds(cfg.backoff_ms * (1 << (attempt - 1))));
    }
    auto res = client.Post(path, headers, body.dump(), "application/json");
    if (!res) {
      last_error = "connection failure: " + httplib::to_string(res.error());
      continue;
    }
    if (res->status == 401 || res->status == 403)
      throw AuthError("auth failure (" + std::to_string(res->status) + ") on " + path);
    if (res->status == 429 || res->status >= 500) {
      last_error = "transient status " + std::to_string(res->status);
      continue;
    }
    if (res->status != 200)
      throw NetworkError("unexpected status " + std::to_string(res->status) + " on " + path);
    try {
      return nlohmann::json::parse(res->body);
    } catch (const nlohmann::json::exception& e) {
      throw MalformedResponseError(std::string("invalid JSON reply: ") + e.what());
    }
  }
  throw NetworkError("request to " + path + " failed after " + std::to_string(attempts) +
                     " attempts: " + last_error);
}

}  // namespace detail

/// OpenAI-style embeddings client (POST /v1/embeddings). Requests are
/// batched; batches are issued one at a time, bounding in-flight work.
class RemoteEmbedder final : public Embedder {
 public:
  explicit RemoteEmbedder(RemoteConfig cfg) : cfg_(std::move(cfg)) {}

  int dim() const override { return cfg_.embed_dim; }

  Vec embed(const std::string& text) override { return embed_batch({text}).at(0); }

  std::vector<Vec> embed_batch(const std::vector<std::string>& texts) override {
    std::vector<Vec> out;
    out.reserve(texts.size());
    for (size_t off = 0; off < texts.size(); off += static_cast<size_t>(cfg_.batch_size)) {
      size_t end = std::min(texts.size(), off + static_cast<size_t>(cfg_.batch_size));
      std::vector<std::string> batch(texts.begin() + static_cast<long>(off),
                                     texts.begin() + static_cast<long>(end));
      nlohmann::json body = {{"model", cfg_.embed_model}, {"input", batch}};
      nlohmann::json reply = detail::post_json(cfg_, "/v1/embeddings", body);
      if (!reply.contains("data") || !reply["data"].is_array() ||
          reply["data"].size() != batch.size())
        throw MalformedResponseError("embeddings reply: bad or missing data array");
      for (const auto& item : reply["data"]) {
        if (!item.contains("embedding") || !item["embedding"].is_array())
          throw MalformedResponseError("embeddings reply: missing embedding field");
        out.push_back(item["embedding"].get<Vec>());
      }
    }
    return out;
  }

 private:
  RemoteConfig cfg_;
};

/// OpenAI-style chat client (POST /v1/chat/completions).
class RemoteChatClient {
 public:
  explicit RemoteChatClient(RemoteConfig cfg) : cfg_(std::move(cfg)) {}

  std::string complete(const std::string& system, const std::string& user) const {
    nlohmann::json body = {{"model", cfg_.chat_model},
                           {"messages",
                            {{{"role", "system"}, {"content", system}},
                             {{"role", "user"}, {"content", user}}}}};
    nlohmann::json reply = detail::post_json(cfg_, "/v1/chat/completions", body);
    try {
      return reply.at("choices").at(0).at("message").at("content").get<std::string>();
    } catch (const nlohmann::json::exception& e) {
      throw MalformedResponseError(std::string("chat reply: ") + e.what());
    }
  }

  const RemoteConfig& config() const { return cfg_; }

 private:
  RemoteConfig cfg_;
};

namespace detail {

// Truncate a reply at a token boundary when the model overshoots the budget.
inline std::string truncate_tokens(const std::string& s, int budget,
                                   const TokenCounter& counter) {
  if (counter(s) <= budget) return s;
  std::string out;
  size_t i = 0;
  int used = 0;
  while (i < s.size()) {
    while (i < s.size() && std::isspace(static_cast<unsigned char>(s[i]))) ++i;
    if (i >= s.size()) break;
    size_t b = i;
    if (is_word_char(static_cast<unsigned char>(s[i]))) {
      while (i < s.size() && is_word_char(static_cast<unsigned char>(s[i]))) ++i;
    } else {
      ++i;
    }
    if (used + 1 > budget) break;
    if (!out.empty() && b > 0 && std::isspace(static_cast<unsigned char>(s[b - 1]))) out += ' ';
    out += s.substr(b, i - b);
    ++used;
  }
  return out;
}

}  // namespace detail

/// Summarizer backed by a chat endpoint; replies over the token budget are
/// truncated at a token boundary.
class RemoteSummarizer final : public Summarizer {
 public:
  explicit RemoteSummarizer(RemoteConfig cfg, TokenCounter counter = count_tokens)
      : client_(std::move(cfg)), counter_(std::move(counter)) {}

  std::string keywords(const std::string& context, const std::string& question) override {
    auto [sys, user] = render_prompt(PromptId::query_expand, {{"context", context},
                                                              {"question", question},
                                                              {"max_tokens", "100"}});
    return client_.complete(sys, user);
  }

  const RemoteChatClient& client() const { return client_; }

 protected:
  std::string do_summarize(const SummaryRequest& req) override {
    PromptBindings bindings = {{"context", req.context},
                               {"max_tokens", std::to_string(req.max_tokens)}};
    PromptId id = PromptId::summarize;
    if (req.question) {
      id = PromptId::qf_summarize;
      bindings["question"] = *req.question;
    }
    auto [sys, user] = render_prompt(id, bindings);
    return detail::truncate_tokens(client_.complete(sys, user), req.max_tokens, counter_);
  }

 private:
  RemoteChatClient client_;
  TokenCounter counter_;
};

inline std::string qa_answer(const RemoteChatClient& client, const std::string& context,
                             const std::string& question, int max_tokens = 2000) {
  if (question.empty()) throw std::invalid_argument("qa_answer: empty question");
  auto [sys, user] = render_prompt(PromptId::qa, {{"context", context},
                                                  {"question", question},
                                                  {"max_tokens", std::to_string(max_tokens)}});
  return client.complete(sys, user);
}

inline CoherenceRating coherence_rating(const RemoteChatClient& client,
                                        const std::string& question,
                                        const std::string& answer) {
  auto [sys, user] =
      render_prompt(PromptId::coherence, {{"question", question}, {"answer", answer}});
  return parse_coherence_reply(client.complete(sys, user));
}

}  // namespace raptor
