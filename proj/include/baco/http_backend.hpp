#pragma once

/**
 * HTTP Backends
 *
 * Clients for remote model and scoring servers speaking the JSON protocol
 * below (one POST endpoint per capability, plus GET /v1/meta). Responses are
 * validated eagerly: a transport fault (unreachable host, 5xx) raises a
 * retryable BackendError, while a protocol fault (4xx, malformed JSON,
 * invalid distribution) is fatal, since retrying cannot fix it.
 *
 *   GET  /v1/meta          -> {name, vocab_size?, eos?, context_limit?}
 *   POST /v1/tokenize      {text}                  -> {tokens}
 *   POST /v1/chat_context  {system, user}          -> {tokens}
 *   POST /v1/next_token    {context, top_k}        -> {entries, residual_mass, truncated}
 *   POST /v1/seq_logprob   {context, continuation} -> {logprob}   (null = -inf)
 *   POST /v1/embed         {text}                  -> {embedding}
 *   POST /v1/nli           {premise, hypothesis}   -> {entailment, neutral, contradiction}
 *   POST /v1/reward        {prompt, output}        -> {reward}
 *   POST /v1/chat          {prompt}                -> {reply}
 *
 * Tokens travel as [id, surface] pairs; probabilities as plain JSON numbers
 * (nlohmann emits shortest round-trip doubles, so values survive exactly).
 * Servers free to return only their top-k mark the distribution truncated
 * and report the withheld probability in residual_mass.
 *
 * Authentication is a bearer token: explicit in HttpConfig, else taken from
 * the BACO_API_TOKEN environment variable. One httplib client per backend,
 * guarded by a mutex; workers needing parallel transport use one backend
 * instance per worker.
 */

#include <cstdlib>
#include <limits>
#include <mutex>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <httplib.h>
#include <json.hpp>

#include "backend.hpp"
#include "token.hpp"

namespace baco {

struct HttpConfig {
  int top_k = 64;                 // entries requested per next_token call
  double connect_timeout_s = 5.0;
  double read_timeout_s = 120.0;
  std::string bearer;             // empty = use BACO_API_TOKEN if set

  std::string resolve_bearer() const {
    if (!bearer.empty()) return bearer;
    const char* env = std::getenv("BACO_API_TOKEN");
    return env ? env : "";
  }
};

namespace http_detail {

inline nlohmann::json tokens_to_json(const std::vector<Token>& tokens) {
  nlohmann::json arr = nlohmann::json::array();
  for (const Token& t : tokens) arr.push_back({t.id, t.surface});
  return arr;
}

inline std::vector<Token> tokens_from_json(const nlohmann::json& arr) {
  std::vector<Token> out;
  for (const auto& pair : arr) {
    if (!pair.is_array() || pair.size() != 2)
      throw BackendError("http: token entries must be [id, surface] pairs");
    out.push_back(Token{pair[0].get<TokenId>(), pair[1].get<std::string>()});
  }
  return out;
}

/// Shared transport: owns the httplib client, the auth header, and the
/// fault taxonomy. Thread-safe through one mutex.
class Transport {
 public:
  Transport(std::string base_url, const HttpConfig& cfg)
      : base_url_(std::move(base_url)), client_(base_url_) {
    const auto seconds = [](double s) { return std::chrono::milliseconds(static_cast<int>(s * 1000)); };
    client_.set_connection_timeout(seconds(cfg.connect_timeout_s));
    client_.set_read_timeout(seconds(cfg.read_timeout_s));
    const std::string token = cfg.resolve_bearer();
    if (!token.empty()) headers_.emplace("Authorization", "Bearer " + token);
  }

  nlohmann::json post(const std::string& path, const nlohmann::json& body) {
    std::lock_guard<std::mutex> lock(mutex_);
    return parse(path, client_.Post(path, headers_, body.dump(), "application/json"));
  }

  nlohmann::json get(const std::string& path) {
    std::lock_guard<std::mutex> lock(mutex_);
    return parse(path, client_.Get(path, headers_));
  }

  const std::string& base_url() const { return base_url_; }

 private:
  nlohmann::json parse(const std::string& path, httplib::Result res) {
    if (!res)
      throw BackendError("http " + base_url_ + path + ": " + httplib::to_string(res.error()),
                         /*retryable=*/true);
    if (res->status >= 500)
      throw BackendError("http " + path + ": server status " + std::to_string(res->status),
                         /*retryable=*/true);
    if (res->status != 200)
      throw BackendError("http " + path + ": status " + std::to_string(res->status) + " " +
                         res->body);
    nlohmann::json parsed = nlohmann::json::parse(res->body, nullptr, /*allow_exceptions=*/false);
    if (parsed.is_discarded())
      throw BackendError("http " + path + ": response is not JSON");
    return parsed;
  }

  std::string base_url_;
  httplib::Client client_;
  httplib::Headers headers_;
  std::mutex mutex_;
};

}  // namespace http_detail

// ============================================================================
// HttpModelBackend
// ============================================================================

class HttpModelBackend : public ModelBackend {
 public:
  explicit HttpModelBackend(std::string base_url, HttpConfig cfg = {})
      : transport_(std::move(base_url), cfg), top_k_(cfg.top_k) {}

  std::string identity() const override { return meta().name; }
  std::size_t vocab_size() const override { return meta().vocab_size; }
  Token eos() const override { return meta().eos; }
  std::size_t context_limit() const override { return meta().context_limit; }

  std::vector<Token> tokenize(std::string_view text) const override {
    const auto reply = transport_.post("/v1/tokenize", {{"text", std::string(text)}});
    return fetch_tokens(reply, "/v1/tokenize");
  }

  std::vector<Token> chat_context(std::string_view system, std::string_view user) const override {
    const auto reply = transport_.post(
        "/v1/chat_context", {{"system", std::string(system)}, {"user", std::string(user)}});
    return fetch_tokens(reply, "/v1/chat_context");
  }

  TokenDistribution next_token_distribution(const std::vector<Token>& context) const override {
    const auto reply = transport_.post(
        "/v1/next_token",
        {{"context", http_detail::tokens_to_json(context)}, {"top_k", top_k_}});
    TokenDistribution dist;
    try {
      for (const auto& entry : reply.at("entries")) {
        if (!entry.is_array() || entry.size() != 3)
          throw BackendError("http /v1/next_token: entries must be [id, surface, prob]");
        dist.entries.push_back(
            TokenEntry{Token{entry[0].get<TokenId>(), entry[1].get<std::string>()},
                       entry[2].get<double>()});
      }
      dist.residual_mass = reply.value("residual_mass", 0.0);
      dist.truncated = reply.value("truncated", dist.residual_mass > 0.0);
    } catch (const nlohmann::json::exception& e) {
      throw BackendError(std::string("http /v1/next_token: malformed response: ") + e.what());
    }
    dist.canonicalize();
    try {
      dist.validate();
    } catch (const std::exception& e) {
      throw BackendError(std::string("http /v1/next_token: invalid distribution: ") + e.what());
    }
    return dist;
  }

  double sequence_logprob(const std::vector<Token>& context,
                          const std::vector<Token>& continuation) const override {
    const auto reply =
        transport_.post("/v1/seq_logprob", {{"context", http_detail::tokens_to_json(context)},
                                            {"continuation", http_detail::tokens_to_json(continuation)}});
    const auto it = reply.find("logprob");
    if (it == reply.end())
      throw BackendError("http /v1/seq_logprob: missing logprob field");
    if (it->is_null()) return -std::numeric_limits<double>::infinity();
    if (!it->is_number())
      throw BackendError("http /v1/seq_logprob: logprob must be a number or null");
    return it->get<double>();
  }

 private:
  struct Meta {
    std::string name;
    std::size_t vocab_size = 0;
    Token eos;
    std::size_t context_limit = 0;
  };

  const Meta& meta() const {
    std::lock_guard<std::mutex> lock(meta_mutex_);
    if (!meta_.has_value()) {
      const auto reply = transport_.get("/v1/meta");
      Meta m;
      try {
        m.name = reply.at("name").get<std::string>();
        m.vocab_size = reply.value("vocab_size", std::size_t{0});
        if (reply.contains("eos")) {
          const auto eos_tokens = http_detail::tokens_from_json(nlohmann::json::array({reply["eos"]}));
          m.eos = eos_tokens.front();
        }
        m.context_limit = reply.value("context_limit", std::size_t{0});
      } catch (const nlohmann::json::exception& e) {
        throw BackendError(std::string("http /v1/meta: malformed response: ") + e.what());
      }
      meta_ = std::move(m);
    }
    return *meta_;
  }

  std::vector<Token> fetch_tokens(const nlohmann::json& reply, const char* path) const {
    try {
      return http_detail::tokens_from_json(reply.at("tokens"));
    } catch (const nlohmann::json::exception& e) {
      throw BackendError(std::string("http ") + path + ": malformed response: " + e.what());
    }
  }

  mutable http_detail::Transport transport_;
  int top_k_;
  mutable std::mutex meta_mutex_;
  mutable std::optional<Meta> meta_;
};

// ============================================================================
// HttpScoring
// ============================================================================

class HttpScoring : public ScoringBackends {
 public:
  explicit HttpScoring(std::string base_url, HttpConfig cfg = {})
      : transport_(std::move(base_url), cfg) {}

  std::string identity() const override {
    std::lock_guard<std::mutex> lock(name_mutex_);
    if (name_.empty()) {
      const auto reply = transport_.get("/v1/meta");
      if (!reply.contains("name") || !reply["name"].is_string())
        throw BackendError("http /v1/meta: missing name");
      name_ = reply["name"].get<std::string>();
    }
    return name_;
  }

  std::vector<double> embed(std::string_view text) override {
    const auto reply = transport_.post("/v1/embed", {{"text", std::string(text)}});
    std::vector<double> vec;
    try {
      vec = reply.at("embedding").get<std::vector<double>>();
    } catch (const nlohmann::json::exception& e) {
      throw BackendError(std::string("http /v1/embed: malformed response: ") + e.what());
    }
    for (const double v : vec)
      if (!std::isfinite(v)) throw BackendError("http /v1/embed: non-finite component");
    return vec;
  }

  NliProbs nli(std::string_view premise, std::string_view hypothesis) override {
    const auto reply = transport_.post(
        "/v1/nli", {{"premise", std::string(premise)}, {"hypothesis", std::string(hypothesis)}});
    NliProbs probs;
    try {
      probs.entailment = reply.at("entailment").get<double>();
      probs.neutral = reply.at("neutral").get<double>();
      probs.contradiction = reply.at("contradiction").get<double>();
    } catch (const nlohmann::json::exception& e) {
      throw BackendError(std::string("http /v1/nli: malformed response: ") + e.what());
    }
    const double sum = probs.entailment + probs.neutral + probs.contradiction;
    if (!std::isfinite(sum) || probs.entailment < 0.0 || probs.neutral < 0.0 ||
        probs.contradiction < 0.0 || std::abs(sum - 1.0) > 1e-3)
      throw BackendError("http /v1/nli: probabilities do not form a distribution");
    return probs;
  }

  double reward(std::string_view prompt, std::string_view output) override {
    const auto reply = transport_.post(
        "/v1/reward", {{"prompt", std::string(prompt)}, {"output", std::string(output)}});
    if (!reply.contains("reward") || !reply["reward"].is_number())
      throw BackendError("http /v1/reward: missing numeric reward");
    const double r = reply["reward"].get<double>();
    if (!std::isfinite(r)) throw BackendError("http /v1/reward: non-finite reward");
    return r;
  }

  std::string judge_reply(std::string_view prompt) override {
    const auto reply = transport_.post("/v1/chat", {{"prompt", std::string(prompt)}});
    if (!reply.contains("reply") || !reply["reply"].is_string())
      throw BackendError("http /v1/chat: missing reply");
    return reply["reply"].get<std::string>();
  }

 private:
  mutable http_detail::Transport transport_;
  mutable std::mutex name_mutex_;
  mutable std::string name_;
};

}  // namespace baco
