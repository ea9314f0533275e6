#pragma once

/**
 * Backend Server
 *
 * Exposes a ModelBackend and/or ScoringBackends over the JSON protocol in
 * http_backend.hpp, so any in-process backend (synthetic models included)
 * can stand in for a remote one. Used by the `baco serve` tool and by the
 * HTTP round-trip tests, which run client and server in one process.
 *
 * Fault mapping mirrors the client's expectations: a retryable BackendError
 * becomes 503, a fatal one (and any bad-input exception) becomes 400,
 * anything else 500. When a bearer token is configured, requests without
 * the matching Authorization header get 401.
 */

#include <algorithm>
#include <atomic>
#include <memory>
#include <string>
#include <thread>
#include <utility>

#include <httplib.h>
#include <json.hpp>

#include "backend.hpp"
#include "http_backend.hpp"
#include "token.hpp"

namespace baco {

class BackendServer {
 public:
  BackendServer(std::shared_ptr<ModelBackend> model, std::shared_ptr<ScoringBackends> scoring,
                std::string bearer = {})
      : model_(std::move(model)), scoring_(std::move(scoring)), bearer_(std::move(bearer)) {
    if (!model_ && !scoring_)
      throw std::invalid_argument("BackendServer: nothing to serve");
    routes();
  }

  /// Bind to an OS-assigned port (tests); returns the port.
  int bind_any(const std::string& host = "127.0.0.1") {
    const int port = server_.bind_to_any_port(host);
    if (port <= 0) throw std::runtime_error("BackendServer: bind failed on " + host);
    return port;
  }

  /// Blocking; pair with bind_any from another thread.
  bool listen_after_bind() { return server_.listen_after_bind(); }

  /// Blocking convenience for the CLI.
  bool listen(const std::string& host, int port) { return server_.listen(host, port); }

  bool is_running() const { return server_.is_running(); }

  void wait_until_ready() const { server_.wait_until_ready(); }

  void stop() { server_.stop(); }

 private:
  using Request = httplib::Request;
  using Response = httplib::Response;

  void routes() {
    server_.Get("/v1/meta", [this](const Request& req, Response& res) {
      handle(req, res, [&] {
        nlohmann::json meta;
        if (model_) {
          meta["name"] = model_->identity();
          meta["vocab_size"] = model_->vocab_size();
          const Token eos = model_->eos();
          meta["eos"] = {eos.id, eos.surface};
          meta["context_limit"] = model_->context_limit();
        } else {
          meta["name"] = scoring_->identity();
        }
        return meta;
      });
    });

    server_.Post("/v1/tokenize", [this](const Request& req, Response& res) {
      handle(req, res, [&] {
        const auto body = parse_body(req);
        require_model();
        const auto tokens = model_->tokenize(body.at("text").get<std::string>());
        return nlohmann::json{{"tokens", http_detail::tokens_to_json(tokens)}};
      });
    });

    server_.Post("/v1/chat_context", [this](const Request& req, Response& res) {
      handle(req, res, [&] {
        const auto body = parse_body(req);
        require_model();
        const auto tokens = model_->chat_context(body.at("system").get<std::string>(),
                                                 body.at("user").get<std::string>());
        return nlohmann::json{{"tokens", http_detail::tokens_to_json(tokens)}};
      });
    });

    server_.Post("/v1/next_token", [this](const Request& req, Response& res) {
      handle(req, res, [&] {
        const auto body = parse_body(req);
        require_model();
        const auto context = http_detail::tokens_from_json(body.at("context"));
        TokenDistribution dist = model_->next_token_distribution(context);
        const auto top_k = body.value("top_k", 0);
        if (top_k > 0 && static_cast<std::size_t>(top_k) < dist.entries.size()) {
          double kept = 0.0;
          for (int i = 0; i < top_k; ++i) kept += dist.entries[static_cast<std::size_t>(i)].prob;
          dist.entries.resize(static_cast<std::size_t>(top_k));
          dist.residual_mass = std::max(0.0, 1.0 - kept);
          dist.truncated = true;
        }
        nlohmann::json entries = nlohmann::json::array();
        for (const TokenEntry& e : dist.entries)
          entries.push_back({e.token.id, e.token.surface, e.prob});
        return nlohmann::json{{"entries", entries},
                              {"residual_mass", dist.residual_mass},
                              {"truncated", dist.truncated}};
      });
    });

    server_.Post("/v1/seq_logprob", [this](const Request& req, Response& res) {
      handle(req, res, [&] {
        const auto body = parse_body(req);
        require_model();
        const double lp = model_->sequence_logprob(
            http_detail::tokens_from_json(body.at("context")),
            http_detail::tokens_from_json(body.at("continuation")));
        nlohmann::json reply;
        if (std::isfinite(lp))
          reply["logprob"] = lp;
        else
          reply["logprob"] = nullptr;  // JSON has no -inf
        return reply;
      });
    });

    server_.Post("/v1/embed", [this](const Request& req, Response& res) {
      handle(req, res, [&] {
        const auto body = parse_body(req);
        require_scoring();
        return nlohmann::json{{"embedding", scoring_->embed(body.at("text").get<std::string>())}};
      });
    });

    server_.Post("/v1/nli", [this](const Request& req, Response& res) {
      handle(req, res, [&] {
        const auto body = parse_body(req);
        require_scoring();
        const NliProbs p = scoring_->nli(body.at("premise").get<std::string>(),
                                         body.at("hypothesis").get<std::string>());
        return nlohmann::json{{"entailment", p.entailment},
                              {"neutral", p.neutral},
                              {"contradiction", p.contradiction}};
      });
    });

    server_.Post("/v1/reward", [this](const Request& req, Response& res) {
      handle(req, res, [&] {
        const auto body = parse_body(req);
        require_scoring();
        return nlohmann::json{{"reward", scoring_->reward(body.at("prompt").get<std::string>(),
                                                          body.at("output").get<std::string>())}};
      });
    });

    server_.Post("/v1/chat", [this](const Request& req, Response& res) {
      handle(req, res, [&] {
        const auto body = parse_body(req);
        require_scoring();
        return nlohmann::json{{"reply", scoring_->judge_reply(body.at("prompt").get<std::string>())}};
      });
    });
  }

  static nlohmann::json parse_body(const Request& req) {
    nlohmann::json body = nlohmann::json::parse(req.body, nullptr, /*allow_exceptions=*/false);
    if (body.is_discarded()) throw std::invalid_argument("request body is not JSON");
    return body;
  }

  void require_model() const {
    if (!model_) throw std::invalid_argument("this server exposes no model endpoints");
  }

  void require_scoring() const {
    if (!scoring_) throw std::invalid_argument("this server exposes no scoring endpoints");
  }

  bool authorized(const Request& req) const {
    if (bearer_.empty()) return true;
    return req.get_header_value("Authorization") == "Bearer " + bearer_;
  }

  template <typename Fn>
  void handle(const Request& req, Response& res, Fn&& fn) {
    if (!authorized(req)) {
      res.status = 401;
      res.set_content(R"({"error":"unauthorized"})", "application/json");
      return;
    }
    try {
      res.set_content(fn().dump(), "application/json");
    } catch (const BackendError& e) {
      res.status = e.retryable ? 503 : 400;
      res.set_content(nlohmann::json{{"error", e.what()}}.dump(), "application/json");
    } catch (const nlohmann::json::exception& e) {
      res.status = 400;
      res.set_content(nlohmann::json{{"error", e.what()}}.dump(), "application/json");
    } catch (const std::invalid_argument& e) {
      res.status = 400;
      res.set_content(nlohmann::json{{"error", e.what()}}.dump(), "application/json");
    } catch (const std::exception& e) {
      res.status = 500;
      res.set_content(nlohmann::json{{"error", e.what()}}.dump(), "application/json");
    }
  }

  std::shared_ptr<ModelBackend> model_;
  std::shared_ptr<ScoringBackends> scoring_;
  std::string bearer_;
  httplib::Server server_;
};

/// Server on a background thread bound to an ephemeral port; tests and the
/// smoke pipeline use it to exercise the full HTTP path in-process.
class ScopedServer {
 public:
  ScopedServer(std::shared_ptr<ModelBackend> model, std::shared_ptr<ScoringBackends> scoring,
               std::string bearer = {})
      : server_(std::move(model), std::move(scoring), std::move(bearer)) {
    port_ = server_.bind_any();
    thread_ = std::thread([this] { server_.listen_after_bind(); });
    server_.wait_until_ready();
  }

  ~ScopedServer() {
    server_.stop();
    if (thread_.joinable()) thread_.join();
  }

  ScopedServer(const ScopedServer&) = delete;
  ScopedServer& operator=(const ScopedServer&) = delete;

  int port() const { return port_; }
  std::string url() const { return "http://127.0.0.1:" + std::to_string(port_); }

 private:
  BackendServer server_;
  int port_ = 0;
  std::thread thread_;
};

}  // namespace baco
