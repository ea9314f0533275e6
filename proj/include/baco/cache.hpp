#pragma once

/**
 * Scoring Cache
 *
 * Metric evaluation issues O(n^2) scoring calls per group and repeats most
 * of them across metrics (NLI diversity and clustering share pairs, cosine
 * and Vendi share embeddings). CachingScoring decorates any ScoringBackends
 * with content-addressed memoization: key = SHA-256 over (backend identity,
 * operation, request payload).
 *
 * One lock guards lookup, compute, and insert, so each key is computed
 * exactly once even under concurrent workers. The inner backend is the
 * bottleneck in every real deployment (network or model latency), and it is
 * typically serialized anyway; correctness first. Failures propagate and are
 * never cached, so a retry after a transport fault recomputes.
 */

#include <memory>
#include <mutex>
#include <string>
#include <string_view>
#include <unordered_map>
#include <utility>

#include "backend.hpp"
#include "digest.hpp"

namespace baco {

class CachingScoring : public ScoringBackends {
 public:
  struct Stats {
    std::size_t hits = 0;
    std::size_t misses = 0;
  };

  explicit CachingScoring(std::shared_ptr<ScoringBackends> inner) : inner_(std::move(inner)) {
    if (!inner_) throw std::invalid_argument("CachingScoring: null inner backend");
  }

  std::string identity() const override { return inner_->identity(); }

  std::vector<double> embed(std::string_view text) override {
    return lookup(embed_, key("embed", text), [&] { return inner_->embed(text); });
  }

  NliProbs nli(std::string_view premise, std::string_view hypothesis) override {
    return lookup(nli_, key("nli", premise, hypothesis),
                  [&] { return inner_->nli(premise, hypothesis); });
  }

  double reward(std::string_view prompt, std::string_view output) override {
    return lookup(reward_, key("reward", prompt, output),
                  [&] { return inner_->reward(prompt, output); });
  }

  std::string judge_reply(std::string_view prompt) override {
    return lookup(judge_, key("judge", prompt), [&] { return inner_->judge_reply(prompt); });
  }

  Stats stats() const {
    std::lock_guard<std::mutex> lock(mutex_);
    return stats_;
  }

  void clear() {
    std::lock_guard<std::mutex> lock(mutex_);
    embed_.clear();
    nli_.clear();
    reward_.clear();
    judge_.clear();
    stats_ = Stats{};
  }

 private:
  std::string key(std::string_view op, std::string_view a, std::string_view b = {}) const {
    std::string payload = inner_->identity();
    payload += '\x1f';
    payload += op;
    payload += '\x1f';
    payload += a;
    payload += '\x1f';
    payload += b;
    return detail::sha256_hex(payload);
  }

  template <typename Map, typename Fn>
  typename Map::mapped_type lookup(Map& cache, const std::string& k, Fn&& compute) {
    std::lock_guard<std::mutex> lock(mutex_);
    const auto it = cache.find(k);
    if (it != cache.end()) {
      ++stats_.hits;
      return it->second;
    }
    // compute under the lock: exactly-once per key, failures never inserted
    typename Map::mapped_type value = compute();
    ++stats_.misses;
    cache.emplace(k, value);
    return value;
  }

  std::shared_ptr<ScoringBackends> inner_;
  mutable std::mutex mutex_;
  std::unordered_map<std::string, std::vector<double>> embed_;
  std::unordered_map<std::string, NliProbs> nli_;
  std::unordered_map<std::string, double> reward_;
  std::unordered_map<std::string, std::string> judge_;
  Stats stats_;
};

}  // namespace baco
