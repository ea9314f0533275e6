#pragma once

/**
 * Backend Interfaces
 *
 * ModelBackend is the language-model contract the decoder speaks: tokenize,
 * build a prompt context, score the next token, score a continuation.
 * ScoringBackends bundles the judge/embedding/NLI/reward services the
 * evaluator speaks. Implementations: synthetic.hpp (closed-form, for tests
 * and smoke runs) and http_backend.hpp (remote servers).
 *
 * Contract points the rest of the code leans on:
 * - next_token_distribution is a pure function of the context tokens and
 *   returns a canonical, validated distribution.
 * - sequence_logprob is in nats and additive over tokens; -inf means the
 *   continuation is outside the model's support.
 * - Errors distinguish retryable transport faults from fatal input faults
 *   via BackendError::retryable.
 * - Implementations must be callable from multiple evaluation workers at
 *   once (pure or internally synchronized).
 */

#include <cmath>
#include <limits>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "token.hpp"

namespace baco {

struct BackendError : std::runtime_error {
  explicit BackendError(const std::string& what, bool retryable_fault = false)
      : std::runtime_error(what), retryable(retryable_fault) {}
  bool retryable;
};

// ============================================================================
// ModelBackend
// ============================================================================

class ModelBackend {
 public:
  virtual ~ModelBackend() = default;

  /// Stable identifier; folded into cache keys and run digests.
  virtual std::string identity() const = 0;

  virtual std::size_t vocab_size() const = 0;

  virtual Token eos() const = 0;

  /// Max context length in tokens; 0 = unbounded.
  virtual std::size_t context_limit() const { return 0; }

  virtual std::vector<Token> tokenize(std::string_view text) const = 0;

  /// Prompt -> token context. Aligned-style backends apply their chat
  /// template here; base-style backends concatenate plainly.
  virtual std::vector<Token> chat_context(std::string_view system,
                                          std::string_view user) const = 0;

  virtual TokenDistribution next_token_distribution(const std::vector<Token>& context) const = 0;

  /// Sum of per-token log-probs (nats) of `continuation` given `context`.
  /// Default walks next_token_distribution; servers that can score a whole
  /// sequence in one call override this.
  virtual double sequence_logprob(const std::vector<Token>& context,
                                  const std::vector<Token>& continuation) const {
    std::vector<Token> ctx = context;
    double total = 0.0;
    for (const Token& tok : continuation) {
      const TokenDistribution dist = next_token_distribution(ctx);
      double p = 0.0;
      // Surfaces, not ids: continuations may have been retokenized by a
      // different backend and carry unknown ids.
      for (const TokenEntry& e : dist.entries) {
        if (e.token.surface == tok.surface) {
          p = e.prob;
          break;
        }
      }
      if (p <= 0.0) return -std::numeric_limits<double>::infinity();
      total += std::log(p);
      ctx.push_back(tok);
    }
    return total;
  }
};

// ============================================================================
// ScoringBackends
// ============================================================================

struct NliProbs {
  double entailment = 0.0;
  double neutral = 0.0;
  double contradiction = 0.0;
};

class ScoringBackends {
 public:
  virtual ~ScoringBackends() = default;

  virtual std::string identity() const = 0;

  /// Dense sentence embedding. All-zero means the backend could not embed
  /// the text; metric code excludes such rows and flags them.
  virtual std::vector<double> embed(std::string_view text) = 0;

  /// Directional: premise -> hypothesis.
  virtual NliProbs nli(std::string_view premise, std::string_view hypothesis) = 0;

  virtual double reward(std::string_view prompt, std::string_view output) = 0;

  /// Free-form chat completion; the router's judge strategy sends its
  /// decision prompt here and parses the reply.
  virtual std::string judge_reply(std::string_view prompt) = 0;
};

}  // namespace baco
