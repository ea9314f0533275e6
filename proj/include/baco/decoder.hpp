#pragma once

/**
 * Collaborative Token-Level Decoding
 *
 * Two models, one trace. The aligned model supplies the first token; after
 * that the decoder samples the active model one token ahead, and whenever
 * that look-ahead candidate starts a new word it asks the router which model
 * should write the word. Words are atomic: whichever model starts a word
 * finishes it, so every source switch happens on a word-start token and
 * exchanged context always aligns on whitespace.
 *
 * End-of-sequence is accepted only when the aligned model's raw top-1
 * prediction at that position is eos. A sampled eos that fails the gate is
 * masked out and the draw repeated; only tokens on the emission path touch
 * the gate, never a discarded candidate. If masking empties a distribution
 * the trace ends with the max_tokens reason.
 *
 * Randomness is fully addressed (see rng.hpp): position t samples model M
 * through lane(M), re-draws bump a per-step draw index, and router coins use
 * their own lane. Token-identical replay therefore survives resumption,
 * parallelism, and the collapse of degenerate routing configs onto
 * single-model decoding.
 *
 * Cross-tokenizer exchange: each backend keeps its own token context; spans
 * emitted by the other model are folded in as text and retokenized, which the
 * word-boundary rule keeps whitespace-safe.
 */

#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "backend.hpp"
#include "digest.hpp"
#include "lexeme.hpp"
#include "rng.hpp"
#include "router.hpp"
#include "sampling.hpp"
#include "token.hpp"

namespace baco::decoding {

enum class Source { aligned, base };

inline const char* to_string(Source s) { return s == Source::base ? "base" : "aligned"; }

enum class Termination { eos_aligned_top1, max_tokens };

inline const char* to_string(Termination t) {
  return t == Termination::eos_aligned_top1 ? "eos_aligned_top1" : "max_tokens";
}

struct Prompt {
  std::string id;
  std::string text;
};

struct GenerationConfig {
  router::StrategySpec strategy;
  sampling::Params sampling;
  int max_tokens = 96;
  int samples_per_prompt = 10;
  std::uint64_t seed = 0;
  std::string system;          // optional system text for chat templates
  int max_word_pieces = 8;     // greedy word-completion cap (FC classification)
  int retry_limit = 3;         // per-trace retries on retryable backend faults
};

struct TraceToken {
  Token token;
  Source source = Source::aligned;
  std::string reason;  // "first_token", "cont", or the routing reason
};

struct GenerationTrace {
  std::string prompt_id;
  int sample_id = 0;
  std::string text;
  std::vector<TraceToken> tokens;
  Termination terminated_by = Termination::max_tokens;
  int switch_count = 0;
  double base_fraction = 0.0;
  std::string eos_top1_surface;  // aligned raw top-1 at the final step, eos endings only
  std::string config_digest;

  nlohmann::json to_json() const {
    nlohmann::json toks = nlohmann::json::array();
    for (const TraceToken& t : tokens)
      toks.push_back({t.token.surface, decoding::to_string(t.source), t.reason});
    nlohmann::json j = {{"prompt_id", prompt_id},
                        {"sample_id", sample_id},
                        {"text", text},
                        {"tokens", toks},
                        {"terminated_by", decoding::to_string(terminated_by)},
                        {"switch_count", switch_count},
                        {"base_fraction", base_fraction},
                        {"config_digest", config_digest}};
    if (terminated_by == Termination::eos_aligned_top1) j["eos_top1_surface"] = eos_top1_surface;
    return j;
  }

  static GenerationTrace from_json(const nlohmann::json& j) {
    GenerationTrace t;
    t.prompt_id = j.at("prompt_id").get<std::string>();
    t.sample_id = j.at("sample_id").get<int>();
    t.text = j.at("text").get<std::string>();
    for (const auto& tok : j.at("tokens")) {
      TraceToken tt;
      tt.token.surface = tok.at(0).get<std::string>();
      tt.source = tok.at(1).get<std::string>() == "base" ? Source::base : Source::aligned;
      tt.reason = tok.at(2).get<std::string>();
      t.tokens.push_back(std::move(tt));
    }
    t.terminated_by = j.at("terminated_by").get<std::string>() == "eos_aligned_top1"
                          ? Termination::eos_aligned_top1
                          : Termination::max_tokens;
    t.switch_count = j.at("switch_count").get<int>();
    t.base_fraction = j.at("base_fraction").get<double>();
    t.config_digest = j.at("config_digest").get<std::string>();
    t.eos_top1_surface = j.value("eos_top1_surface", std::string{});
    return t;
  }
};

/// Digest identifying everything that shapes a trace: strategy, sampling
/// parameters, limits, seed, and both backend identities.
inline std::string config_digest(const GenerationConfig& cfg, const ModelBackend& base,
                                 const ModelBackend& aligned) {
  const nlohmann::json j = {{"strategy", cfg.strategy.to_json()},
                            {"temperature", cfg.sampling.temperature},
                            {"top_p", cfg.sampling.top_p},
                            {"max_tokens", cfg.max_tokens},
                            {"samples_per_prompt", cfg.samples_per_prompt},
                            {"seed", cfg.seed},
                            {"system", cfg.system},
                            {"base", base.identity()},
                            {"aligned", aligned.identity()}};
  return detail::sha256_hex(j.dump());
}

// ============================================================================
// Internals
// ============================================================================

namespace detail_dec {

/// Per-backend token context, lazily synchronized with the emitted tokens.
/// Own-source tokens append verbatim; foreign spans are folded as text and
/// retokenized (word-aligned, so whitespace-safe).
struct ModelCursor {
  const ModelBackend* model = nullptr;
  Source self = Source::aligned;
  std::vector<Token> ctx;
  std::size_t covered = 0;

  void sync(const std::vector<TraceToken>& emitted) {
    while (covered < emitted.size()) {
      if (emitted[covered].source == self) {
        ctx.push_back(emitted[covered].token);
        ++covered;
        continue;
      }
      std::string foreign;
      while (covered < emitted.size() && emitted[covered].source != self) {
        foreign += emitted[covered].token.surface;
        ++covered;
      }
      for (Token& t : model->tokenize(foreign)) ctx.push_back(std::move(t));
    }
  }
};

/// Greedy argmax continuation of a word begun by `first`, capped. Used only
/// to resolve function/content classes for routing.
inline std::string complete_word(const ModelBackend& model, std::vector<Token> ctx,
                                 const Token& first, int cap) {
  std::string word(strip_boundary_marker(first.surface));
  ctx.push_back(first);
  const Token eos = model.eos();
  for (int k = 0; k < cap; ++k) {
    const TokenDistribution d = model.next_token_distribution(ctx);
    const Token& top = d.top1();
    if (top.id == eos.id || surface_starts_word(top.surface)) break;
    word += top.surface;
    ctx.push_back(top);
  }
  return word;
}

}  // namespace detail_dec

// ============================================================================
// decode_one
// ============================================================================

/**
 * Decode a single trace. `lexicon` is required exactly when the strategy
 * classifies function/content words; `judge` exactly when it consults a
 * judge. Throws BackendError from backend faults (the group layer retries
 * retryable ones) and std::runtime_error on config violations.
 */
inline GenerationTrace decode_one(const Prompt& prompt, const ModelBackend& base,
                                  const ModelBackend& aligned, const GenerationConfig& cfg,
                                  int sample_id, const lexeme::Lexicon* lexicon = nullptr,
                                  ScoringBackends* judge = nullptr) {
  cfg.strategy.validate();
  if (cfg.strategy.needs_lexicon() && lexicon == nullptr)
    throw std::runtime_error("decode_one: strategy needs a function-word lexicon");
  if (cfg.max_tokens < 0) throw std::runtime_error("decode_one: max_tokens must be >= 0");

  const rng::TraceRng rng(cfg.seed, prompt.id, sample_id);

  GenerationTrace trace;
  trace.prompt_id = prompt.id;
  trace.sample_id = sample_id;
  trace.config_digest = config_digest(cfg, base, aligned);

  detail_dec::ModelCursor cur_base{&base, Source::base, base.chat_context(cfg.system, prompt.text)};
  detail_dec::ModelCursor cur_aligned{&aligned, Source::aligned,
                                      aligned.chat_context(cfg.system, prompt.text)};
  const auto cursor = [&](Source s) -> detail_dec::ModelCursor& {
    return s == Source::base ? cur_base : cur_aligned;
  };
  const auto lane = [](Source s) {
    return s == Source::base ? rng::Lane::base : rng::Lane::aligned;
  };

  const Token eos_base = base.eos();
  const Token eos_aligned = aligned.eos();
  const auto eos_of = [&](Source s) -> const Token& {
    return s == Source::base ? eos_base : eos_aligned;
  };

  const auto finalize = [&](Termination why, std::string eos_top1 = {}) {
    trace.terminated_by = why;
    trace.eos_top1_surface = std::move(eos_top1);
    trace.text = [&] {
      std::vector<Token> toks;
      toks.reserve(trace.tokens.size());
      for (const TraceToken& t : trace.tokens) toks.push_back(t.token);
      return detokenize(toks);
    }();
    int switches = 0, base_tokens = 0;
    for (std::size_t i = 0; i < trace.tokens.size(); ++i) {
      if (i > 0 && trace.tokens[i].source != trace.tokens[i - 1].source) ++switches;
      if (trace.tokens[i].source == Source::base) ++base_tokens;
    }
    trace.switch_count = switches;
    trace.base_fraction = trace.tokens.empty()
                              ? 0.0
                              : static_cast<double>(base_tokens) /
                                    static_cast<double>(trace.tokens.size());
    return trace;
  };

  const auto emit = [&](Token tok, Source src, std::string reason) {
    trace.tokens.push_back(TraceToken{std::move(tok), src, std::move(reason)});
  };

  if (cfg.max_tokens == 0) return finalize(Termination::max_tokens);

  // The aligned model's raw distribution at the current step, fetched at
  // most once per step (it both gates eos and feeds routing inputs).
  std::optional<TokenDistribution> aligned_raw_here;
  const auto aligned_raw = [&]() -> const TokenDistribution& {
    if (!aligned_raw_here) {
      cur_aligned.sync(trace.tokens);
      aligned_raw_here = aligned.next_token_distribution(cur_aligned.ctx);
    }
    return *aligned_raw_here;
  };

  enum class GateOutcome { token, ended_eos, exhausted };

  // Emission gate: redraw past rejected eos; optionally constrain the result
  // to word-start surfaces (switch positions must begin a word).
  const auto gate = [&](TokenDistribution post, Source src, std::uint32_t step,
                        std::uint32_t first_draw, Token initial, bool require_word_start,
                        Token& out) -> GateOutcome {
    Token tok = std::move(initial);
    std::uint32_t draw = first_draw;
    while (true) {
      if (tok.id == eos_of(src).id && tok.surface == eos_of(src).surface) {
        if (aligned_raw().top1().id == eos_aligned.id)
          return GateOutcome::ended_eos;
        if (!sampling::mask_and_renormalize(post, tok.id)) return GateOutcome::exhausted;
        tok = sampling::sample(post, rng.uniform(step, lane(src), ++draw));
        continue;
      }
      if (require_word_start && !surface_starts_word(tok.surface)) {
        std::erase_if(post.entries, [](const TokenEntry& e) {
          return !surface_starts_word(e.token.surface);
        });
        double sum = 0.0;
        for (const TokenEntry& e : post.entries) sum += e.prob;
        if (post.entries.empty() || sum <= 0.0) return GateOutcome::exhausted;
        for (TokenEntry& e : post.entries) e.prob /= sum;
        tok = sampling::sample(post, rng.uniform(step, lane(src), ++draw));
        continue;  // eos is not word-start, so this cannot loop with the gate
      }
      out = std::move(tok);
      return GateOutcome::token;
    }
  };

  // --- step 0: forced aligned first token -----------------------------------
  Source active = Source::aligned;
  {
    const TokenDistribution& raw0 = aligned_raw();
    const TokenDistribution post0 = sampling::apply_sampling(raw0, cfg.sampling);
    const Token cand = sampling::sample(post0, rng.uniform(0, rng::Lane::aligned, 0));
    Token tok;
    switch (gate(post0, Source::aligned, 0, 0, cand, /*require_word_start=*/false, tok)) {
      case GateOutcome::ended_eos:
        return finalize(Termination::eos_aligned_top1, eos_aligned.surface);
      case GateOutcome::exhausted:
        return finalize(Termination::max_tokens);
      case GateOutcome::token:
        emit(std::move(tok), Source::aligned, "first_token");
        break;
    }
  }

  // --- steps 1..max ----------------------------------------------------------
  while (static_cast<int>(trace.tokens.size()) < cfg.max_tokens) {
    const auto step = static_cast<std::uint32_t>(trace.tokens.size());
    aligned_raw_here.reset();

    detail_dec::ModelCursor& cur = cursor(active);
    cur.sync(trace.tokens);
    TokenDistribution raw_active;
    if (active == Source::aligned) {
      raw_active = aligned_raw();
    } else {
      raw_active = base.next_token_distribution(cur.ctx);
    }
    const TokenDistribution post_active = sampling::apply_sampling(raw_active, cfg.sampling);

    Token cand = sampling::sample(post_active, rng.uniform(step, lane(active), 0));

    // Continuation pieces and gated redraws stay with the active model until
    // a word-start candidate emerges.
    if (cand.id == eos_of(active).id || !surface_starts_word(cand.surface)) {
      Token tok;
      switch (gate(post_active, active, step, 0, cand, /*require_word_start=*/false, tok)) {
        case GateOutcome::ended_eos:
          return finalize(Termination::eos_aligned_top1, eos_aligned.surface);
        case GateOutcome::exhausted:
          return finalize(Termination::max_tokens);
        case GateOutcome::token:
          break;
      }
      if (!surface_starts_word(tok.surface)) {
        emit(std::move(tok), active, "cont");
        continue;
      }
      cand = std::move(tok);  // a redraw crossed into a new word: route it
    }

    // --- routing step --------------------------------------------------------
    const Source other = active == Source::aligned ? Source::base : Source::aligned;
    detail_dec::ModelCursor& cur_other = cursor(other);
    cur_other.sync(trace.tokens);
    TokenDistribution raw_other;
    if (other == Source::aligned) {
      raw_other = aligned_raw();
    } else {
      raw_other = base.next_token_distribution(cur_other.ctx);
    }
    const TokenDistribution post_other = sampling::apply_sampling(raw_other, cfg.sampling);
    const Token cand_other = sampling::sample(post_other, rng.uniform(step, lane(other), 0));

    const TokenDistribution& raw_base = active == Source::base ? raw_active : raw_other;
    const TokenDistribution& raw_al = active == Source::aligned ? raw_active : raw_other;
    const Token& cand_base = active == Source::base ? cand : cand_other;
    const Token& cand_al = active == Source::aligned ? cand : cand_other;

    router::DecisionInputs inputs;
    inputs.base_max_prob = raw_base.max_prob();
    inputs.base_entropy = raw_base.entropy();
    inputs.aligned_max_prob = raw_al.max_prob();
    inputs.aligned_entropy = raw_al.entropy();
    inputs.user_prompt = prompt.text;
    {
      std::vector<Token> toks;
      toks.reserve(trace.tokens.size());
      for (const TraceToken& t : trace.tokens) toks.push_back(t.token);
      inputs.generated_text = detokenize(toks);
    }

    if (cfg.strategy.needs_token_classes()) {
      if (cfg.strategy.needs_lexicon()) {
        const std::string base_word = detail_dec::complete_word(
            base, cur_base.ctx, cand_base, cfg.max_word_pieces);
        const std::string aligned_word = detail_dec::complete_word(
            aligned, cur_aligned.ctx, cand_al, cfg.max_word_pieces);
        inputs.base_class = lexeme::classify(cand_base.surface, base_word, lexicon);
        inputs.aligned_class = lexeme::classify(cand_al.surface, aligned_word, lexicon);
      } else {
        inputs.base_class = lexeme::classify(cand_base.surface);
        inputs.aligned_class = lexeme::classify(cand_al.surface);
      }
    }

    const double u = rng.uniform(step, rng::Lane::decision, 0);
    const router::RoutingDecision decision = router::decide(cfg.strategy, inputs, u, judge);
    const Source chosen =
        decision.target == router::Route::base ? Source::base : Source::aligned;

    if (chosen == active) {
      emit(cand, active, decision.reason);
      continue;
    }

    // Switching: the incoming model's candidate passes the emission gate and
    // must itself start a word.
    Token tok;
    switch (gate(post_other, other, step, 0, cand_other, /*require_word_start=*/true, tok)) {
      case GateOutcome::ended_eos:
        return finalize(Termination::eos_aligned_top1, eos_aligned.surface);
      case GateOutcome::exhausted:
        return finalize(Termination::max_tokens);
      case GateOutcome::token:
        break;
    }
    emit(std::move(tok), other, decision.reason);
    active = other;
  }

  return finalize(Termination::max_tokens);
}

// ============================================================================
// decode_single
// ============================================================================

/**
 * Single-model decoding with the same draw addressing and eos gate as the
 * collaborative loop (the model gates its own eos). A collaborative config
 * whose router never leaves the aligned model reproduces this token for
 * token with matched seeds.
 */
inline GenerationTrace decode_single(const Prompt& prompt, const ModelBackend& model,
                                     const GenerationConfig& cfg, int sample_id) {
  const rng::TraceRng rng(cfg.seed, prompt.id, sample_id);
  const Token eos = model.eos();

  GenerationTrace trace;
  trace.prompt_id = prompt.id;
  trace.sample_id = sample_id;
  trace.config_digest = config_digest(cfg, model, model);

  std::vector<Token> ctx = model.chat_context(cfg.system, prompt.text);

  const auto finalize = [&](Termination why, std::string eos_top1 = {}) {
    trace.terminated_by = why;
    trace.eos_top1_surface = std::move(eos_top1);
    std::vector<Token> toks;
    for (const TraceToken& t : trace.tokens) toks.push_back(t.token);
    trace.text = detokenize(toks);
    trace.switch_count = 0;
    trace.base_fraction = 0.0;
    return trace;
  };

  while (static_cast<int>(trace.tokens.size()) < cfg.max_tokens) {
    const auto step = static_cast<std::uint32_t>(trace.tokens.size());
    const TokenDistribution raw = model.next_token_distribution(ctx);
    TokenDistribution post = sampling::apply_sampling(raw, cfg.sampling);

    std::uint32_t draw = 0;
    Token tok = sampling::sample(post, rng.uniform(step, rng::Lane::aligned, 0));
    while (tok.id == eos.id && tok.surface == eos.surface) {
      if (raw.top1().id == eos.id) return finalize(Termination::eos_aligned_top1, eos.surface);
      if (!sampling::mask_and_renormalize(post, tok.id)) return finalize(Termination::max_tokens);
      tok = sampling::sample(post, rng.uniform(step, rng::Lane::aligned, ++draw));
    }
    trace.tokens.push_back(TraceToken{tok, Source::aligned, step == 0 ? "first_token" : "cont"});
    ctx.push_back(std::move(tok));
  }
  return finalize(Termination::max_tokens);
}

// ============================================================================
// decode_group
// ============================================================================

/// All samples for one prompt. Retries a trace on retryable backend faults
/// up to cfg.retry_limit; identical draws make retries deterministic.
inline std::vector<GenerationTrace> decode_group(const Prompt& prompt, const ModelBackend& base,
                                                 const ModelBackend& aligned,
                                                 const GenerationConfig& cfg,
                                                 const lexeme::Lexicon* lexicon = nullptr,
                                                 ScoringBackends* judge = nullptr) {
  std::vector<GenerationTrace> group;
  group.reserve(static_cast<std::size_t>(cfg.samples_per_prompt));
  for (int sample = 0; sample < cfg.samples_per_prompt; ++sample) {
    int attempts = 0;
    while (true) {
      try {
        group.push_back(decode_one(prompt, base, aligned, cfg, sample, lexicon, judge));
        break;
      } catch (const BackendError& e) {
        if (!e.retryable || ++attempts >= cfg.retry_limit) throw;
      }
    }
  }
  return group;
}

}  // namespace baco::decoding
