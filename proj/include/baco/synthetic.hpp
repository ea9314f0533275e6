#pragma once

/**
 * Synthetic Backends
 *
 * A SyntheticModel is a weighted-template language model with closed-form
 * behavior: given a context, the induced next-token distribution is the
 * weight-normalized continuation distribution of the templates matching the
 * longest context suffix, optionally smoothed with a small uniform mass over
 * the whole vocabulary. Every number it produces can be recomputed by hand,
 * which is what makes end-to-end decoder and metric tests exact rather than
 * statistical.
 *
 * Matching rule (back-off): try the longest suffix of the context that is a
 * prefix of at least one template; on no match, shorten the suffix; the empty
 * suffix matches every template and yields the first-token distribution. A
 * fully consumed template contributes eos as its continuation.
 *
 * Tokens are whitespace-delimited words carrying a leading-space boundary
 * marker; `piece_len > 0` additionally splits words into fixed-size pieces so
 * multi-token words exist when a test needs them. Newlines are standalone
 * tokens.
 *
 * SyntheticScoring provides deterministic embedding / NLI / reward / judge
 * stand-ins with the same closed-form spirit.
 */

#include <algorithm>
#include <atomic>
#include <cctype>
#include <cmath>
#include <cstdint>
#include <map>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include <json.hpp>

#include "backend.hpp"
#include "digest.hpp"
#include "rng.hpp"
#include "token.hpp"

namespace baco {

// ============================================================================
// SyntheticModel
// ============================================================================

class SyntheticModel final : public ModelBackend {
 public:
  struct TemplateSpec {
    std::string text;
    double weight = 1.0;
  };

  struct Config {
    std::vector<TemplateSpec> templates;
    double smoothing = 0.0;   // per-token uniform mass added before renormalization
    std::uint64_t seed = 0;   // folded into identity only; distributions are seed-free
    std::string name;         // optional; defaults to a config digest
    std::string chat_prefix;  // aligned-style prompt template pieces
    std::string chat_suffix;
    int piece_len = 0;        // 0 = whole-word tokens

    static Config from_json(const nlohmann::json& j) {
      Config cfg;
      if (!j.contains("templates") || !j.at("templates").is_array() || j.at("templates").empty())
        throw BackendError("synthetic config: 'templates' must be a non-empty array");
      for (const auto& t : j.at("templates")) {
        TemplateSpec spec;
        spec.text = t.at("text").get<std::string>();
        spec.weight = t.value("weight", 1.0);
        if (spec.text.empty())
          throw BackendError("synthetic config: template text must be non-empty");
        if (!(spec.weight > 0.0))
          throw BackendError("synthetic config: template weights must be positive");
        cfg.templates.push_back(std::move(spec));
      }
      cfg.smoothing = j.value("smoothing", 0.0);
      if (cfg.smoothing < 0.0)
        throw BackendError("synthetic config: smoothing must be >= 0");
      cfg.seed = j.value("seed", std::uint64_t{0});
      cfg.name = j.value("name", std::string{});
      cfg.chat_prefix = j.value("chat_prefix", std::string{});
      cfg.chat_suffix = j.value("chat_suffix", std::string{});
      cfg.piece_len = j.value("piece_len", 0);
      if (cfg.piece_len < 0)
        throw BackendError("synthetic config: piece_len must be >= 0");
      return cfg;
    }

    nlohmann::json to_json() const {
      nlohmann::json arr = nlohmann::json::array();
      for (const TemplateSpec& t : templates)
        arr.push_back({{"text", t.text}, {"weight", t.weight}});
      return {{"templates", arr},     {"smoothing", smoothing},
              {"seed", seed},         {"name", name},
              {"chat_prefix", chat_prefix}, {"chat_suffix", chat_suffix},
              {"piece_len", piece_len}};
    }
  };

  explicit SyntheticModel(Config cfg) : cfg_(std::move(cfg)) {
    // Vocabulary: every surface appearing in a template, plus eos at id 0.
    // Surfaces are sorted so ids are independent of template order.
    std::vector<std::string> surfaces;
    for (const TemplateSpec& t : cfg_.templates)
      for (const Token& tok : tokenize_surfaces(t.text))
        surfaces.push_back(tok.surface);
    std::sort(surfaces.begin(), surfaces.end());
    surfaces.erase(std::unique(surfaces.begin(), surfaces.end()), surfaces.end());

    vocab_.push_back(kEosSurface);
    vocab_.insert(vocab_.end(), surfaces.begin(), surfaces.end());
    for (TokenId id = 0; id < static_cast<TokenId>(vocab_.size()); ++id)
      vocab_index_[vocab_[id]] = id;

    max_template_len_ = 0;
    for (const TemplateSpec& t : cfg_.templates) {
      CompiledTemplate compiled;
      compiled.weight = t.weight;
      for (Token& tok : tokenize_surfaces(t.text)) {
        tok.id = vocab_index_.at(tok.surface);
        compiled.tokens.push_back(std::move(tok));
      }
      max_template_len_ = std::max(max_template_len_, compiled.tokens.size());
      templates_.push_back(std::move(compiled));
    }

    if (cfg_.name.empty()) {
      identity_ = "synthetic-" + detail::sha256_hex(cfg_.to_json().dump()).substr(0, 12);
    } else {
      identity_ = cfg_.name;
    }
  }

  static SyntheticModel from_json(const nlohmann::json& j) {
    return SyntheticModel(Config::from_json(j));
  }

  std::string identity() const override { return identity_; }

  std::size_t vocab_size() const override { return vocab_.size(); }

  Token eos() const override { return Token{0, kEosSurface}; }

  std::vector<Token> tokenize(std::string_view text) const override {
    std::vector<Token> out = tokenize_surfaces(text);
    for (Token& tok : out) {
      const auto it = vocab_index_.find(tok.surface);
      tok.id = it == vocab_index_.end() ? kUnknownTokenId : it->second;
    }
    return out;
  }

  std::vector<Token> chat_context(std::string_view system, std::string_view user) const override {
    std::string text = cfg_.chat_prefix;
    if (!system.empty()) {
      text += system;
      text += '\n';
    }
    text += user;
    text += cfg_.chat_suffix;
    return tokenize(text);
  }

  TokenDistribution next_token_distribution(const std::vector<Token>& context) const override {
    dist_calls_.fetch_add(1, std::memory_order_relaxed);

    // Back-off suffix match; L = 0 matches everything, so this always lands.
    std::map<TokenId, double> support;
    double total = 0.0;
    const std::size_t max_l = std::min(context.size(), max_template_len_);
    for (std::size_t l = max_l;; --l) {
      for (const CompiledTemplate& t : templates_) {
        if (t.tokens.size() < l) continue;
        if (!suffix_matches(context, t, l)) continue;
        const TokenId next = l < t.tokens.size() ? t.tokens[l].id : 0;
        support[next] += t.weight;
        total += t.weight;
      }
      if (total > 0.0 || l == 0) break;
    }

    const double s = cfg_.smoothing;
    const double v = static_cast<double>(vocab_.size());
    TokenDistribution dist;
    if (s > 0.0) {
      dist.entries.reserve(vocab_.size());
      for (TokenId id = 0; id < static_cast<TokenId>(vocab_.size()); ++id) {
        const auto it = support.find(id);
        const double base = it == support.end() ? 0.0 : it->second / total;
        dist.entries.push_back({Token{id, vocab_[id]}, (base + s) / (1.0 + s * v)});
      }
    } else {
      for (const auto& [id, w] : support)
        dist.entries.push_back({Token{id, vocab_[id]}, w / total});
    }
    dist.canonicalize();
    dist.validate(1e-9);
    return dist;
  }

  /// Number of next_token_distribution calls served; lets tests pin the
  /// decoder's call pattern exactly.
  std::uint64_t dist_calls() const { return dist_calls_.load(std::memory_order_relaxed); }
  void reset_dist_calls() const { dist_calls_.store(0, std::memory_order_relaxed); }

  const Config& config() const { return cfg_; }

 private:
  struct CompiledTemplate {
    std::vector<Token> tokens;
    double weight = 0.0;
  };

  static constexpr const char* kEosSurface = "<eos>";

  // Words become " word" (or fixed-size pieces " wo","rd"); newlines are
  // their own tokens; other whitespace only separates.
  std::vector<Token> tokenize_surfaces(std::string_view text) const {
    std::vector<Token> out;
    std::size_t i = 0;
    while (i < text.size()) {
      const char c = text[i];
      if (c == '\n') {
        out.push_back(Token{kUnknownTokenId, "\n"});
        ++i;
        continue;
      }
      if (std::isspace(static_cast<unsigned char>(c))) {
        ++i;
        continue;
      }
      std::size_t end = i;
      while (end < text.size() && !std::isspace(static_cast<unsigned char>(text[end]))) ++end;
      const std::string_view word = text.substr(i, end - i);
      split_word(word, out);
      i = end;
    }
    return out;
  }

  void split_word(std::string_view word, std::vector<Token>& out) const {
    if (cfg_.piece_len <= 0 || word.size() <= static_cast<std::size_t>(cfg_.piece_len)) {
      out.push_back(Token{kUnknownTokenId, " " + std::string(word)});
      return;
    }
    std::size_t pos = 0;
    bool first = true;
    while (pos < word.size()) {
      std::size_t take = std::min<std::size_t>(cfg_.piece_len, word.size() - pos);
      // Never split inside a UTF-8 code point.
      while (pos + take < word.size() &&
             (static_cast<unsigned char>(word[pos + take]) & 0xC0) == 0x80)
        ++take;
      std::string piece(word.substr(pos, take));
      out.push_back(Token{kUnknownTokenId, first ? " " + piece : piece});
      first = false;
      pos += take;
    }
  }

  static bool suffix_matches(const std::vector<Token>& context, const CompiledTemplate& t,
                             std::size_t l) {
    const std::size_t off = context.size() - l;
    for (std::size_t j = 0; j < l; ++j)
      if (context[off + j].surface != t.tokens[j].surface) return false;
    return true;
  }

  Config cfg_;
  std::vector<CompiledTemplate> templates_;
  std::vector<std::string> vocab_;  // id -> surface; id 0 is eos
  std::unordered_map<std::string, TokenId> vocab_index_;
  std::size_t max_template_len_ = 0;
  std::string identity_;
  mutable std::atomic<std::uint64_t> dist_calls_{0};
};

// ============================================================================
// SyntheticScoring
// ============================================================================

/**
 * Deterministic scoring stand-ins:
 * - embed: L2-normalized hashed bag of words (identical text -> identical
 *   vector; empty text -> all-zero vector).
 * - nli: entailment 1.0 for equal normalized texts, else Jaccard word
 *   overlap; contradiction stays 0.
 * - reward: a constant, or distance of the word count from a target.
 * - judge: fixed "Yes."/"No." replies.
 */
class SyntheticScoring final : public ScoringBackends {
 public:
  struct Config {
    int embed_dim = 64;
    std::string reward_kind = "target_length";  // "constant" | "target_length"
    double reward_constant = 0.0;
    int reward_target = 12;
    std::string judge_kind = "always_no";  // "always_yes" | "always_no"

    static Config from_json(const nlohmann::json& j) {
      Config cfg;
      cfg.embed_dim = j.value("embed_dim", 64);
      if (cfg.embed_dim <= 0) throw BackendError("synthetic scoring: embed_dim must be > 0");
      if (j.contains("reward")) {
        const auto& r = j.at("reward");
        cfg.reward_kind = r.value("kind", cfg.reward_kind);
        cfg.reward_constant = r.value("value", cfg.reward_constant);
        cfg.reward_target = r.value("target", cfg.reward_target);
      }
      cfg.judge_kind = j.value("judge", cfg.judge_kind);
      return cfg;
    }
  };

  SyntheticScoring() = default;
  explicit SyntheticScoring(Config cfg) : cfg_(std::move(cfg)) {}

  std::string identity() const override {
    return "synthetic-scoring-" + std::to_string(cfg_.embed_dim) + "-" + cfg_.reward_kind;
  }

  std::vector<double> embed(std::string_view text) override {
    std::vector<double> v(static_cast<std::size_t>(cfg_.embed_dim), 0.0);
    for (const std::string& w : words(text))
      v[rng::hash_bytes(w) % v.size()] += 1.0;
    double norm = 0.0;
    for (const double x : v) norm += x * x;
    if (norm > 0.0) {
      norm = std::sqrt(norm);
      for (double& x : v) x /= norm;
    }
    return v;
  }

  NliProbs nli(std::string_view premise, std::string_view hypothesis) override {
    const std::vector<std::string> a = words(premise);
    const std::vector<std::string> b = words(hypothesis);
    if (a == b) return {1.0, 0.0, 0.0};
    std::vector<std::string> sa = a, sb = b;
    std::sort(sa.begin(), sa.end());
    sa.erase(std::unique(sa.begin(), sa.end()), sa.end());
    std::sort(sb.begin(), sb.end());
    sb.erase(std::unique(sb.begin(), sb.end()), sb.end());
    std::vector<std::string> inter;
    std::set_intersection(sa.begin(), sa.end(), sb.begin(), sb.end(), std::back_inserter(inter));
    const double uni = static_cast<double>(sa.size() + sb.size() - inter.size());
    const double j = uni > 0.0 ? static_cast<double>(inter.size()) / uni : 0.0;
    return {j, 1.0 - j, 0.0};
  }

  double reward(std::string_view /*prompt*/, std::string_view output) override {
    if (cfg_.reward_kind == "constant") return cfg_.reward_constant;
    if (cfg_.reward_kind == "target_length") {
      const double n = static_cast<double>(words(output).size());
      return -std::fabs(n - static_cast<double>(cfg_.reward_target));
    }
    throw BackendError("synthetic scoring: unknown reward kind '" + cfg_.reward_kind + "'");
  }

  std::string judge_reply(std::string_view /*prompt*/) override {
    if (cfg_.judge_kind == "always_yes") return "Yes.";
    if (cfg_.judge_kind == "always_no") return "No.";
    throw BackendError("synthetic scoring: unknown judge kind '" + cfg_.judge_kind + "'");
  }

 private:
  static std::vector<std::string> words(std::string_view text) {
    std::vector<std::string> out;
    std::string cur;
    for (const char c : text) {
      if (std::isspace(static_cast<unsigned char>(c))) {
        if (!cur.empty()) out.push_back(std::move(cur)), cur.clear();
      } else {
        cur += static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
      }
    }
    if (!cur.empty()) out.push_back(std::move(cur));
    return out;
  }

  Config cfg_;
};

}  // namespace baco
