#pragma once

/**
 * Lexical Diversity Metrics
 *
 * Group-level surface diversity over a set of sampled outputs:
 *
 *   distinct_n    unique n-grams / total n-grams       (higher = diverse)
 *   ead_n         expectation-adjusted distinct, normalized by what a
 *                 uniform draw over vocab^n would reach (higher = diverse)
 *   self_bleu     mean BLEU of each output against the rest   (lower = diverse)
 *   self_rouge_l  mean pairwise LCS F1                        (lower = diverse)
 *
 * Distinct, BLEU and ROUGE work on rule-based word tokens: whitespace split
 * with trailing punctuation detached into standalone tokens. EAD instead
 * consumes model-tokenizer sequences, so its vocabulary normalization refers
 * to the tokenizer that produced the text; its denominator is evaluated in
 * log space because vocab^n overflows any integer width long before it
 * troubles a double's exponent.
 */

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstddef>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include <json.hpp>

namespace baco::lexmetrics {

inline constexpr double kCountEps = 1e-10;    // guards the 0/0 empty-group case
inline constexpr double kBleuSmooth = 1e-9;   // replaces zero n-gram precisions

// ============================================================================
// Word tokenization
// ============================================================================

/// Whitespace split; trailing ASCII punctuation peels off into one token per
/// character ("end.!" -> "end", ".", "!"). Interior punctuation stays put.
inline std::vector<std::string> word_tokenize(std::string_view text) {
  std::vector<std::string> out;
  std::size_t i = 0;
  while (i < text.size()) {
    while (i < text.size() && std::isspace(static_cast<unsigned char>(text[i]))) ++i;
    std::size_t j = i;
    while (j < text.size() && !std::isspace(static_cast<unsigned char>(text[j]))) ++j;
    if (j == i) break;
    std::string_view chunk = text.substr(i, j - i);
    std::size_t end = chunk.size();
    while (end > 0 && std::ispunct(static_cast<unsigned char>(chunk[end - 1]))) --end;
    if (end > 0) out.emplace_back(chunk.substr(0, end));
    for (std::size_t k = end; k < chunk.size(); ++k) out.emplace_back(1, chunk[k]);
    i = j;
  }
  return out;
}

// ============================================================================
// n-gram helpers
// ============================================================================

namespace detail {

/// n-gram -> count, keys joined with an unlikely separator byte.
inline std::unordered_map<std::string, int> ngram_counts(const std::vector<std::string>& tokens,
                                                         int n) {
  std::unordered_map<std::string, int> counts;
  if (n <= 0 || tokens.size() < static_cast<std::size_t>(n)) return counts;
  for (std::size_t i = 0; i + n <= tokens.size(); ++i) {
    std::string key = tokens[i];
    for (int k = 1; k < n; ++k) {
      key += '\x1f';
      key += tokens[i + k];
    }
    ++counts[key];
  }
  return counts;
}

}  // namespace detail

// ============================================================================
// Distinct-n and EAD-n
// ============================================================================

/// Unique n-grams over the pooled group, relative to the total count.
inline double distinct_n(const std::vector<std::vector<std::string>>& token_groups, int n) {
  if (n < 1) throw std::invalid_argument("distinct_n: n must be >= 1");
  std::unordered_map<std::string, int> pooled;
  long long total = 0;
  for (const auto& tokens : token_groups)
    for (const auto& [key, count] : detail::ngram_counts(tokens, n)) {
      pooled[key] += count;
      total += count;
    }
  return static_cast<double>(pooled.size()) / (static_cast<double>(total) + kCountEps);
}

inline double distinct_n_texts(const std::vector<std::string>& texts, int n) {
  std::vector<std::vector<std::string>> groups;
  groups.reserve(texts.size());
  for (const auto& t : texts) groups.push_back(word_tokenize(t));
  return distinct_n(groups, n);
}

/**
 * Expectation-adjusted distinct: unique n-grams divided by the expected
 * number of distinct values after |G| uniform draws from V = vocab^n bins,
 * V * (1 - ((V-1)/V)^|G|). Token sequences must come from the tokenizer the
 * vocabulary size describes.
 */
inline double ead_n(const std::vector<std::vector<std::string>>& token_groups, int n,
                    std::size_t vocab_size) {
  if (n < 1) throw std::invalid_argument("ead_n: n must be >= 1");
  if (vocab_size < 2) throw std::invalid_argument("ead_n: vocab_size must be >= 2");
  std::unordered_map<std::string, int> pooled;
  long long total = 0;
  for (const auto& tokens : token_groups)
    for (const auto& [key, count] : detail::ngram_counts(tokens, n)) {
      pooled[key] += count;
      total += count;
    }
  if (total == 0) return 0.0;
  // log V = n log vocab; 1/V = exp(-log V); all composition via log1p/expm1
  const double log_v = n * std::log(static_cast<double>(vocab_size));
  const double inv_v = std::exp(-log_v);
  const double log_fill = std::log(-std::expm1(static_cast<double>(total) * std::log1p(-inv_v)));
  const double denom = std::exp(log_v + log_fill);
  // groups more spread than uniform sampling would nominally exceed 1;
  // the metric is defined on the unit range, so clip
  return std::min(1.0, static_cast<double>(pooled.size()) / (denom + kCountEps));
}

// ============================================================================
// Self-BLEU
// ============================================================================

namespace detail {

/// 4-gram BLEU of one hypothesis against multiple references: clipped
/// modified precision, zero precisions smoothed, orders without hypothesis
/// n-grams skipped, brevity penalty against the closest reference length
/// (ties resolved toward the shorter).
inline double bleu(const std::vector<std::string>& hyp,
                   const std::vector<const std::vector<std::string>*>& refs) {
  std::vector<double> log_precisions;
  for (int n = 1; n <= 4; ++n) {
    const auto hyp_counts = ngram_counts(hyp, n);
    long long denom = 0;
    for (const auto& [key, count] : hyp_counts) denom += count;
    if (denom == 0) continue;
    std::unordered_map<std::string, int> ref_max;
    for (const auto* ref : refs)
      for (const auto& [key, count] : ngram_counts(*ref, n)) {
        int& cur = ref_max[key];
        cur = std::max(cur, count);
      }
    long long clipped = 0;
    for (const auto& [key, count] : hyp_counts) {
      const auto it = ref_max.find(key);
      if (it != ref_max.end()) clipped += std::min(count, it->second);
    }
    double p = static_cast<double>(clipped) / static_cast<double>(denom);
    if (p == 0.0) p = kBleuSmooth;
    log_precisions.push_back(std::log(p));
  }
  if (log_precisions.empty()) return 0.0;

  double log_geo = 0.0;
  for (const double lp : log_precisions) log_geo += lp;
  log_geo /= static_cast<double>(log_precisions.size());

  const auto c = static_cast<long long>(hyp.size());
  long long r = 0;
  long long best_gap = -1;
  for (const auto* ref : refs) {
    const auto len = static_cast<long long>(ref->size());
    const long long gap = std::llabs(len - c);
    if (best_gap < 0 || gap < best_gap || (gap == best_gap && len < r)) {
      best_gap = gap;
      r = len;
    }
  }
  const double bp = (c >= r || c == 0) ? 1.0 : std::exp(1.0 - static_cast<double>(r) / c);
  return bp * std::exp(log_geo);
}

}  // namespace detail

/// Mean BLEU of each output against all others. Needs two outputs to mean
/// anything; smaller groups report missing.
inline std::optional<double> self_bleu(const std::vector<std::string>& texts) {
  if (texts.size() < 2) return std::nullopt;
  std::vector<std::vector<std::string>> tokens;
  tokens.reserve(texts.size());
  for (const auto& t : texts) tokens.push_back(word_tokenize(t));
  double sum = 0.0;
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    std::vector<const std::vector<std::string>*> refs;
    for (std::size_t j = 0; j < tokens.size(); ++j)
      if (j != i) refs.push_back(&tokens[j]);
    sum += detail::bleu(tokens[i], refs);
  }
  return sum / static_cast<double>(tokens.size());
}

// ============================================================================
// Self-ROUGE-L
// ============================================================================

namespace detail {

inline std::size_t lcs_length(const std::vector<std::string>& a, const std::vector<std::string>& b) {
  if (a.empty() || b.empty()) return 0;
  std::vector<std::size_t> prev(b.size() + 1, 0), cur(b.size() + 1, 0);
  for (std::size_t i = 1; i <= a.size(); ++i) {
    for (std::size_t j = 1; j <= b.size(); ++j)
      cur[j] = a[i - 1] == b[j - 1] ? prev[j - 1] + 1 : std::max(prev[j], cur[j - 1]);
    std::swap(prev, cur);
  }
  return prev[b.size()];
}

inline double lcs_f1(const std::vector<std::string>& a, const std::vector<std::string>& b) {
  const std::size_t lcs = lcs_length(a, b);
  if (lcs == 0) return 0.0;
  const double p = static_cast<double>(lcs) / static_cast<double>(b.size());
  const double r = static_cast<double>(lcs) / static_cast<double>(a.size());
  return 2.0 * p * r / (p + r);
}

}  // namespace detail

/// Mean over outputs of the mean LCS F1 against each other output.
inline std::optional<double> self_rouge_l(const std::vector<std::string>& texts) {
  if (texts.size() < 2) return std::nullopt;
  std::vector<std::vector<std::string>> tokens;
  tokens.reserve(texts.size());
  for (const auto& t : texts) tokens.push_back(word_tokenize(t));
  double outer = 0.0;
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    double inner = 0.0;
    for (std::size_t j = 0; j < tokens.size(); ++j)
      if (j != i) inner += detail::lcs_f1(tokens[i], tokens[j]);
    outer += inner / static_cast<double>(tokens.size() - 1);
  }
  return outer / static_cast<double>(tokens.size());
}

// ============================================================================
// Report
// ============================================================================

struct LexicalReport {
  std::map<int, double> distinct;  // n in {1,2,3}
  std::map<int, double> ead;       // n in {1,2,3}
  std::optional<double> self_bleu;
  std::optional<double> self_rouge_l;

  nlohmann::json to_json() const {
    nlohmann::json metrics;
    for (const auto& [n, v] : distinct) metrics["distinct_" + std::to_string(n)] = v;
    for (const auto& [n, v] : ead) metrics["ead_" + std::to_string(n)] = v;
    if (self_bleu) metrics["self_bleu"] = *self_bleu;
    if (self_rouge_l) metrics["self_rouge_l"] = *self_rouge_l;
    nlohmann::json orientations;
    for (const auto& [n, v] : distinct) orientations["distinct_" + std::to_string(n)] = "higher";
    for (const auto& [n, v] : ead) orientations["ead_" + std::to_string(n)] = "higher";
    orientations["self_bleu"] = "lower";
    orientations["self_rouge_l"] = "lower";
    return {{"metrics", metrics}, {"orientations", orientations}};
  }
};

/// Full report: word-token metrics from `texts`, EAD from the matching
/// model-tokenizer sequences and vocabulary size.
inline LexicalReport lexical_report(const std::vector<std::string>& texts,
                                    const std::vector<std::vector<std::string>>& token_seqs,
                                    std::size_t vocab_size) {
  LexicalReport report;
  for (int n = 1; n <= 3; ++n) {
    report.distinct[n] = distinct_n_texts(texts, n);
    report.ead[n] = ead_n(token_seqs, n, vocab_size);
  }
  report.self_bleu = self_bleu(texts);
  report.self_rouge_l = self_rouge_l(texts);
  return report;
}

}  // namespace baco::lexmetrics
