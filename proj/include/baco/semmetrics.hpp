#pragma once

/**
 * Semantic Diversity and Quality Metrics
 *
 * Group-level scores computed over one prompt's sampled outputs:
 *
 *   cosine_dissimilarity  mean pairwise (1 - cos) of embeddings     (higher = diverse)
 *   vendi                 exp entropy of the similarity spectrum    (higher = diverse)
 *   nli_diversity         mean pairwise entailment probability      (lower  = diverse)
 *   distinct_score        number of equivalence clusters            (higher = diverse)
 *   semantic_entropy      entropy of likelihood-weighted clusters   (higher = diverse)
 *   perplexity            mean per-output exp(-logprob/len)         (lower  = better)
 *   mean_reward           mean scalar reward                        (higher = better)
 *
 * Everything degrades to "missing" rather than guessing: zero-norm embeddings
 * drop their pairs, empty outputs drop out of perplexity, backend failures
 * after retries blank the affected metric. The report records both values and
 * these exclusions.
 *
 * The Vendi spectrum comes from an in-house cyclic Jacobi sweep; group sizes
 * are small (defaults put n at 10), so the O(n^3) per-sweep cost is noise.
 * Cosine dissimilarity is deliberately not clamped: anti-aligned embeddings
 * produce values in (1, 2], and recording them beats hiding them.
 */

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <limits>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "backend.hpp"

namespace baco::semmetrics {

inline constexpr double kEntailThreshold = 0.5;  // bidirectional membership bar
inline constexpr int kBackendRetries = 3;

// ============================================================================
// Small vector/matrix helpers
// ============================================================================

namespace detail {

inline double dot(const std::vector<double>& a, const std::vector<double>& b) {
  double s = 0.0;
  const std::size_t n = std::min(a.size(), b.size());
  for (std::size_t i = 0; i < n; ++i) s += a[i] * b[i];
  return s;
}

inline double norm(const std::vector<double>& a) { return std::sqrt(dot(a, a)); }

inline double clamp01(double p) { return std::min(1.0, std::max(0.0, p)); }

inline double logsumexp(const std::vector<double>& xs) {
  double hi = -std::numeric_limits<double>::infinity();
  for (const double x : xs) hi = std::max(hi, x);
  if (!std::isfinite(hi)) return hi;
  double s = 0.0;
  for (const double x : xs) s += std::exp(x - hi);
  return hi + std::log(s);
}

/**
 * Eigenvalues of a symmetric matrix by cyclic Jacobi rotations. Converges
 * quadratically once off-diagonal mass is small; refuses to return garbage
 * if 100 sweeps do not get there.
 */
inline std::vector<double> symmetric_eigenvalues(std::vector<std::vector<double>> a) {
  const std::size_t n = a.size();
  if (n == 0) return {};
  for (const auto& row : a)
    if (row.size() != n) throw std::invalid_argument("symmetric_eigenvalues: square matrix required");

  constexpr int kMaxSweeps = 100;
  constexpr double kOffTol = 1e-20;  // squared off-diagonal mass
  for (int sweep = 0; sweep < kMaxSweeps; ++sweep) {
    double off = 0.0;
    for (std::size_t p = 0; p < n; ++p)
      for (std::size_t q = p + 1; q < n; ++q) off += a[p][q] * a[p][q];
    if (off < kOffTol) {
      std::vector<double> eig(n);
      for (std::size_t i = 0; i < n; ++i) eig[i] = a[i][i];
      return eig;
    }
    for (std::size_t p = 0; p < n; ++p) {
      for (std::size_t q = p + 1; q < n; ++q) {
        if (std::abs(a[p][q]) < 1e-300) continue;
        const double theta = (a[q][q] - a[p][p]) / (2.0 * a[p][q]);
        const double t =
            (theta >= 0 ? 1.0 : -1.0) / (std::abs(theta) + std::sqrt(theta * theta + 1.0));
        const double c = 1.0 / std::sqrt(t * t + 1.0);
        const double s = t * c;
        for (std::size_t k = 0; k < n; ++k) {
          const double akp = a[k][p], akq = a[k][q];
          a[k][p] = c * akp - s * akq;
          a[k][q] = s * akp + c * akq;
        }
        for (std::size_t k = 0; k < n; ++k) {
          const double apk = a[p][k], aqk = a[q][k];
          a[p][k] = c * apk - s * aqk;
          a[q][k] = s * apk + c * aqk;
        }
      }
    }
  }
  throw std::runtime_error("symmetric_eigenvalues: Jacobi sweep did not converge");
}

/// Retry wrapper for flaky scoring calls: retryable faults get another go,
/// anything else (or exhaustion) collapses to nullopt.
template <typename F>
auto with_retries(F&& f) -> std::optional<decltype(f())> {
  for (int attempt = 0; attempt < kBackendRetries; ++attempt) {
    try {
      return f();
    } catch (const BackendError& e) {
      if (!e.retryable) return std::nullopt;
    }
  }
  return std::nullopt;
}

}  // namespace detail

// ============================================================================
// Embedding-space metrics
// ============================================================================

struct CosineResult {
  std::optional<double> value;
  int excluded_pairs = 0;  // pairs dropped for a zero-norm side
};

/// Mean pairwise cosine dissimilarity, zero-norm embeddings excluded.
inline CosineResult cosine_dissimilarity(const std::vector<std::vector<double>>& embeddings) {
  CosineResult result;
  if (embeddings.size() < 2) return result;
  std::vector<double> norms;
  norms.reserve(embeddings.size());
  for (const auto& e : embeddings) norms.push_back(detail::norm(e));

  double sum = 0.0;
  int pairs = 0;
  for (std::size_t i = 0; i < embeddings.size(); ++i) {
    for (std::size_t j = i + 1; j < embeddings.size(); ++j) {
      if (norms[i] <= 0.0 || norms[j] <= 0.0) {
        ++result.excluded_pairs;
        continue;
      }
      sum += 1.0 - detail::dot(embeddings[i], embeddings[j]) / (norms[i] * norms[j]);
      ++pairs;
    }
  }
  if (pairs > 0) result.value = sum / pairs;
  return result;
}

/**
 * Vendi score: exp of the Shannon entropy of the eigenvalues of K/n, where
 * K is the cosine similarity matrix. Negative eigenvalues (numerical, or
 * from indefinite similarity) clip to zero and the spectrum renormalizes to
 * sum 1, so the result always lands in [1, n].
 */
inline std::optional<double> vendi_score(const std::vector<std::vector<double>>& embeddings) {
  const std::size_t n = embeddings.size();
  if (n == 0) return std::nullopt;
  std::vector<double> norms;
  norms.reserve(n);
  for (const auto& e : embeddings) norms.push_back(detail::norm(e));

  std::vector<std::vector<double>> k(n, std::vector<double>(n, 0.0));
  for (std::size_t i = 0; i < n; ++i) {
    k[i][i] = 1.0;
    for (std::size_t j = i + 1; j < n; ++j) {
      const double sim = (norms[i] <= 0.0 || norms[j] <= 0.0)
                             ? 0.0
                             : detail::dot(embeddings[i], embeddings[j]) / (norms[i] * norms[j]);
      k[i][j] = sim;
      k[j][i] = sim;  // symmetrize by construction
    }
  }
  for (auto& row : k)
    for (double& v : row) v /= static_cast<double>(n);

  std::vector<double> eig = detail::symmetric_eigenvalues(std::move(k));
  double total = 0.0;
  for (double& l : eig) {
    l = std::max(0.0, l);
    total += l;
  }
  if (total <= 0.0) return std::nullopt;
  double entropy = 0.0;
  for (const double l : eig) {
    const double p = l / total;
    if (p > 0.0) entropy -= p * std::log(p);
  }
  return std::exp(entropy);
}

// ============================================================================
// NLI metrics
// ============================================================================

/// Mean single-direction entailment probability over ordered pairs i<j.
inline std::optional<double> nli_diversity(const std::vector<std::string>& texts,
                                           ScoringBackends& scoring) {
  const std::size_t n = texts.size();
  if (n < 2) return std::nullopt;
  double sum = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = i + 1; j < n; ++j) {
      const auto probs =
          detail::with_retries([&] { return scoring.nli(texts[i], texts[j]); });
      if (!probs) return std::nullopt;
      sum += detail::clamp01(probs->entailment);
    }
  }
  return sum / (static_cast<double>(n) * (n - 1) / 2.0);
}

// ============================================================================
// Equivalence clustering, distinct score, semantic entropy
// ============================================================================

struct SemanticClustering {
  std::vector<std::vector<std::size_t>> clusters;  // disjoint cover of 0..n-1
  std::vector<double> member_logprobs;             // per sample, generating system
};

/**
 * Greedy first-fit clustering: samples in index order join the first cluster
 * whose representative (its first member) they entail in both directions at
 * the 0.5 bar, else found a new cluster.
 */
inline std::optional<SemanticClustering> cluster_semantic(const std::vector<std::string>& texts,
                                                          ScoringBackends& scoring,
                                                          std::vector<double> logprobs) {
  if (texts.size() != logprobs.size())
    throw std::invalid_argument("cluster_semantic: one logprob per text required");
  SemanticClustering out;
  out.member_logprobs = std::move(logprobs);
  for (std::size_t i = 0; i < texts.size(); ++i) {
    bool placed = false;
    for (auto& cluster : out.clusters) {
      const std::size_t rep = cluster.front();
      const auto fwd = detail::with_retries([&] { return scoring.nli(texts[i], texts[rep]); });
      if (!fwd) return std::nullopt;
      if (detail::clamp01(fwd->entailment) < kEntailThreshold) continue;
      const auto bwd = detail::with_retries([&] { return scoring.nli(texts[rep], texts[i]); });
      if (!bwd) return std::nullopt;
      if (detail::clamp01(bwd->entailment) < kEntailThreshold) continue;
      cluster.push_back(i);
      placed = true;
      break;
    }
    if (!placed) out.clusters.push_back({i});
  }
  return out;
}

inline int distinct_score(const SemanticClustering& clustering) {
  return static_cast<int>(clustering.clusters.size());
}

/**
 * Likelihood-weighted cluster entropy: each cluster's log mass is the
 * logsumexp of its members' sequence log-probs, masses softmax to a
 * distribution, and the result is its Shannon entropy in nats. Clusters of
 * likely outputs dominate; improbable ones barely register.
 */
inline std::optional<double> semantic_entropy(const SemanticClustering& clustering) {
  std::vector<double> cluster_logmass;
  cluster_logmass.reserve(clustering.clusters.size());
  for (const auto& cluster : clustering.clusters) {
    std::vector<double> members;
    members.reserve(cluster.size());
    for (const std::size_t idx : cluster) members.push_back(clustering.member_logprobs.at(idx));
    cluster_logmass.push_back(detail::logsumexp(members));
  }
  const double total = detail::logsumexp(cluster_logmass);
  if (!std::isfinite(total)) return std::nullopt;
  double entropy = 0.0;
  for (const double lm : cluster_logmass) {
    const double p = std::exp(lm - total);
    if (p > 0.0) entropy -= p * std::log(p);
  }
  return entropy;
}

// ============================================================================
// Quality metrics
// ============================================================================

struct PerplexityResult {
  std::optional<double> value;
  int excluded = 0;  // empty outputs
};

/// Mean over outputs of exp(-logprob / length); zero-length outputs drop out.
inline PerplexityResult perplexity(const std::vector<double>& seq_logprobs,
                                   const std::vector<std::size_t>& lengths) {
  if (seq_logprobs.size() != lengths.size())
    throw std::invalid_argument("perplexity: logprobs and lengths must align");
  PerplexityResult result;
  double sum = 0.0;
  int counted = 0;
  for (std::size_t i = 0; i < seq_logprobs.size(); ++i) {
    if (lengths[i] == 0) {
      ++result.excluded;
      continue;
    }
    sum += std::exp(-seq_logprobs[i] / static_cast<double>(lengths[i]));
    ++counted;
  }
  if (counted > 0) result.value = sum / counted;
  return result;
}

inline std::optional<double> mean_reward(const std::vector<double>& rewards) {
  if (rewards.empty()) return std::nullopt;
  double sum = 0.0;
  for (const double r : rewards) sum += r;
  return sum / static_cast<double>(rewards.size());
}

// ============================================================================
// Report
// ============================================================================

struct SemanticReport {
  std::optional<double> cosine_dissimilarity;
  int cosine_excluded_pairs = 0;
  std::optional<double> vendi;
  std::optional<double> nli_diversity;
  std::optional<int> distinct_score;
  std::optional<double> semantic_entropy;
  std::optional<double> perplexity;
  int perplexity_excluded = 0;
  std::optional<double> mean_reward;

  nlohmann::json to_json() const {
    nlohmann::json metrics;
    nlohmann::json missing = nlohmann::json::array();
    const auto put = [&](const char* name, const std::optional<double>& v) {
      if (v)
        metrics[name] = *v;
      else
        missing.push_back(name);
    };
    put("cosine_dissimilarity", cosine_dissimilarity);
    put("vendi", vendi);
    put("nli_diversity", nli_diversity);
    if (distinct_score)
      metrics["distinct_score"] = *distinct_score;
    else
      missing.push_back("distinct_score");
    put("semantic_entropy", semantic_entropy);
    put("perplexity", perplexity);
    put("mean_reward", mean_reward);
    const nlohmann::json orientations = {
        {"cosine_dissimilarity", "higher"}, {"vendi", "higher"},
        {"nli_diversity", "lower"},         {"distinct_score", "higher"},
        {"semantic_entropy", "higher"},     {"perplexity", "lower"},
        {"mean_reward", "higher"}};
    return {{"metrics", metrics},
            {"orientations", orientations},
            {"missing", missing},
            {"flags",
             {{"cosine_excluded_pairs", cosine_excluded_pairs},
              {"perplexity_excluded", perplexity_excluded}}}};
  }
};

/**
 * Assemble the full report for one group. Sequence log-probs, lengths, and
 * rewards arrive precomputed (the caller owns backend scheduling and
 * caching); embeddings and NLI probabilities are fetched here with retries.
 */
inline SemanticReport semantic_report(const std::vector<std::string>& texts,
                                      ScoringBackends& scoring,
                                      const std::vector<double>& seq_logprobs,
                                      const std::vector<std::size_t>& lengths,
                                      const std::vector<double>& rewards) {
  SemanticReport report;

  std::vector<std::vector<double>> embeddings;
  embeddings.reserve(texts.size());
  bool embeds_ok = true;
  for (const auto& text : texts) {
    auto e = detail::with_retries([&] { return scoring.embed(text); });
    if (!e) {
      embeds_ok = false;
      break;
    }
    embeddings.push_back(std::move(*e));
  }
  if (embeds_ok) {
    const CosineResult cos = cosine_dissimilarity(embeddings);
    report.cosine_dissimilarity = cos.value;
    report.cosine_excluded_pairs = cos.excluded_pairs;
    report.vendi = vendi_score(embeddings);
  }

  report.nli_diversity = nli_diversity(texts, scoring);

  if (const auto clustering = cluster_semantic(texts, scoring, seq_logprobs)) {
    if (!clustering->clusters.empty()) report.distinct_score = distinct_score(*clustering);
    report.semantic_entropy = semantic_entropy(*clustering);
  }

  const PerplexityResult ppl = perplexity(seq_logprobs, lengths);
  report.perplexity = ppl.value;
  report.perplexity_excluded = ppl.excluded;
  report.mean_reward = mean_reward(rewards);
  return report;
}

}  // namespace baco::semmetrics
