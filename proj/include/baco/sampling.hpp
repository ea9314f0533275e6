#pragma once

/**
 * Temperature and Nucleus Sampling
 *
 * apply_sampling turns a raw next-token distribution into the distribution
 * actually sampled from: temperature rescaling (p -> p^(1/T), renormalized)
 * followed by nucleus truncation (smallest canonical-order prefix whose
 * cumulative mass reaches top_p, renormalized).
 *
 * Sampling itself is split out as a pure function of (distribution, uniform)
 * so a draw can be replayed from its counter-based address.
 *
 * Truncated inputs: sampling operates on the listed support only; the
 * residual mass a truncating server withheld is dropped and the listed
 * entries are renormalized before temperature is applied.
 */

#include <cmath>
#include <stdexcept>

#include "token.hpp"

namespace baco::sampling {

struct Params {
  double temperature = 1.0;  // > 0
  double top_p = 0.9;        // in (0, 1]
};

/// Raw distribution -> sampled distribution. Input must be canonical.
inline TokenDistribution apply_sampling(const TokenDistribution& raw, const Params& params) {
  if (!(params.temperature > 0.0))
    throw std::invalid_argument("apply_sampling: temperature must be > 0");
  if (!(params.top_p > 0.0) || params.top_p > 1.0)
    throw std::invalid_argument("apply_sampling: top_p must be in (0, 1]");

  TokenDistribution out;
  out.entries.reserve(raw.entries.size());
  for (const TokenEntry& e : raw.entries)
    if (e.prob > 0.0) out.entries.push_back(e);
  if (out.entries.empty())
    throw std::runtime_error("apply_sampling: no positive-probability entries");

  // Temperature in log space; p^(1/T) is order-preserving, so canonical
  // order survives and only the values change.
  double sum = 0.0;
  for (TokenEntry& e : out.entries) {
    e.prob = std::exp(std::log(e.prob) / params.temperature);
    sum += e.prob;
  }
  for (TokenEntry& e : out.entries) e.prob /= sum;

  // Nucleus: keep the smallest prefix with cumulative mass >= top_p.
  double cum = 0.0;
  std::size_t keep = out.entries.size();
  for (std::size_t i = 0; i < out.entries.size(); ++i) {
    cum += out.entries[i].prob;
    if (cum >= params.top_p) {
      keep = i + 1;
      break;
    }
  }
  out.entries.resize(keep);
  double kept = 0.0;
  for (const TokenEntry& e : out.entries) kept += e.prob;
  for (TokenEntry& e : out.entries) e.prob /= kept;

  out.truncated = false;
  out.residual_mass = 0.0;
  return out;
}

/// Inverse-CDF draw. u in [0, 1); dist entries must sum to ~1.
inline std::size_t sample_index(const TokenDistribution& dist, double u) {
  if (dist.entries.empty()) throw std::runtime_error("sample_index: empty distribution");
  double cum = 0.0;
  for (std::size_t i = 0; i < dist.entries.size(); ++i) {
    cum += dist.entries[i].prob;
    if (u < cum) return i;
  }
  return dist.entries.size() - 1;  // float slack on the last entry
}

inline const Token& sample(const TokenDistribution& dist, double u) {
  return dist.entries[sample_index(dist, u)].token;
}

/// Remove one token id and renormalize. Returns false when nothing positive
/// remains (caller decides how to terminate).
inline bool mask_and_renormalize(TokenDistribution& dist, TokenId id) {
  std::erase_if(dist.entries, [id](const TokenEntry& e) { return e.token.id == id; });
  double sum = 0.0;
  for (const TokenEntry& e : dist.entries) sum += e.prob;
  if (sum <= 0.0 || dist.entries.empty()) {
    dist.entries.clear();
    return false;
  }
  for (TokenEntry& e : dist.entries) e.prob /= sum;
  return true;
}

}  // namespace baco::sampling
