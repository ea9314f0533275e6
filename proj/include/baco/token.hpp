#pragma once

/**
 * Token and Next-Token Distribution Types
 *
 * A Token is a (vocabulary id, surface string) pair. Surfaces carry their own
 * word-boundary information: a surface beginning with whitespace (or a known
 * subword boundary marker) starts a new word, anything else continues one.
 *
 * TokenDistribution is the unit of exchange with model backends. Entries are
 * kept in canonical order (probability descending, ties by ascending id) so
 * that top-1 lookups, nucleus truncation, and serialized traces are
 * deterministic across runs and platforms.
 *
 * Distributions may be truncated (a server that returns only its top-k).
 * The unreturned probability mass is carried in residual_mass; entropy adds
 * it back as a single pseudo-entry so truncated and full distributions are
 * comparable.
 */

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace baco {

using TokenId = std::int32_t;

/// Id reserved for surfaces outside a backend's vocabulary (prompt text the
/// backend has never seen). Such tokens are matched by surface, never by id.
constexpr TokenId kUnknownTokenId = -1;

struct Token {
  TokenId id = kUnknownTokenId;
  std::string surface;

  friend bool operator==(const Token& a, const Token& b) {
    return a.id == b.id && a.surface == b.surface;
  }
};

struct TokenEntry {
  Token token;
  double prob = 0.0;
};

// ============================================================================
// TokenDistribution
// ============================================================================

struct TokenDistribution {
  std::vector<TokenEntry> entries;  // canonical: prob desc, ties by id asc
  bool truncated = false;
  double residual_mass = 0.0;       // mass of entries a truncating server withheld

  /// Sort entries into canonical order. Idempotent.
  void canonicalize() {
    std::stable_sort(entries.begin(), entries.end(),
                     [](const TokenEntry& a, const TokenEntry& b) {
                       if (a.prob != b.prob) return a.prob > b.prob;
                       return a.token.id < b.token.id;
                     });
  }

  /// Throws std::runtime_error unless probs are nonnegative, the total mass
  /// (entries + residual) is within tol of 1, and entries are canonical.
  void validate(double tol = 1e-6) const {
    if (entries.empty()) throw std::runtime_error("token distribution: no entries");
    double sum = residual_mass;
    if (residual_mass < 0.0) throw std::runtime_error("token distribution: negative residual mass");
    for (std::size_t i = 0; i < entries.size(); ++i) {
      const double p = entries[i].prob;
      if (!(p >= 0.0) || !std::isfinite(p))
        throw std::runtime_error("token distribution: bad probability");
      if (i > 0) {
        const TokenEntry& prev = entries[i - 1];
        const bool ordered = prev.prob > p ||
                             (prev.prob == p && prev.token.id < entries[i].token.id);
        if (!ordered) throw std::runtime_error("token distribution: entries not canonical");
      }
      sum += p;
    }
    if (std::fabs(sum - 1.0) > tol)
      throw std::runtime_error("token distribution: mass " + std::to_string(sum) + " not ~1");
  }

  const Token& top1() const {
    if (entries.empty()) throw std::runtime_error("token distribution: no entries");
    return entries.front().token;
  }

  double max_prob() const {
    if (entries.empty()) throw std::runtime_error("token distribution: no entries");
    return entries.front().prob;
  }

  /// Shannon entropy in nats. A truncated distribution contributes its
  /// residual mass as one pseudo-entry; zero-probability entries contribute 0.
  double entropy() const {
    double h = 0.0;
    for (const TokenEntry& e : entries)
      if (e.prob > 0.0) h -= e.prob * std::log(e.prob);
    if (residual_mass > 0.0) h -= residual_mass * std::log(residual_mass);
    return h;
  }
};

// ============================================================================
// Surface helpers
// ============================================================================

/// True if this surface begins a new word: leading whitespace, a newline, or
/// one of the common subword boundary markers (U+2581 from sentencepiece,
/// U+0120 "Ġ" from byte-level BPE vocabularies).
inline bool surface_starts_word(std::string_view surface) {
  if (surface.empty()) return false;
  const unsigned char c0 = static_cast<unsigned char>(surface[0]);
  if (c0 == ' ' || c0 == '\t' || c0 == '\n' || c0 == '\r') return true;
  // U+2581 (0xE2 0x96 0x81)
  if (surface.size() >= 3 && c0 == 0xE2 &&
      static_cast<unsigned char>(surface[1]) == 0x96 &&
      static_cast<unsigned char>(surface[2]) == 0x81)
    return true;
  // U+0120 (0xC4 0xA0)
  if (surface.size() >= 2 && c0 == 0xC4 && static_cast<unsigned char>(surface[1]) == 0xA0)
    return true;
  return false;
}

/// Strip a single leading boundary marker, leaving the visible word text.
inline std::string_view strip_boundary_marker(std::string_view surface) {
  if (surface.empty()) return surface;
  const unsigned char c0 = static_cast<unsigned char>(surface[0]);
  if (c0 == ' ' || c0 == '\t' || c0 == '\r') return surface.substr(1);
  if (surface.size() >= 3 && c0 == 0xE2 &&
      static_cast<unsigned char>(surface[1]) == 0x96 &&
      static_cast<unsigned char>(surface[2]) == 0x81)
    return surface.substr(3);
  if (surface.size() >= 2 && c0 == 0xC4 && static_cast<unsigned char>(surface[1]) == 0xA0)
    return surface.substr(2);
  return surface;  // newline surfaces keep their character
}

/// Concatenate surfaces into text. Boundary markers become literal spaces
/// ("Ġ"/U+2581 rewritten, plain spaces kept); one leading space is dropped so
/// texts start flush.
inline std::string detokenize(const std::vector<Token>& tokens, bool strip_leading_space = true) {
  std::string out;
  for (const Token& t : tokens) {
    if (surface_starts_word(t.surface) && t.surface[0] != '\n') {
      out += ' ';
      out += strip_boundary_marker(t.surface);
    } else {
      out += t.surface;
    }
  }
  if (strip_leading_space && !out.empty() && out.front() == ' ') out.erase(out.begin());
  return out;
}

}  // namespace baco
