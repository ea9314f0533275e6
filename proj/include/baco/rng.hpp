#pragma once

/**
 * Counter-Based Random Streams
 *
 * Every random draw in a decode is addressed, not consumed from a shared
 * sequential generator: a draw is a pure function of
 * (seed, prompt_id, sample_id, step, lane, draw index). Two consequences the
 * decoder relies on:
 *
 * - Replaying one trace never requires replaying its siblings, so resumed or
 *   parallelized runs produce byte-identical output.
 * - Consuming extra draws in one lane (e.g. the base model's unused candidate
 *   at a routing step) cannot shift another lane's values, which is what makes
 *   degenerate routing configs collapse exactly onto single-model decoding.
 *
 * Mixing is splitmix64-style finalization over an absorb chain; it is not
 * cryptographic, just well distributed and fast.
 */

#include <cstdint>
#include <string_view>

namespace baco::rng {

constexpr std::uint64_t kGolden = 0x9E3779B97F4A7C15ull;

inline std::uint64_t split_mix(std::uint64_t z) {
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
  return z ^ (z >> 31);
}

inline std::uint64_t absorb(std::uint64_t h, std::uint64_t v) {
  return split_mix(h + kGolden + v);
}

inline std::uint64_t hash_bytes(std::string_view s) {
  // FNV-1a, then finalized; folds string keys (prompt ids) into the chain.
  std::uint64_t h = 0xCBF29CE484222325ull;
  for (const char c : s) {
    h ^= static_cast<unsigned char>(c);
    h *= 0x100000001B3ull;
  }
  return split_mix(h);
}

/// Independent draw lanes within one decode step.
enum class Lane : std::uint64_t {
  decision = 0,  // router coin flips
  aligned = 1,   // sampling from the aligned model (also single-model decoding)
  base = 2,      // sampling from the base model
};

// ============================================================================
// TraceRng
// ============================================================================

/**
 * Draw addressing for one trace: fix (seed, prompt_id, sample_id) once, then
 * read uniforms by (step, lane, draw). `draw` counts re-draws within a step,
 * e.g. resampling after a rejected end-of-sequence token.
 */
class TraceRng {
 public:
  TraceRng(std::uint64_t seed, std::string_view prompt_id, std::uint32_t sample_id) {
    std::uint64_t h = absorb(0, seed);
    h = absorb(h, hash_bytes(prompt_id));
    root_ = absorb(h, sample_id);
  }

  std::uint64_t bits(std::uint32_t step, Lane lane, std::uint32_t draw = 0) const {
    std::uint64_t h = absorb(root_, step);
    h = absorb(h, static_cast<std::uint64_t>(lane));
    return absorb(h, draw);
  }

  /// Uniform in [0, 1), 53 bits of mantissa.
  double uniform(std::uint32_t step, Lane lane, std::uint32_t draw = 0) const {
    return static_cast<double>(bits(step, lane, draw) >> 11) * 0x1.0p-53;
  }

 private:
  std::uint64_t root_ = 0;
};

}  // namespace baco::rng
