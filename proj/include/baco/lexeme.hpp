#pragma once

/**
 * Word-Level Token Classification
 *
 * The router reasons about candidate tokens at the word level:
 *
 * - punct_or_format: the surface, once its boundary marker is stripped,
 *   consists solely of punctuation, symbols, separators, or control
 *   characters (or nothing at all). Covers ",", "\n", "(", markdown "###",
 *   dashes, arrows, CJK punctuation, emoji.
 * - function_word_start / content_word_start: a word-starting token whose
 *   completed word is / is not in the function-word lexicon.
 * - word_continuation: a subword piece inside a word.
 * - word_start: boundary known, lexical class not yet resolved (no lexicon,
 *   or the caller has not completed the word).
 *
 * Multi-token words are classified by their *completed* word; completion is
 * the caller's job (the decoder finishes words by greedy continuation), this
 * header only looks surfaces and words up.
 *
 * Unicode handling is a pragmatic classifier over code-point ranges, not a
 * full category database; it is exact on ASCII and the punctuation blocks
 * that matter for routing English text.
 */

#include <cctype>
#include <cstdint>
#include <fstream>
#include <stdexcept>
#include <string>
#include <string_view>
#include <unordered_set>

#include "token.hpp"

namespace baco::lexeme {

enum class TokenClass {
  word_start,
  word_continuation,
  punct_or_format,
  function_word_start,
  content_word_start,
};

inline const char* to_string(TokenClass c) {
  switch (c) {
    case TokenClass::word_start: return "word_start";
    case TokenClass::word_continuation: return "word_continuation";
    case TokenClass::punct_or_format: return "punct_or_format";
    case TokenClass::function_word_start: return "function_word_start";
    case TokenClass::content_word_start: return "content_word_start";
  }
  return "?";
}

// ============================================================================
// Punctuation / formatting detection
// ============================================================================

namespace detail {

/// Decode one UTF-8 code point at `i`; advances `i`. Malformed bytes decode
/// as U+FFFD and advance by one, so classification never throws on raw bytes.
inline char32_t decode_utf8(std::string_view s, std::size_t& i) {
  const auto byte = [&](std::size_t k) { return static_cast<unsigned char>(s[k]); };
  const unsigned char c0 = byte(i);
  if (c0 < 0x80) {
    ++i;
    return c0;
  }
  int len = 0;
  char32_t cp = 0;
  if ((c0 & 0xE0) == 0xC0) {
    len = 2;
    cp = c0 & 0x1F;
  } else if ((c0 & 0xF0) == 0xE0) {
    len = 3;
    cp = c0 & 0x0F;
  } else if ((c0 & 0xF8) == 0xF0) {
    len = 4;
    cp = c0 & 0x07;
  } else {
    ++i;
    return 0xFFFD;
  }
  if (i + len > s.size()) {
    ++i;
    return 0xFFFD;
  }
  for (int k = 1; k < len; ++k) {
    if ((byte(i + k) & 0xC0) != 0x80) {
      ++i;
      return 0xFFFD;
    }
    cp = (cp << 6) | (byte(i + k) & 0x3F);
  }
  i += len;
  return cp;
}

inline bool is_punct_symbol_cp(char32_t cp) {
  if (cp <= 0x20 || cp == 0x7F) return true;                    // controls + space
  if (cp < 0x80)                                                 // ASCII
    return !(std::isalnum(static_cast<int>(cp)));
  if (cp >= 0x80 && cp <= 0xA0) return true;                     // C1 + nbsp
  if (cp >= 0xA1 && cp <= 0xBF) return true;                     // latin-1 punct/symbols
  if (cp == 0xD7 || cp == 0xF7) return true;                     // multiply, divide
  if (cp >= 0x2000 && cp <= 0x206F) return true;                 // general punctuation
  if (cp >= 0x20A0 && cp <= 0x20CF) return true;                 // currency
  if (cp >= 0x2100 && cp <= 0x2BFF) return true;                 // letterlike..misc symbols
  if (cp >= 0x2E00 && cp <= 0x2E7F) return true;                 // supplemental punctuation
  if (cp >= 0x3000 && cp <= 0x303F) return true;                 // CJK punctuation
  if (cp >= 0xFE30 && cp <= 0xFE4F) return true;                 // compat forms
  if ((cp >= 0xFF01 && cp <= 0xFF0F) || (cp >= 0xFF1A && cp <= 0xFF20) ||
      (cp >= 0xFF3B && cp <= 0xFF40) || (cp >= 0xFF5B && cp <= 0xFF65))
    return true;                                                 // fullwidth punct
  if (cp >= 0x1F000 && cp <= 0x1FAFF) return true;               // emoji & symbols
  return false;
}

}  // namespace detail

/// True if the surface is purely punctuation/formatting once its word
/// boundary marker is stripped; a surface that strips to nothing counts too.
inline bool is_punct_or_format(std::string_view surface) {
  const std::string_view body = strip_boundary_marker(surface);
  std::size_t i = 0;
  while (i < body.size()) {
    if (!detail::is_punct_symbol_cp(detail::decode_utf8(body, i))) return false;
  }
  return true;
}

// ============================================================================
// Function-word lexicon
// ============================================================================

class Lexicon {
 public:
  /// Load one word per line; '#' starts a comment; matching is lowercase.
  /// A missing or empty lexicon is a config error, not a silent fallback.
  static Lexicon load(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("lexicon: cannot open '" + path + "'");
    Lexicon lex;
    std::string line;
    while (std::getline(in, line)) {
      if (!line.empty() && line.back() == '\r') line.pop_back();
      const std::size_t hash = line.find('#');
      if (hash != std::string::npos) line.resize(hash);
      std::string word;
      for (const char c : line)
        if (!std::isspace(static_cast<unsigned char>(c)))
          word += static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
      if (!word.empty()) lex.words_.insert(std::move(word));
    }
    if (lex.words_.empty())
      throw std::runtime_error("lexicon: '" + path + "' contains no words");
    return lex;
  }

  bool contains(std::string_view word) const {
    std::string lower;
    lower.reserve(word.size());
    for (const char c : word)
      lower += static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
    return words_.count(lower) > 0;
  }

  std::size_t size() const { return words_.size(); }

 private:
  std::unordered_set<std::string> words_;
};

// ============================================================================
// Classification
// ============================================================================

/**
 * Classify one token. `completed_word` is the full word the token begins
 * (empty = use the token's own surface); `lexicon` may be null when the
 * caller only needs boundary/punctuation structure, in which case word
 * starts come back as the generic word_start.
 */
inline TokenClass classify(std::string_view surface, std::string_view completed_word = {},
                           const Lexicon* lexicon = nullptr) {
  if (is_punct_or_format(surface)) return TokenClass::punct_or_format;
  if (!surface_starts_word(surface)) return TokenClass::word_continuation;
  if (lexicon == nullptr) return TokenClass::word_start;
  const std::string_view word =
      completed_word.empty() ? strip_boundary_marker(surface) : completed_word;
  return lexicon->contains(word) ? TokenClass::function_word_start
                                 : TokenClass::content_word_start;
}

}  // namespace baco::lexeme
