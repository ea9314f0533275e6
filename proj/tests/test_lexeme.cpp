#include <doctest.h>

#include <cstdio>
#include <fstream>

#include <baco/lexeme.hpp>

using namespace baco;
using lexeme::TokenClass;

namespace {

const lexeme::Lexicon& shipped_lexicon() {
  static const lexeme::Lexicon lex =
      lexeme::Lexicon::load(BACO_SOURCE_DIR "/data/function_words.txt");
  return lex;
}

}  // namespace

TEST_SUITE("lexeme") {

TEST_CASE("punctuation and formatting surfaces") {
  CHECK(lexeme::is_punct_or_format(" ,"));
  CHECK(lexeme::is_punct_or_format(","));
  CHECK(lexeme::is_punct_or_format("\n"));
  CHECK(lexeme::is_punct_or_format(" ("));
  CHECK(lexeme::is_punct_or_format("###"));
  CHECK(lexeme::is_punct_or_format(" ***"));
  CHECK(lexeme::is_punct_or_format("..."));
  CHECK(lexeme::is_punct_or_format("—"));        // em dash
  CHECK(lexeme::is_punct_or_format("→"));        // arrow
  CHECK(lexeme::is_punct_or_format("。"));        // CJK full stop
  CHECK(lexeme::is_punct_or_format("\U0001F600"));    // emoji
  CHECK(lexeme::is_punct_or_format(" "));             // strips to nothing

  CHECK_FALSE(lexeme::is_punct_or_format(" the"));
  CHECK_FALSE(lexeme::is_punct_or_format("ing"));
  CHECK_FALSE(lexeme::is_punct_or_format(" 2024"));   // digits are content
  CHECK_FALSE(lexeme::is_punct_or_format(" can't"));  // apostrophe inside a word
  CHECK_FALSE(lexeme::is_punct_or_format(" café"));  // accented letter
}

TEST_CASE("lexicon: shipped file loads and covers closed classes") {
  const lexeme::Lexicon& lex = shipped_lexicon();
  CHECK(lex.size() > 150);
  for (const char* w : {"the", "and", "of", "is", "not", "would", "their"})
    CHECK(lex.contains(w));
  CHECK(lex.contains("The"));  // case-insensitive
  for (const char* w : {"fox", "mountain", "run", "beautiful"})
    CHECK_FALSE(lex.contains(w));
}

TEST_CASE("lexicon: missing or empty files are errors") {
  CHECK_THROWS_AS(lexeme::Lexicon::load("/nonexistent/words.txt"), std::runtime_error);

  const std::string path = "empty_lexicon_tmp.txt";
  std::ofstream(path) << "# only a comment\n\n";
  CHECK_THROWS_AS(lexeme::Lexicon::load(path), std::runtime_error);
  std::remove(path.c_str());
}

TEST_CASE("classification: boundary, continuation, lexical classes") {
  const lexeme::Lexicon& lex = shipped_lexicon();

  CHECK(lexeme::classify(" the", {}, &lex) == TokenClass::function_word_start);
  CHECK(lexeme::classify(" The", {}, &lex) == TokenClass::function_word_start);
  CHECK(lexeme::classify(" fox", {}, &lex) == TokenClass::content_word_start);
  CHECK(lexeme::classify("ing", {}, &lex) == TokenClass::word_continuation);
  CHECK(lexeme::classify(" ,", {}, &lex) == TokenClass::punct_or_format);
  CHECK(lexeme::classify("\n", {}, &lex) == TokenClass::punct_or_format);

  // Multi-token words classify by their completed word.
  CHECK(lexeme::classify(" with", "without", &lex) == TokenClass::function_word_start);
  CHECK(lexeme::classify(" with", "withstand", &lex) == TokenClass::content_word_start);
  CHECK(lexeme::classify(" th", "the", &lex) == TokenClass::function_word_start);

  // No lexicon: boundary structure only.
  CHECK(lexeme::classify(" the") == TokenClass::word_start);
  CHECK(lexeme::classify("ing") == TokenClass::word_continuation);

  // Exactly one class per surface: punctuation wins over boundary.
  CHECK(lexeme::classify(" (", "(", &lex) == TokenClass::punct_or_format);
}

}  // TEST_SUITE
