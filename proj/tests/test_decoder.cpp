#include <doctest.h>

#include <algorithm>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <baco/decoder.hpp>
#include <baco/lexeme.hpp>
#include <baco/synthetic.hpp>

namespace {

using namespace baco;
using decoding::GenerationConfig;
using decoding::GenerationTrace;
using decoding::Prompt;
using decoding::Source;
using decoding::Termination;

SyntheticModel make_model(std::vector<std::pair<std::string, double>> templates,
                          int piece_len = 0, std::string name = {}) {
  SyntheticModel::Config cfg;
  for (auto& [text, weight] : templates)
    cfg.templates.push_back(SyntheticModel::TemplateSpec{text, weight});
  cfg.piece_len = piece_len;
  cfg.name = std::move(name);
  return SyntheticModel(std::move(cfg));
}

GenerationConfig make_cfg(const std::string& strategy, std::uint64_t seed = 1,
                          int max_tokens = 32) {
  GenerationConfig cfg;
  cfg.strategy = router::StrategySpec::parse(strategy);
  cfg.seed = seed;
  cfg.max_tokens = max_tokens;
  return cfg;
}

std::vector<std::string> surfaces_of(const GenerationTrace& t) {
  std::vector<std::string> out;
  for (const auto& tok : t.tokens) out.push_back(tok.token.surface);
  return out;
}

void check_invariants(const GenerationTrace& t, int max_tokens) {
  CHECK(static_cast<int>(t.tokens.size()) <= max_tokens);
  int switches = 0, base_tokens = 0;
  for (std::size_t i = 0; i < t.tokens.size(); ++i) {
    const auto& tok = t.tokens[i];
    CHECK(tok.token.surface != "<eos>");
    if (i == 0) CHECK(tok.source == Source::aligned);
    if (i > 0 && tok.source != t.tokens[i - 1].source) {
      ++switches;
      // switches happen only where a new word begins
      CHECK(surface_starts_word(tok.token.surface));
    }
    if (tok.source == Source::base) ++base_tokens;
  }
  CHECK(t.switch_count == switches);
  if (!t.tokens.empty())
    CHECK(t.base_fraction ==
          doctest::Approx(static_cast<double>(base_tokens) / t.tokens.size()));
  std::vector<Token> toks;
  for (const auto& tok : t.tokens) toks.push_back(tok.token);
  CHECK(t.text == detokenize(toks));
}

/// Delegating backend that throws once at a scheduled distribution call.
class FlakyModel final : public ModelBackend {
 public:
  FlakyModel(const ModelBackend& inner, int fail_at, bool retryable)
      : inner_(inner), fail_at_(fail_at), retryable_(retryable) {}

  std::string identity() const override { return inner_.identity(); }
  std::size_t vocab_size() const override { return inner_.vocab_size(); }
  Token eos() const override { return inner_.eos(); }
  std::vector<Token> tokenize(std::string_view text) const override {
    return inner_.tokenize(text);
  }
  std::vector<Token> chat_context(std::string_view system, std::string_view user) const override {
    return inner_.chat_context(system, user);
  }
  TokenDistribution next_token_distribution(const std::vector<Token>& ctx) const override {
    if (calls_++ == fail_at_) throw BackendError("scheduled fault", retryable_);
    return inner_.next_token_distribution(ctx);
  }

 private:
  const ModelBackend& inner_;
  int fail_at_;
  bool retryable_;
  mutable int calls_ = 0;
};

/// Hand-scripted backend whose distribution holds a mid-word surface, for
/// exercising the word-start constraint on switch emissions.
class MidWordModel final : public ModelBackend {
 public:
  std::string identity() const override { return "midword-stub"; }
  std::size_t vocab_size() const override { return 4; }
  Token eos() const override { return Token{0, "<eos>"}; }
  std::vector<Token> chat_context(std::string_view, std::string_view user) const override {
    return tokenize(user);
  }
  std::vector<Token> tokenize(std::string_view text) const override {
    std::vector<Token> out;
    std::string cur;
    const auto flush = [&] {
      if (!cur.empty() && cur != " ") out.push_back(Token{kUnknownTokenId, cur});
    };
    for (const char c : text) {
      if (c == ' ') {
        flush();
        cur = " ";
      } else {
        cur += c;
      }
    }
    flush();
    return out;
  }
  TokenDistribution next_token_distribution(const std::vector<Token>&) const override {
    TokenDistribution d;
    d.entries = {{Token{2, "xyz"}, 0.8}, {Token{1, " ok"}, 0.2}};
    return d;
  }
};

}  // namespace

TEST_SUITE("decoder") {

TEST_CASE("degenerate routing reproduces single-model decoding") {
  const SyntheticModel aligned = make_model(
      {{"the cat sat on the mat", 3.0}, {"the dog ran off", 1.0}, {"a bird flew away", 1.0}}, 3);
  const SyntheticModel base = make_model({{"zzz yyy xxx", 1.0}}, 0);

  for (const std::string strategy : {"P:0", "Rand:0"}) {
    for (const std::uint64_t seed : {1ull, 7ull, 42ull}) {
      for (const std::string prompt_text : {"p1", "tell"}) {
        const Prompt prompt{prompt_text, prompt_text};
        GenerationConfig cfg = make_cfg(strategy, seed, 40);
        for (int sample = 0; sample < 5; ++sample) {
          const GenerationTrace collab =
              decoding::decode_one(prompt, base, aligned, cfg, sample);
          const GenerationTrace solo = decoding::decode_single(prompt, aligned, cfg, sample);
          CHECK(surfaces_of(collab) == surfaces_of(solo));
          CHECK(collab.text == solo.text);
          CHECK(collab.terminated_by == solo.terminated_by);
          CHECK(collab.base_fraction == 0.0);
          CHECK(collab.switch_count == 0);
        }
      }
    }
  }
}

TEST_CASE("always-base routing keeps only the forced first token aligned") {
  const SyntheticModel model = make_model({{"alpha beta gamma delta", 1.0}}, 0);
  const Prompt prompt{"p", "go"};
  const GenerationConfig cfg = make_cfg("Rand:1", 5, 32);

  const GenerationTrace t = decoding::decode_one(prompt, model, model, cfg, 0);
  REQUIRE(t.tokens.size() == 4);
  CHECK(t.tokens[0].source == Source::aligned);
  CHECK(t.tokens[0].reason == "first_token");
  for (std::size_t i = 1; i < t.tokens.size(); ++i) {
    CHECK(t.tokens[i].source == Source::base);
    CHECK(t.tokens[i].reason == "Rand");
  }
  CHECK(t.switch_count == 1);
  CHECK(t.base_fraction == doctest::Approx(0.75));
  CHECK(t.text == "alpha beta gamma delta");
  CHECK(t.terminated_by == Termination::eos_aligned_top1);
}

TEST_CASE("first token comes from the aligned model even when base disagrees") {
  const SyntheticModel aligned = make_model({{"alpha beta", 1.0}}, 0);
  const SyntheticModel base = make_model({{"zeta eta", 1.0}}, 0);
  const GenerationTrace t =
      decoding::decode_one(Prompt{"p", "q"}, base, aligned, make_cfg("Rand:1", 3, 8), 0);
  REQUIRE(!t.tokens.empty());
  CHECK(t.tokens[0].token.surface == " alpha");
  CHECK(t.tokens[0].source == Source::aligned);
}

TEST_CASE("distribution call counts are exact for word-level templates") {
  // Single template of four single-token words: every step past the first is
  // a routing step, and the terminal step consults the aligned gate.
  const SyntheticModel aligned = make_model({{"alpha beta gamma delta", 1.0}}, 0, "al");
  const SyntheticModel base = make_model({{"alpha beta gamma delta", 1.0}}, 0, "ba");
  const Prompt prompt{"p", "go"};

  SUBCASE("always-aligned") {
    aligned.reset_dist_calls();
    base.reset_dist_calls();
    const GenerationTrace t =
        decoding::decode_one(prompt, base, aligned, make_cfg("Rand:0", 1, 32), 0);
    CHECK(t.tokens.size() == 4);
    CHECK(aligned.dist_calls() == 5);  // steps 0..3 plus the terminal eos step
    CHECK(base.dist_calls() == 3);     // routing consultations at steps 1..3
  }

  SUBCASE("always-base") {
    aligned.reset_dist_calls();
    base.reset_dist_calls();
    const GenerationTrace t =
        decoding::decode_one(prompt, base, aligned, make_cfg("Rand:1", 1, 32), 0);
    CHECK(t.tokens.size() == 4);
    CHECK(aligned.dist_calls() == 5);  // first token, three routings, eos gate
    CHECK(base.dist_calls() == 4);     // one routing consult, then active steps
  }
}

TEST_CASE("eos is accepted only as the aligned top-1 prediction") {
  // After "x" the aligned model holds eos at 0.4 behind " y" at 0.6: every
  // sampled eos must be rejected and resampled, so all traces read "x y".
  const SyntheticModel model = make_model({{"x", 0.4}, {"x y", 0.6}}, 0);
  const GenerationConfig cfg = make_cfg("P:0", 11, 16);
  for (int sample = 0; sample < 30; ++sample) {
    const GenerationTrace t = decoding::decode_one(Prompt{"q", "q"}, model, model, cfg, sample);
    CHECK(t.text == "x y");
    CHECK(t.terminated_by == Termination::eos_aligned_top1);
    CHECK(t.eos_top1_surface == "<eos>");
  }
}

TEST_CASE("a rejected eos draw resamples deterministically within the step") {
  const SyntheticModel model = make_model({{"a b", 0.3}, {"a b c", 0.7}}, 0);
  const GenerationConfig base_cfg = make_cfg("P:0", 0, 16);

  // Find a (seed, sample) whose step-2 draw lands in the eos region (> 0.7
  // after nucleus renormalization keeps {" c": 0.7, eos: 0.3}).
  bool exercised = false;
  for (std::uint64_t seed = 0; seed < 64 && !exercised; ++seed) {
    for (int sample = 0; sample < 8 && !exercised; ++sample) {
      const rng::TraceRng r(seed, "q", sample);
      if (r.uniform(2, rng::Lane::aligned, 0) <= 0.7) continue;
      exercised = true;
      GenerationConfig cfg = base_cfg;
      cfg.seed = seed;
      const GenerationTrace t =
          decoding::decode_one(Prompt{"q", "q"}, model, model, cfg, sample);
      CHECK(t.text == "a b c");
      CHECK(t.terminated_by == Termination::eos_aligned_top1);
    }
  }
  CHECK(exercised);
}

TEST_CASE("max_tokens caps the trace") {
  const SyntheticModel model = make_model({{"one two three four five", 1.0}}, 0);
  const Prompt prompt{"p", "p"};

  SUBCASE("zero tokens") {
    const GenerationTrace t =
        decoding::decode_one(prompt, model, model, make_cfg("P:0", 1, 0), 0);
    CHECK(t.tokens.empty());
    CHECK(t.text.empty());
    CHECK(t.terminated_by == Termination::max_tokens);
  }

  SUBCASE("mid-template") {
    const GenerationTrace t =
        decoding::decode_one(prompt, model, model, make_cfg("P:0", 1, 3), 0);
    CHECK(t.tokens.size() == 3);
    CHECK(t.text == "one two three");
    CHECK(t.terminated_by == Termination::max_tokens);
  }

  SUBCASE("mid-word with pieces") {
    const SyntheticModel pieces = make_model({{"the cat sat", 1.0}}, 2);
    const GenerationTrace t =
        decoding::decode_one(prompt, pieces, pieces, make_cfg("P:0", 1, 3), 0);
    CHECK(t.tokens.size() == 3);
    CHECK(t.text == "the ca");
  }
}

TEST_CASE("structural invariants hold across strategies and seeds") {
  const SyntheticModel aligned = make_model(
      {{"the cat sat on the mat", 4.0}, {"the dog ran far away", 2.0}, {"a bird flew away", 1.0}},
      2, "al");
  const SyntheticModel base = make_model(
      {{"the cat ran away", 1.0}, {"a dog sat on the mat", 1.0}, {"the bird flew far", 1.0}}, 2,
      "ba");

  for (const std::string strategy :
       {"P:0.5", "H:0.8", "Rand:0.4", "PR:0.9", "HR:1.05", "Punc", "P-Punc:0.5"}) {
    for (const std::uint64_t seed : {3ull, 9ull}) {
      const GenerationConfig cfg = make_cfg(strategy, seed, 30);
      for (const std::string ptext : {"say", "write"}) {
        for (int sample = 0; sample < 3; ++sample) {
          const GenerationTrace t =
              decoding::decode_one(Prompt{ptext, ptext}, base, aligned, cfg, sample);
          check_invariants(t, cfg.max_tokens);
          CHECK(t.config_digest == decoding::config_digest(cfg, base, aligned));
        }
      }
    }
  }
}

TEST_CASE("switch emissions are constrained to word starts") {
  // The stub base offers a mid-word surface at 0.8; when routing hands it
  // the word, the constraint must skip to its word-start alternative.
  const SyntheticModel aligned = make_model({{"one two three", 1.0}}, 0);
  const MidWordModel base;
  const GenerationTrace t =
      decoding::decode_one(Prompt{"p", "p"}, base, aligned, make_cfg("Rand:1", 2, 2), 0);
  REQUIRE(t.tokens.size() == 2);
  CHECK(t.tokens[0].token.surface == " one");
  CHECK(t.tokens[1].token.surface == " ok");
  CHECK(t.tokens[1].source == Source::base);
}

TEST_CASE("models with different tokenizers exchange context as text") {
  // Base emits whole words, aligned emits two-character pieces; every word
  // in the mixed output must still come from the shared template lexicon.
  const SyntheticModel base = make_model(
      {{"the cat sat on the mat", 1.0}, {"the dog ran far away", 1.0}}, 0, "words");
  const SyntheticModel aligned = make_model(
      {{"the cat sat on the mat", 1.0}, {"the dog ran far away", 1.0}}, 2, "pieces");
  const std::set<std::string> vocab = {"the", "cat", "sat", "on",  "mat",
                                       "dog", "ran", "far", "away"};

  for (const std::uint64_t seed : {2ull, 8ull}) {
    const GenerationConfig cfg = make_cfg("Rand:0.5", seed, 30);
    for (int sample = 0; sample < 6; ++sample) {
      const GenerationTrace t =
          decoding::decode_one(Prompt{"p", "p"}, base, aligned, cfg, sample);
      check_invariants(t, cfg.max_tokens);
      std::istringstream words(t.text);
      std::string w;
      while (words >> w) CHECK(vocab.count(w) == 1);
    }
  }
}

TEST_CASE("function-content routing completes words before classifying") {
  const lexeme::Lexicon lex =
      lexeme::Lexicon::load(std::string(BACO_SOURCE_DIR) + "/data/function_words.txt");
  const SyntheticModel model = make_model({{"the cat , sat", 1.0}}, 2);
  const Prompt prompt{"p", "p"};
  const GenerationConfig cfg = make_cfg("FC", 1, 16);

  // "the" (function) and "cat"/"sat" (both candidates content) route to
  // base; the comma routes to aligned. Pieces follow their word's source.
  const GenerationTrace t = decoding::decode_one(prompt, model, model, cfg, 0, &lex);
  REQUIRE(t.tokens.size() == 7);
  const std::vector<Source> expect = {Source::aligned, Source::aligned, Source::base,
                                      Source::base,    Source::aligned, Source::base,
                                      Source::base};
  for (std::size_t i = 0; i < expect.size(); ++i) CHECK(t.tokens[i].source == expect[i]);
  CHECK(t.text == "the cat , sat");
  CHECK(t.switch_count == 3);

  CHECK_THROWS_AS(decoding::decode_one(prompt, model, model, cfg, 0), std::runtime_error);
}

TEST_CASE("judge strategy consults the scoring backend") {
  const SyntheticModel model = make_model({{"red green blue", 1.0}}, 0);
  const Prompt prompt{"p", "pick colors"};
  const GenerationConfig cfg = make_cfg("Judge", 4, 16);

  SUBCASE("affirmative judge routes to base") {
    SyntheticScoring::Config sc;
    sc.judge_kind = "always_yes";
    SyntheticScoring judge(sc);
    const GenerationTrace t = decoding::decode_one(prompt, model, model, cfg, 0, nullptr, &judge);
    REQUIRE(t.tokens.size() == 3);
    CHECK(t.tokens[0].source == Source::aligned);
    CHECK(t.tokens[1].source == Source::base);
    CHECK(t.tokens[2].source == Source::base);
  }

  SUBCASE("negative judge stays aligned") {
    SyntheticScoring::Config sc;
    sc.judge_kind = "always_no";
    SyntheticScoring judge(sc);
    const GenerationTrace t = decoding::decode_one(prompt, model, model, cfg, 0, nullptr, &judge);
    CHECK(t.base_fraction == 0.0);
  }

  SUBCASE("missing judge falls back to aligned") {
    const GenerationTrace t = decoding::decode_one(prompt, model, model, cfg, 0);
    CHECK(t.base_fraction == 0.0);
    for (std::size_t i = 1; i < t.tokens.size(); ++i)
      CHECK(t.tokens[i].reason == "judge_unavailable");
  }
}

TEST_CASE("decode_group is deterministic and numbers samples") {
  const SyntheticModel aligned =
      make_model({{"the cat sat", 2.0}, {"a dog ran", 1.0}}, 0, "al");
  const SyntheticModel base = make_model({{"the dog sat", 1.0}, {"a cat ran", 2.0}}, 0, "ba");
  GenerationConfig cfg = make_cfg("Rand:0.5", 21, 16);
  cfg.samples_per_prompt = 6;
  const Prompt prompt{"story-1", "tell a story"};

  const auto g1 = decoding::decode_group(prompt, base, aligned, cfg);
  const auto g2 = decoding::decode_group(prompt, base, aligned, cfg);
  REQUIRE(g1.size() == 6);
  REQUIRE(g2.size() == 6);
  for (int i = 0; i < 6; ++i) {
    CHECK(g1[i].sample_id == i);
    CHECK(g1[i].to_json().dump() == g2[i].to_json().dump());
  }
}

TEST_CASE("retryable faults are retried, fatal ones propagate") {
  const SyntheticModel inner = make_model({{"the cat sat", 2.0}, {"a dog ran", 1.0}}, 0, "al");
  const SyntheticModel base = make_model({{"the dog sat", 1.0}}, 0, "ba");
  GenerationConfig cfg = make_cfg("Rand:0.3", 13, 16);
  cfg.samples_per_prompt = 4;
  const Prompt prompt{"p", "go"};

  const auto clean = decoding::decode_group(prompt, base, inner, cfg);

  SUBCASE("retryable") {
    const FlakyModel flaky(inner, 7, /*retryable=*/true);
    const auto got = decoding::decode_group(prompt, base, flaky, cfg);
    REQUIRE(got.size() == clean.size());
    for (std::size_t i = 0; i < got.size(); ++i)
      CHECK(got[i].to_json().dump() == clean[i].to_json().dump());
  }

  SUBCASE("fatal") {
    const FlakyModel flaky(inner, 7, /*retryable=*/false);
    CHECK_THROWS_AS(decoding::decode_group(prompt, base, flaky, cfg), BackendError);
  }
}

TEST_CASE("trace json round trip") {
  const SyntheticModel model = make_model({{"x", 0.4}, {"x y z", 0.6}}, 0);
  const GenerationConfig cfg = make_cfg("Rand:0.5", 17, 16);
  for (int sample = 0; sample < 4; ++sample) {
    const GenerationTrace t =
        decoding::decode_one(Prompt{"rt", "rt"}, model, model, cfg, sample);
    const nlohmann::json j = t.to_json();
    const GenerationTrace back = GenerationTrace::from_json(j);
    CHECK(back.to_json().dump() == j.dump());
    if (t.terminated_by == Termination::eos_aligned_top1) {
      CHECK(j.contains("eos_top1_surface"));
    } else {
      CHECK(!j.contains("eos_top1_surface"));
    }
  }
}

TEST_CASE("config digest tracks every generation-shaping field") {
  const SyntheticModel a = make_model({{"x y", 1.0}}, 0, "a");
  const SyntheticModel b = make_model({{"x y", 1.0}}, 0, "b");
  const GenerationConfig cfg = make_cfg("P:0.5", 1, 16);

  CHECK(decoding::config_digest(cfg, a, b) == decoding::config_digest(cfg, a, b));
  CHECK(decoding::config_digest(cfg, a, b) != decoding::config_digest(cfg, b, a));

  GenerationConfig other = cfg;
  other.seed = 2;
  CHECK(decoding::config_digest(other, a, b) != decoding::config_digest(cfg, a, b));
  other = cfg;
  other.strategy = router::StrategySpec::parse("H:0.5");
  CHECK(decoding::config_digest(other, a, b) != decoding::config_digest(cfg, a, b));
  other = cfg;
  other.sampling.temperature = 1.3;
  CHECK(decoding::config_digest(other, a, b) != decoding::config_digest(cfg, a, b));
}

TEST_CASE("decode_single reports single-source bookkeeping") {
  const SyntheticModel model = make_model({{"one two three", 1.0}}, 0);
  const GenerationTrace t =
      decoding::decode_single(Prompt{"p", "p"}, model, make_cfg("P:0", 1, 16), 0);
  REQUIRE(t.tokens.size() == 3);
  CHECK(t.switch_count == 0);
  CHECK(t.base_fraction == 0.0);
  CHECK(t.tokens[0].reason == "first_token");
  CHECK(t.tokens[1].reason == "cont");
  CHECK(t.terminated_by == Termination::eos_aligned_top1);
}

}  // TEST_SUITE
