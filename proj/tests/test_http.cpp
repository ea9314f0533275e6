#include <doctest.h>

#include <atomic>
#include <cstdlib>
#include <memory>
#include <string>
#include <thread>
#include <vector>

#include <httplib.h>

#include <baco/cache.hpp>
#include <baco/decoder.hpp>
#include <baco/http_backend.hpp>
#include <baco/http_server.hpp>
#include <baco/synthetic.hpp>

namespace {

using namespace baco;

std::shared_ptr<SyntheticModel> make_model(const nlohmann::json& j) {
  return std::make_shared<SyntheticModel>(SyntheticModel::Config::from_json(j));
}

std::shared_ptr<SyntheticModel> fixture_model(std::string name, int piece_len = 0) {
  nlohmann::json cfg = {
      {"templates",
       {{{"text", "the cat sat down"}, {"weight", 2.0}},
        {{"text", "the dog ran off"}, {"weight", 1.0}},
        {{"text", "a bird flew away fast"}, {"weight", 1.0}}}},
      {"name", std::move(name)},
      {"piece_len", piece_len},
  };
  return make_model(cfg);
}

/// Counts every call that reaches it; wraps a real synthetic scorer.
class CountingScoring : public ScoringBackends {
 public:
  explicit CountingScoring(SyntheticScoring::Config cfg = {})
      : inner_(std::move(cfg)) {}

  std::string identity() const override { return inner_.identity(); }
  std::vector<double> embed(std::string_view text) override {
    ++embed_calls;
    return inner_.embed(text);
  }
  NliProbs nli(std::string_view premise, std::string_view hypothesis) override {
    ++nli_calls;
    return inner_.nli(premise, hypothesis);
  }
  double reward(std::string_view prompt, std::string_view output) override {
    ++reward_calls;
    return inner_.reward(prompt, output);
  }
  std::string judge_reply(std::string_view prompt) override {
    ++judge_calls;
    return inner_.judge_reply(prompt);
  }

  std::atomic<int> embed_calls{0}, nli_calls{0}, reward_calls{0}, judge_calls{0};

 private:
  SyntheticScoring inner_;
};

/// Throws a scheduled fault on the first N embed calls, then recovers.
class FlakyScoring : public ScoringBackends {
 public:
  FlakyScoring(int failures, bool retryable) : failures_(failures), retryable_(retryable) {}

  std::string identity() const override { return "flaky"; }
  std::vector<double> embed(std::string_view text) override {
    ++calls;
    if (calls <= failures_) throw BackendError("scheduled fault", retryable_);
    return {1.0, static_cast<double>(text.size())};
  }
  NliProbs nli(std::string_view, std::string_view) override { return {1.0, 0.0, 0.0}; }
  double reward(std::string_view, std::string_view) override { return 0.0; }
  std::string judge_reply(std::string_view) override { return "No"; }

  int calls = 0;

 private:
  int failures_;
  bool retryable_;
};

}  // namespace

TEST_SUITE("http") {

TEST_CASE("meta, tokenize, and chat context round-trip the wire") {
  const auto model = fixture_model("wire-model");
  ScopedServer server(model, nullptr);
  HttpModelBackend remote(server.url());

  CHECK(remote.identity() == model->identity());
  CHECK(remote.vocab_size() == model->vocab_size());
  CHECK(remote.eos() == model->eos());
  CHECK(remote.context_limit() == model->context_limit());

  for (const std::string text :
       {std::string("the cat sat"), std::string(""), std::string("na\xc3\xafve caf\xc3\xa9")}) {
    const auto direct = model->tokenize(text);
    const auto wired = remote.tokenize(text);
    REQUIRE(wired.size() == direct.size());
    for (std::size_t i = 0; i < direct.size(); ++i) CHECK(wired[i] == direct[i]);
  }
  const auto direct_ctx = model->chat_context("be brief", "tell me a story");
  const auto wired_ctx = remote.chat_context("be brief", "tell me a story");
  REQUIRE(wired_ctx.size() == direct_ctx.size());
  for (std::size_t i = 0; i < direct_ctx.size(); ++i) CHECK(wired_ctx[i] == direct_ctx[i]);
}

TEST_CASE("next-token distributions survive the wire exactly") {
  const auto model = fixture_model("dist-model");
  ScopedServer server(model, nullptr);
  HttpConfig cfg;
  cfg.top_k = 1000;  // wider than the toy vocabulary: nothing truncated
  HttpModelBackend remote(server.url(), cfg);

  for (const std::string prefix : {std::string(""), std::string("the"), std::string("a bird")}) {
    const auto ctx = model->tokenize(prefix);
    const auto direct = model->next_token_distribution(ctx);
    const auto wired = remote.next_token_distribution(ctx);
    REQUIRE(wired.entries.size() == direct.entries.size());
    for (std::size_t i = 0; i < direct.entries.size(); ++i) {
      CHECK(wired.entries[i].token == direct.entries[i].token);
      // nlohmann serializes shortest round-trip doubles: bitwise equality
      CHECK(wired.entries[i].prob == direct.entries[i].prob);
    }
    CHECK_FALSE(wired.truncated);
    CHECK(wired.residual_mass == 0.0);
  }
}

TEST_CASE("top-k truncation reports honest residual mass") {
  const auto model = fixture_model("trunc-model");
  ScopedServer server(model, nullptr);
  HttpConfig cfg;
  cfg.top_k = 1;
  HttpModelBackend remote(server.url(), cfg);

  const auto ctx = model->tokenize("");  // two first words possible
  const auto full = model->next_token_distribution(ctx);
  REQUIRE(full.entries.size() > 1);
  const auto wired = remote.next_token_distribution(ctx);
  REQUIRE(wired.entries.size() == 1);
  CHECK(wired.truncated);
  CHECK(wired.residual_mass ==
        doctest::Approx(1.0 - wired.entries[0].prob).epsilon(1e-6));
  CHECK(wired.entries[0].token == full.entries[0].token);
  CHECK(wired.entropy() > 0.0);
}

TEST_CASE("sequence logprob crosses the wire including minus infinity") {
  const auto model = fixture_model("logprob-model");
  ScopedServer server(model, nullptr);
  HttpModelBackend remote(server.url());

  const auto ctx = model->tokenize("the");
  const auto good = model->tokenize(" cat sat");
  CHECK(remote.sequence_logprob(ctx, good) ==
        doctest::Approx(model->sequence_logprob(ctx, good)).epsilon(1e-12));

  const std::vector<Token> impossible{Token{kUnknownTokenId, " zebra"}};
  CHECK(remote.sequence_logprob(ctx, impossible) ==
        -std::numeric_limits<double>::infinity());
}

TEST_CASE("decoding through the wire matches decoding in process") {
  const auto base = fixture_model("pair-base");
  const auto aligned = fixture_model("pair-aligned", 2);
  ScopedServer base_server(base, nullptr);
  ScopedServer aligned_server(aligned, nullptr);
  HttpConfig cfg;
  cfg.top_k = 1000;
  HttpModelBackend remote_base(base_server.url(), cfg);
  HttpModelBackend remote_aligned(aligned_server.url(), cfg);

  const decoding::Prompt prompt{"p0", "tell me a story"};
  for (const char* strategy : {"Rand:0.5", "P:0.6"}) {
    decoding::GenerationConfig gen;
    gen.strategy = router::StrategySpec::parse(strategy);
    gen.seed = 11;
    gen.max_tokens = 24;
    const auto direct = decoding::decode_one(prompt, *base, *aligned, gen, 3);
    const auto wired = decoding::decode_one(prompt, remote_base, remote_aligned, gen, 3);
    CHECK(wired.to_json().dump() == direct.to_json().dump());
  }
}

TEST_CASE("scoring endpoints round-trip embeddings, nli, reward, and chat") {
  SyntheticScoring::Config cfg;
  cfg.reward_kind = "constant";
  cfg.reward_constant = 7.62;
  auto scoring = std::make_shared<SyntheticScoring>(cfg);
  SyntheticScoring direct(cfg);
  ScopedServer server(nullptr, scoring);
  HttpScoring remote(server.url());

  CHECK(remote.identity() == direct.identity());

  const auto wired_vec = remote.embed("a small boat");
  const auto direct_vec = direct.embed("a small boat");
  REQUIRE(wired_vec.size() == direct_vec.size());
  for (std::size_t i = 0; i < wired_vec.size(); ++i) CHECK(wired_vec[i] == direct_vec[i]);

  const auto self = remote.nli("same text", "same text");
  CHECK(self.entailment == doctest::Approx(1.0));
  CHECK(self.neutral == doctest::Approx(0.0));
  CHECK(self.contradiction == doctest::Approx(0.0));

  CHECK(remote.reward("any prompt", "any output") == doctest::Approx(7.62));
  CHECK(remote.judge_reply("Is this different? Answer Yes or No.") ==
        direct.judge_reply("Is this different? Answer Yes or No."));
}

TEST_CASE("bearer auth gates every endpoint") {
  const auto model = fixture_model("guarded");
  ScopedServer server(model, nullptr, "sekrit");

  HttpModelBackend anonymous(server.url());
  CHECK_THROWS_WITH_AS(anonymous.vocab_size(), doctest::Contains("401"), BackendError);
  try {
    anonymous.tokenize("x");
    FAIL("expected BackendError");
  } catch (const BackendError& e) {
    CHECK_FALSE(e.retryable);  // auth failures never resolve by retrying
  }

  HttpConfig wrong;
  wrong.bearer = "other";
  CHECK_THROWS_AS(HttpModelBackend(server.url(), wrong).vocab_size(), BackendError);

  HttpConfig right;
  right.bearer = "sekrit";
  CHECK(HttpModelBackend(server.url(), right).identity() == model->identity());

  // the environment variable is the default source
  setenv("BACO_API_TOKEN", "sekrit", 1);
  CHECK(HttpModelBackend(server.url()).identity() == model->identity());
  unsetenv("BACO_API_TOKEN");
}

TEST_CASE("transport and server faults map onto the retryable flag") {
  SUBCASE("unreachable host is retryable") {
    HttpConfig fast;
    fast.connect_timeout_s = 0.2;
    fast.read_timeout_s = 0.2;
    HttpModelBackend remote("http://127.0.0.1:9", fast);  // discard port, nothing listens
    try {
      remote.tokenize("x");
      FAIL("expected BackendError");
    } catch (const BackendError& e) {
      CHECK(e.retryable);
    }
  }
  SUBCASE("retryable backend fault becomes 503 becomes retryable") {
    auto flaky = std::make_shared<FlakyScoring>(1000, /*retryable=*/true);
    ScopedServer server(nullptr, flaky);
    HttpScoring remote(server.url());
    try {
      remote.embed("x");
      FAIL("expected BackendError");
    } catch (const BackendError& e) {
      CHECK(e.retryable);
      CHECK(std::string(e.what()).find("503") != std::string::npos);
    }
  }
  SUBCASE("fatal backend fault becomes 400 becomes fatal") {
    auto broken = std::make_shared<FlakyScoring>(1000, /*retryable=*/false);
    ScopedServer server(nullptr, broken);
    HttpScoring remote(server.url());
    try {
      remote.embed("x");
      FAIL("expected BackendError");
    } catch (const BackendError& e) {
      CHECK_FALSE(e.retryable);
    }
  }
  SUBCASE("scoring-only server refuses model endpoints") {
    auto scoring = std::make_shared<SyntheticScoring>(SyntheticScoring::Config{});
    ScopedServer server(nullptr, scoring);
    HttpModelBackend remote(server.url());
    CHECK_THROWS_AS(remote.tokenize("x"), BackendError);
  }
}

TEST_CASE("malformed server responses are fatal protocol errors") {
  httplib::Server raw;
  raw.Post("/v1/embed", [](const httplib::Request&, httplib::Response& res) {
    res.set_content("this is not json", "text/plain");
  });
  raw.Post("/v1/nli", [](const httplib::Request&, httplib::Response& res) {
    res.set_content(R"({"entailment": 0.9, "neutral": 0.9, "contradiction": 0.9})",
                    "application/json");
  });
  raw.Post("/v1/next_token", [](const httplib::Request&, httplib::Response& res) {
    res.set_content(R"({"entries": [[1, " x", -0.5], [2, " y", 1.5]], "residual_mass": 0.0})",
                    "application/json");
  });
  const int port = raw.bind_to_any_port("127.0.0.1");
  REQUIRE(port > 0);
  std::thread thread([&raw] { raw.listen_after_bind(); });
  raw.wait_until_ready();
  const std::string url = "http://127.0.0.1:" + std::to_string(port);

  HttpScoring scoring(url);
  try {
    scoring.embed("x");
    FAIL("expected BackendError");
  } catch (const BackendError& e) {
    CHECK_FALSE(e.retryable);
  }
  CHECK_THROWS_AS(scoring.nli("a", "b"), BackendError);

  HttpModelBackend model(url);
  CHECK_THROWS_AS(model.next_token_distribution({}), BackendError);

  raw.stop();
  thread.join();
}

TEST_CASE("scoring cache computes each key once") {
  auto counting = std::make_shared<CountingScoring>();
  CachingScoring cached(counting);

  const auto first = cached.embed("hello world");
  const auto second = cached.embed("hello world");
  CHECK(first == second);
  CHECK(counting->embed_calls == 1);
  cached.embed("different text");
  CHECK(counting->embed_calls == 2);

  // nli is directional: swapped arguments are a different key
  cached.nli("a", "b");
  cached.nli("a", "b");
  cached.nli("b", "a");
  CHECK(counting->nli_calls == 2);

  cached.reward("p", "o");
  cached.reward("p", "o");
  CHECK(counting->reward_calls == 1);
  cached.judge_reply("same prompt");
  cached.judge_reply("same prompt");
  CHECK(counting->judge_calls == 1);

  const auto stats = cached.stats();
  CHECK(stats.misses == 6);
  CHECK(stats.hits == 4);

  cached.clear();
  cached.embed("hello world");
  CHECK(counting->embed_calls == 3);
}

TEST_CASE("scoring cache never stores failures") {
  auto flaky = std::make_shared<FlakyScoring>(1, /*retryable=*/true);
  CachingScoring cached(flaky);
  CHECK_THROWS_AS(cached.embed("x"), BackendError);
  const auto recovered = cached.embed("x");  // second call reaches the backend
  CHECK(flaky->calls == 2);
  CHECK(cached.embed("x") == recovered);  // now served from cache
  CHECK(flaky->calls == 2);
}

TEST_CASE("scoring cache is exactly-once under concurrent workers") {
  auto counting = std::make_shared<CountingScoring>();
  CachingScoring cached(counting);
  std::vector<std::thread> workers;
  for (int w = 0; w < 8; ++w)
    workers.emplace_back([&cached] {
      for (int i = 0; i < 50; ++i) cached.embed("text-" + std::to_string(i % 10));
    });
  for (auto& t : workers) t.join();
  CHECK(counting->embed_calls == 10);
  CHECK(cached.stats().hits == 8 * 50 - 10);
}

TEST_CASE("cache composes with the http scoring client") {
  auto counting = std::make_shared<CountingScoring>();
  ScopedServer server(nullptr, counting);
  CachingScoring cached(std::make_shared<HttpScoring>(server.url()));

  const auto once = cached.embed("cache me");
  const auto twice = cached.embed("cache me");
  CHECK(once == twice);
  CHECK(counting->embed_calls == 1);  // second call never reached the server
}

}  // TEST_SUITE
