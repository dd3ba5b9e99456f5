#include "stepsearch/backends.hpp"

#include <gtest/gtest.h>
#include <httplib.h>

#include <unistd.h>

#include <atomic>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <thread>

#include "stepsearch/cached_backend.hpp"
#include "stepsearch/http_backend.hpp"
#include "stepsearch/synthetic_backend.hpp"

namespace stepsearch {
namespace {

namespace fs = std::filesystem;

TEST(Tokenize, WhitespaceSticksToFollowingWord) {
  EXPECT_EQ(tokenize_preserving("Weak opening."),
            (std::vector<std::string>{"Weak", " opening."}));
  EXPECT_EQ(tokenize_preserving("a b  c"), (std::vector<std::string>{"a", " b", "  c"}));
  EXPECT_EQ(tokenize_preserving("  lead"), (std::vector<std::string>{"  lead"}));
  EXPECT_EQ(tokenize_preserving("tail  "), (std::vector<std::string>{"tail", "  "}));
  EXPECT_EQ(tokenize_preserving(""), std::vector<std::string>{});
  EXPECT_EQ(tokenize_preserving("line\nbreak"), (std::vector<std::string>{"line", "\nbreak"}));
}

TEST(Tokenize, RoundTripsText) {
  const std::string text = "Step 1.2  mixed   spacing\nand lines.";
  std::string joined;
  for (const std::string& t : tokenize_preserving(text)) joined += t;
  EXPECT_EQ(joined, text);
}

TEST(FindFirstStop, EarliestPositionWins) {
  std::string matched;
  EXPECT_EQ(find_first_stop("abc.def\nghi", {"\n", "."}, &matched), 3u);
  EXPECT_EQ(matched, ".");
}

TEST(FindFirstStop, LongestMatchWinsOnTie) {
  std::string matched;
  EXPECT_EQ(find_first_stop("text\n\nrest", {"\n", "\n\n"}, &matched), 4u);
  EXPECT_EQ(matched, "\n\n");
}

TEST(FindFirstStop, NoMatch) {
  std::string matched = "sentinel";
  EXPECT_EQ(find_first_stop("plain", {"\n"}, &matched), std::string::npos);
  EXPECT_TRUE(matched.empty());
}

TEST(TruncateTokens, CutsAtBoundaryAndMidToken) {
  std::vector<TokenScore> tokens{{"ab", -0.1}, {"cd", -0.2}, {"ef", -0.3}};
  auto at_boundary = truncate_tokens_at(tokens, 4);
  ASSERT_EQ(at_boundary.size(), 2u);
  EXPECT_EQ(at_boundary[1].token_text, "cd");

  auto mid = truncate_tokens_at(tokens, 3);
  ASSERT_EQ(mid.size(), 2u);
  EXPECT_EQ(mid[1].token_text, "c");       // shortened
  EXPECT_DOUBLE_EQ(mid[1].logprob, -0.2);  // keeps the original score

  EXPECT_TRUE(truncate_tokens_at(tokens, 0).empty());
  EXPECT_EQ(truncate_tokens_at(tokens, 99).size(), 3u);
}

TEST(GenerationRequest, ValidateRejectsBadFields) {
  GenerationRequest req;
  req.prompt_text = "p";
  EXPECT_NO_THROW(req.validate());
  req.max_tokens = 0;
  EXPECT_THROW(req.validate(), Error);
  req = GenerationRequest{};
  req.temperature = -0.1;
  EXPECT_THROW(req.validate(), Error);
  req = GenerationRequest{};
  req.stop_sequences = {""};
  EXPECT_THROW(req.validate(), Error);
}

TEST(GenerationRequest, CanonicalIsStableAndDiscriminating) {
  GenerationRequest a;
  a.prompt_text = "same";
  a.temperature = 0.8;
  GenerationRequest b = a;
  EXPECT_EQ(a.canonical(), b.canonical());
  b.temperature = 0.8000000001;
  EXPECT_NE(a.canonical(), b.canonical());
  b = a;
  b.seed = a.seed + 1;
  EXPECT_NE(a.canonical(), b.canonical());
}

TEST(GenerationResult, JsonRoundTrip) {
  GenerationResult r;
  r.tokens = {{"hi", -0.5}, {" there", -0.25}};
  r.finish_reason = FinishReason::stop_sequence;
  r.matched_stop = "\n\n";
  r.latency_ms = 17;
  json j = r;
  const GenerationResult back = j.get<GenerationResult>();
  EXPECT_EQ(back.text(), "hi there");
  EXPECT_EQ(back.finish_reason, FinishReason::stop_sequence);
  EXPECT_EQ(back.matched_stop, "\n\n");
  EXPECT_EQ(back.latency_ms, 17);
}

// --- synthetic backend ------------------------------------------------------

const char* kBasicScript = R"({
  "step_delimiter": "\n\n",
  "questions": [{
    "id": "q1",
    "prompt": "Question q1: reason it out.",
    "root_branches": [
      {"text": "First thought.", "logprobs": [-0.2, -0.3],
       "branches": [
         {"text": "Greedy finish. Answer: yes", "perplexity": 1.2, "terminal": true},
         {"text": "Sampled finish. Answer: no", "perplexity": 1.1, "terminal": true}
       ]},
      {"text": "Retry thought.", "perplexity": 1.4,
       "branches": [
         {"text": "Retry finish. Answer: yes", "terminal": true}
       ]}
    ]
  }]
})";

GenerationRequest step_request(const std::string& prompt, int attempt = 0) {
  GenerationRequest req;
  req.prompt_text = prompt;
  req.seed = derive_attempt_seed(7, "q1", 0, attempt);
  req.stop_sequences = {"\n\n"};
  return req;
}

TEST(Synthetic, EmitsScriptedStepAndStopsAtDelimiter) {
  auto backend = SyntheticBackend::from_json(json::parse(kBasicScript));
  const auto res = backend.generate(step_request("Question q1: reason it out.\n\n"));
  EXPECT_EQ(res.text(), "First thought.");
  EXPECT_EQ(res.finish_reason, FinishReason::stop_sequence);
  EXPECT_EQ(res.matched_stop, "\n\n");
  ASSERT_EQ(res.tokens.size(), 2u);
  EXPECT_DOUBLE_EQ(res.tokens[0].logprob, -0.2);
  EXPECT_DOUBLE_EQ(res.tokens[1].logprob, -0.3);
}

TEST(Synthetic, DeterministicAcrossCalls) {
  auto backend = SyntheticBackend::from_json(json::parse(kBasicScript));
  const auto req = step_request("Question q1: reason it out.\n\n");
  const json a = backend.generate(req);
  const json b = backend.generate(req);
  EXPECT_EQ(a, b);
}

TEST(Synthetic, AttemptSelectsBranch) {
  auto backend = SyntheticBackend::from_json(json::parse(kBasicScript));
  const auto first = backend.generate(step_request("Question q1: reason it out.\n\n", 0));
  const auto second = backend.generate(step_request("Question q1: reason it out.\n\n", 1));
  const auto clamped = backend.generate(step_request("Question q1: reason it out.\n\n", 9));
  EXPECT_EQ(first.text(), "First thought.");
  EXPECT_EQ(second.text(), "Retry thought.");
  EXPECT_EQ(clamped.text(), "Retry thought.");  // attempts past the end clamp
}

TEST(Synthetic, WalksIntoChildAndEndsWithEos) {
  auto backend = SyntheticBackend::from_json(json::parse(kBasicScript));
  const auto res =
      backend.generate(step_request("Question q1: reason it out.\n\nFirst thought.\n\n"));
  EXPECT_EQ(res.text(), "Greedy finish. Answer: yes");
  EXPECT_EQ(res.finish_reason, FinishReason::end_of_sequence);
  EXPECT_TRUE(res.matched_stop.empty());
}

TEST(Synthetic, PerplexityFieldSpreadsUniformLogprobs) {
  auto backend = SyntheticBackend::from_json(json::parse(kBasicScript));
  const auto res = backend.generate(step_request("Question q1: reason it out.\n\n", 1));
  ASSERT_FALSE(res.tokens.empty());
  for (const TokenScore& t : res.tokens) {
    EXPECT_NEAR(t.logprob, -std::log(1.4), 1e-12);
  }
}

TEST(Synthetic, TokenBudgetTruncates) {
  auto backend = SyntheticBackend::from_json(json::parse(kBasicScript));
  auto req = step_request("Question q1: reason it out.\n\n");
  req.max_tokens = 1;
  const auto res = backend.generate(req);
  EXPECT_EQ(res.finish_reason, FinishReason::token_budget);
  EXPECT_EQ(res.text(), "First");
}

TEST(Synthetic, NoStopRunsThroughDelimiters) {
  auto backend = SyntheticBackend::from_json(json::parse(kBasicScript));
  GenerationRequest req;
  req.prompt_text = "Question q1: reason it out.\n\n";
  req.seed = derive_attempt_seed(7, "q1", 0, 0);
  // no stop sequences: generation runs across the step boundary to EOS
  const auto res = backend.generate(req);
  EXPECT_EQ(res.text(), "First thought.\n\nGreedy finish. Answer: yes");
  EXPECT_EQ(res.finish_reason, FinishReason::end_of_sequence);
}

TEST(Synthetic, DivergingPromptIsScriptError) {
  auto backend = SyntheticBackend::from_json(json::parse(kBasicScript));
  try {
    backend.generate(step_request("Question q1: reason it out.\n\nNever scripted.\n\n"));
    FAIL() << "expected ScriptError";
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::ScriptError);
  }
  EXPECT_THROW(backend.generate(step_request("Unknown question prompt\n\n")), Error);
}

TEST(Synthetic, EmptyNonTerminalStepYieldsEmptyResult) {
  const char* script = R"({
    "step_delimiter": "\n\n",
    "questions": [{"id": "q1", "prompt": "P.", "root_branches": [{"text": ""}]}]
  })";
  auto backend = SyntheticBackend::from_json(json::parse(script));
  const auto res = backend.generate(step_request("P.\n\n"));
  EXPECT_TRUE(res.tokens.empty());
  EXPECT_EQ(res.finish_reason, FinishReason::stop_sequence);
  EXPECT_EQ(res.matched_stop, "\n\n");
}

TEST(Synthetic, SharedRefsReuseNodes) {
  const char* script = R"({
    "step_delimiter": "\n\n",
    "nodes": {"tail": {"text": "Shared tail. Answer: x", "terminal": true}},
    "questions": [{
      "id": "q1", "prompt": "P.",
      "root_branches": [
        {"text": "Left.", "branches": [{"ref": "tail"}]},
        {"text": "Right.", "branches": [{"ref": "tail"}]}
      ]
    }]
  })";
  auto backend = SyntheticBackend::from_json(json::parse(script));
  const auto left = backend.generate(step_request("P.\n\nLeft.\n\n"));
  const auto right = backend.generate(step_request("P.\n\nRight.\n\n"));
  EXPECT_EQ(left.text(), "Shared tail. Answer: x");
  EXPECT_EQ(right.text(), "Shared tail. Answer: x");
}

TEST(Synthetic, CyclicRefIsScriptError) {
  const char* script = R"({
    "step_delimiter": "\n\n",
    "nodes": {"a": {"text": "A.", "branches": [{"ref": "a"}]}},
    "questions": [{"id": "q1", "prompt": "P.", "root_branches": [{"ref": "a"}]}]
  })";
  try {
    SyntheticBackend::from_json(json::parse(script));
    FAIL() << "expected ScriptError";
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::ScriptError);
    EXPECT_NE(std::string(e.what()).find("cyclic"), std::string::npos);
  }
}

TEST(Synthetic, ParseRejectsMalformedNodes) {
  const char* delim_in_text = R"({
    "step_delimiter": "\n\n",
    "questions": [{"id": "q1", "prompt": "P.",
                   "root_branches": [{"text": "bad\n\ntext"}]}]
  })";
  EXPECT_THROW(SyntheticBackend::from_json(json::parse(delim_in_text)), Error);

  const char* both_scores = R"({
    "step_delimiter": "\n\n",
    "questions": [{"id": "q1", "prompt": "P.",
                   "root_branches": [{"text": "x", "perplexity": 1.2, "logprobs": [-0.1]}]}]
  })";
  EXPECT_THROW(SyntheticBackend::from_json(json::parse(both_scores)), Error);

  const char* wrong_len = R"({
    "step_delimiter": "\n\n",
    "questions": [{"id": "q1", "prompt": "P.",
                   "root_branches": [{"text": "two words", "logprobs": [-0.1]}]}]
  })";
  EXPECT_THROW(SyntheticBackend::from_json(json::parse(wrong_len)), Error);

  const char* terminal_with_children = R"({
    "step_delimiter": "\n\n",
    "questions": [{"id": "q1", "prompt": "P.",
                   "root_branches": [{"text": "x", "terminal": true,
                                      "branches": [{"text": "y"}]}]}]
  })";
  EXPECT_THROW(SyntheticBackend::from_json(json::parse(terminal_with_children)), Error);

  const char* duplicate_ids = R"({
    "step_delimiter": "\n\n",
    "questions": [
      {"id": "q1", "prompt": "P.", "root_branches": [{"text": "x", "terminal": true}]},
      {"id": "q1", "prompt": "Q.", "root_branches": [{"text": "y", "terminal": true}]}
    ]
  })";
  EXPECT_THROW(SyntheticBackend::from_json(json::parse(duplicate_ids)), Error);
}

TEST(Synthetic, FindQuestion) {
  auto backend = SyntheticBackend::from_json(json::parse(kBasicScript));
  ASSERT_NE(backend.find_question("q1"), nullptr);
  EXPECT_EQ(backend.find_question("q1")->prompt, "Question q1: reason it out.");
  EXPECT_EQ(backend.find_question("nope"), nullptr);
}

// --- cached backend ---------------------------------------------------------

struct TempDir {
  fs::path path;
  TempDir() {
    path = fs::temp_directory_path() /
           ("stepsearch_test_" + std::to_string(::getpid()) + "_" +
            std::to_string(reinterpret_cast<std::uintptr_t>(this)));
    fs::create_directories(path);
  }
  ~TempDir() {
    std::error_code ec;
    fs::remove_all(path, ec);
  }
};

TEST(Cached, MissThenHitReturnsIdenticalResult) {
  TempDir dir;
  auto inner = std::make_shared<SyntheticBackend>(SyntheticBackend::from_json(json::parse(kBasicScript)));
  CachedBackend cached(inner, dir.path.string());

  const auto req = step_request("Question q1: reason it out.\n\n");
  const json first = cached.generate(req);
  EXPECT_EQ(cached.misses(), 1u);
  EXPECT_EQ(cached.hits(), 0u);
  const json second = cached.generate(req);
  EXPECT_EQ(cached.misses(), 1u);
  EXPECT_EQ(cached.hits(), 1u);
  EXPECT_EQ(first, second);

  // a different request is its own entry
  cached.generate(step_request("Question q1: reason it out.\n\n", 1));
  EXPECT_EQ(cached.misses(), 2u);
}

TEST(Cached, PersistsAcrossInstances) {
  TempDir dir;
  auto inner = std::make_shared<SyntheticBackend>(SyntheticBackend::from_json(json::parse(kBasicScript)));
  const auto req = step_request("Question q1: reason it out.\n\n");
  json first;
  {
    CachedBackend cached(inner, dir.path.string());
    first = cached.generate(req);
  }
  CachedBackend reopened(inner, dir.path.string());
  const json second = reopened.generate(req);
  EXPECT_EQ(reopened.hits(), 1u);
  EXPECT_EQ(reopened.misses(), 0u);
  EXPECT_EQ(first, second);
}

TEST(Cached, CorruptEntryIsRegenerated) {
  TempDir dir;
  auto inner = std::make_shared<SyntheticBackend>(SyntheticBackend::from_json(json::parse(kBasicScript)));
  const auto req = step_request("Question q1: reason it out.\n\n");
  const std::string key = CachedBackend::request_key(req);
  {
    CachedBackend cached(inner, dir.path.string());
    cached.generate(req);
  }
  {
    std::ofstream out(dir.path / (key + ".json"), std::ios::trunc);
    out << "{not json";
  }
  CachedBackend cached(inner, dir.path.string());
  const GenerationResult res = cached.generate(req);
  EXPECT_EQ(res.text(), "First thought.");
  EXPECT_EQ(cached.misses(), 1u);  // corrupt entry does not count as a hit
  // the rewritten entry is valid again
  CachedBackend after(inner, dir.path.string());
  after.generate(req);
  EXPECT_EQ(after.hits(), 1u);
}

TEST(Cached, KeyIsStableAcrossProcessesByConstruction) {
  GenerationRequest req;
  req.prompt_text = "fixed";
  req.seed = 9;
  const std::string key = CachedBackend::request_key(req);
  EXPECT_EQ(key.size(), 64u);  // sha-256 hex
  EXPECT_EQ(key, CachedBackend::request_key(req));
  req.seed = 10;
  EXPECT_NE(key, CachedBackend::request_key(req));
}

// --- http backend -----------------------------------------------------------

class HttpServerFixture : public ::testing::Test {
 protected:
  // Tests register their routes first, then call start().
  void start() {
    port_ = server_.bind_to_any_port("127.0.0.1");
    ASSERT_GT(port_, 0);
    thread_ = std::thread([this] { server_.listen_after_bind(); });
    server_.wait_until_ready();
  }
  void TearDown() override {
    server_.stop();
    if (thread_.joinable()) thread_.join();
  }

  HttpBackendConfig config_for(HttpApiMode mode = HttpApiMode::completions) {
    HttpBackendConfig c;
    c.base_url = "http://127.0.0.1:" + std::to_string(port_);
    c.model = "test-model";
    c.mode = mode;
    c.max_retries = 3;
    c.retry_backoff_ms = 1;
    return c;
  }

  httplib::Server server_;
  int port_ = 0;
  std::thread thread_;
};

TEST_F(HttpServerFixture, CompletionsHappyPath) {
  json seen_body;
  server_.Post("/v1/completions", [&](const httplib::Request& req, httplib::Response& res) {
    seen_body = json::parse(req.body);
    json reply = {{"choices",
                   {{{"text", "two words"},
                     {"finish_reason", "stop"},
                     {"logprobs",
                      {{"tokens", {"two", " words"}}, {"token_logprobs", {-0.5, -0.25}}}}}}}};
    res.set_content(reply.dump(), "application/json");
  });
  start();

  HttpBackend backend(config_for());
  GenerationRequest req;
  req.prompt_text = "say two words";
  req.max_tokens = 16;
  req.seed = 3;
  const GenerationResult result = backend.generate(req);
  EXPECT_EQ(result.text(), "two words");
  EXPECT_EQ(result.finish_reason, FinishReason::end_of_sequence);
  ASSERT_EQ(result.tokens.size(), 2u);
  EXPECT_DOUBLE_EQ(result.tokens[1].logprob, -0.25);
  EXPECT_GE(result.latency_ms, 0);

  EXPECT_EQ(seen_body.at("model"), "test-model");
  EXPECT_EQ(seen_body.at("prompt"), "say two words");
  EXPECT_EQ(seen_body.at("logprobs"), 1);
  EXPECT_EQ(seen_body.at("seed"), 3);
}

TEST_F(HttpServerFixture, RetriesServerErrorsThenSucceeds) {
  std::atomic<int> calls{0};
  server_.Post("/v1/completions", [&](const httplib::Request&, httplib::Response& res) {
    const int n = ++calls;
    if (n <= 2) {
      res.status = 500;
      res.set_content("overloaded", "text/plain");
      return;
    }
    json reply = {{"choices",
                   {{{"finish_reason", "stop"},
                     {"logprobs", {{"tokens", {"ok"}}, {"token_logprobs", {-0.1}}}}}}}};
    res.set_content(reply.dump(), "application/json");
  });
  start();

  HttpBackend backend(config_for());
  GenerationRequest req;
  req.prompt_text = "p";
  const GenerationResult result = backend.generate(req);
  EXPECT_EQ(result.text(), "ok");
  EXPECT_EQ(calls.load(), 3);
}

TEST_F(HttpServerFixture, ExhaustedRetriesThrowTransport) {
  server_.Post("/v1/completions", [&](const httplib::Request&, httplib::Response& res) {
    res.status = 503;
  });
  start();
  auto cfg = config_for();
  cfg.max_retries = 1;
  HttpBackend backend(cfg);
  GenerationRequest req;
  req.prompt_text = "p";
  try {
    backend.generate(req);
    FAIL() << "expected Transport";
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::Transport);
  }
}

TEST_F(HttpServerFixture, ClientErrorIsProtocolNotRetried) {
  std::atomic<int> calls{0};
  server_.Post("/v1/completions", [&](const httplib::Request&, httplib::Response& res) {
    ++calls;
    res.status = 404;
    res.set_content("no such model", "text/plain");
  });
  start();
  HttpBackend backend(config_for());
  GenerationRequest req;
  req.prompt_text = "p";
  try {
    backend.generate(req);
    FAIL() << "expected Protocol";
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::Protocol);
  }
  EXPECT_EQ(calls.load(), 1);
}

TEST_F(HttpServerFixture, MissingLogprobsIsHardError) {
  server_.Post("/v1/completions", [&](const httplib::Request&, httplib::Response& res) {
    json reply = {{"choices", {{{"text", "no scores"}, {"finish_reason", "stop"}}}}};
    res.set_content(reply.dump(), "application/json");
  });
  start();
  HttpBackend backend(config_for());
  GenerationRequest req;
  req.prompt_text = "p";
  try {
    backend.generate(req);
    FAIL() << "expected MissingLogprobs";
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::MissingLogprobs);
  }
}

TEST_F(HttpServerFixture, NullTokenLogprobIsMissingLogprobs) {
  server_.Post("/v1/completions", [&](const httplib::Request&, httplib::Response& res) {
    json reply = {{"choices",
                   {{{"finish_reason", "stop"},
                     {"logprobs",
                      {{"tokens", {"a", "b"}}, {"token_logprobs", {-0.1, nullptr}}}}}}}};
    res.set_content(reply.dump(), "application/json");
  });
  start();
  HttpBackend backend(config_for());
  GenerationRequest req;
  req.prompt_text = "p";
  EXPECT_THROW(backend.generate(req), Error);
}

TEST_F(HttpServerFixture, StopSequencesReEnforcedClientSide) {
  server_.Post("/v1/completions", [&](const httplib::Request&, httplib::Response& res) {
    // server ignores stop and returns the delimiter inline
    json reply = {{"choices",
                   {{{"finish_reason", "stop"},
                     {"logprobs",
                      {{"tokens", {"head", "\n\n", "tail"}},
                       {"token_logprobs", {-0.1, -0.2, -0.3}}}}}}}};
    res.set_content(reply.dump(), "application/json");
  });
  start();
  HttpBackend backend(config_for());
  GenerationRequest req;
  req.prompt_text = "p";
  req.stop_sequences = {"\n\n"};
  const GenerationResult result = backend.generate(req);
  EXPECT_EQ(result.text(), "head");
  EXPECT_EQ(result.finish_reason, FinishReason::stop_sequence);
  EXPECT_EQ(result.matched_stop, "\n\n");
}

TEST_F(HttpServerFixture, ChatModeParsesMessageLogprobs) {
  server_.Post("/v1/chat/completions", [&](const httplib::Request& req, httplib::Response& res) {
    const json body = json::parse(req.body);
    EXPECT_TRUE(body.at("messages").is_array());
    EXPECT_EQ(body.at("logprobs"), true);
    json reply = {{"choices",
                   {{{"message", {{"role", "assistant"}, {"content", "chat reply"}}},
                     {"finish_reason", "stop"},
                     {"logprobs",
                      {{"content",
                        {{{"token", "chat"}, {"logprob", -0.3}},
                         {{"token", " reply"}, {"logprob", -0.6}}}}}}}}}};
    res.set_content(reply.dump(), "application/json");
  });
  start();
  HttpBackend backend(config_for(HttpApiMode::chat));
  GenerationRequest req;
  req.prompt_text = "hello";
  const GenerationResult result = backend.generate(req);
  EXPECT_EQ(result.text(), "chat reply");
  ASSERT_EQ(result.tokens.size(), 2u);
  EXPECT_DOUBLE_EQ(result.tokens[0].logprob, -0.3);
}

TEST_F(HttpServerFixture, LengthFinishMapsToTokenBudget) {
  server_.Post("/v1/completions", [&](const httplib::Request&, httplib::Response& res) {
    json reply = {{"choices",
                   {{{"finish_reason", "length"},
                     {"logprobs", {{"tokens", {"cut"}}, {"token_logprobs", {-0.4}}}}}}}};
    res.set_content(reply.dump(), "application/json");
  });
  start();
  HttpBackend backend(config_for());
  GenerationRequest req;
  req.prompt_text = "p";
  EXPECT_EQ(backend.generate(req).finish_reason, FinishReason::token_budget);
}

TEST(Http, ConnectionRefusedIsTransport) {
  HttpBackendConfig cfg;
  cfg.base_url = "http://127.0.0.1:1";  // nothing listens here
  cfg.model = "m";
  cfg.max_retries = 0;
  cfg.retry_backoff_ms = 1;
  cfg.timeout_ms = 2000;
  HttpBackend backend(cfg);
  GenerationRequest req;
  req.prompt_text = "p";
  try {
    backend.generate(req);
    FAIL() << "expected Transport";
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::Transport);
  }
}

TEST(Http, ConfigValidation) {
  HttpBackendConfig cfg;
  cfg.model = "m";
  cfg.base_url = "https://secure.example";  // only plain http is implemented
  EXPECT_THROW(cfg.validate(), Error);
  cfg.base_url = "http://ok.example";
  EXPECT_NO_THROW(cfg.validate());
  cfg.model.clear();
  EXPECT_THROW(cfg.validate(), Error);
}

TEST(Http, BaseUrlPrefixSplit) {
  // default path prefix is /v1; a custom prefix replaces it
  HttpBackendConfig cfg;
  cfg.base_url = "http://127.0.0.1:9";
  cfg.model = "m";
  HttpBackend a(cfg);
  EXPECT_EQ(a.name(), "http(m)");
  cfg.base_url = "http://127.0.0.1:9/api/";
  EXPECT_NO_THROW(HttpBackend{cfg});
}

}  // namespace
}  // namespace stepsearch
