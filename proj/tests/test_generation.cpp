#include <gtest/gtest.h>

#include <httplib.h>

#include <cstdlib>
#include <thread>

#include "conflictqa/generation.hpp"
#include "conflictqa/hashing.hpp"
#include "test_util.hpp"

using namespace conflictqa;
using conflictqa::testing::read_file;
using conflictqa::testing::TempDir;
using conflictqa::testing::write_file;

namespace {

struct SleepLog {
  std::vector<std::chrono::milliseconds> waits;
  RetryPolicy policy(int retries) {
    RetryPolicy p;
    p.max_retries = retries;
    p.sleep = [this](std::chrono::milliseconds d) { waits.push_back(d); };
    return p;
  }
};

Completion completion(std::string text) { return {std::move(text), std::nullopt}; }

// Local OpenAI-style endpoint on an ephemeral port.
class LocalServer {
 public:
  explicit LocalServer(std::function<void(const httplib::Request&, httplib::Response&)> handler) {
    server_.Post("/v1/completions", std::move(handler));
    port_ = server_.bind_to_any_port("127.0.0.1");
    thread_ = std::thread([this] { server_.listen_after_bind(); });
    server_.wait_until_ready();
  }
  ~LocalServer() {
    server_.stop();
    thread_.join();
  }
  std::string url() const { return "http://127.0.0.1:" + std::to_string(port_); }

 private:
  httplib::Server server_;
  int port_ = 0;
  std::thread thread_;
};

}  // namespace

TEST(RetryPolicy, ExponentialBackoffCapped) {
  RetryPolicy p;
  EXPECT_EQ(p.backoff(0).count(), 500);
  EXPECT_EQ(p.backoff(1).count(), 1000);
  EXPECT_EQ(p.backoff(3).count(), 4000);
  EXPECT_EQ(p.backoff(10).count(), 8000);
}

TEST(RetryPolicy, RetriesRateLimitsThenSucceeds) {
  SleepLog log;
  ScriptedClient client([](const std::string&, std::size_t i) -> Completion {
    if (i < 2) throw RateLimitError("429");
    return completion("ok");
  });
  EXPECT_EQ(complete_with_retries(client, "p", {}, log.policy(3)).text, "ok");
  EXPECT_EQ(client.calls(), 3u);
  ASSERT_EQ(log.waits.size(), 2u);
  EXPECT_EQ(log.waits[0].count(), 500);
  EXPECT_EQ(log.waits[1].count(), 1000);
}

TEST(RetryPolicy, SurfacesAfterLimit) {
  SleepLog log;
  ScriptedClient client([](const std::string&, std::size_t) -> Completion { throw TimeoutError("slow"); });
  EXPECT_THROW(complete_with_retries(client, "p", {}, log.policy(2)), TimeoutError);
  EXPECT_EQ(client.calls(), 3u);
  EXPECT_EQ(log.waits.size(), 2u);
}

TEST(RetryPolicy, OtherClientErrorsAreNotRetried) {
  SleepLog log;
  ScriptedClient client([](const std::string&, std::size_t) -> Completion { throw ClientError("bad request"); });
  EXPECT_THROW(complete_with_retries(client, "p", {}, log.policy(5)), ClientError);
  EXPECT_EQ(client.calls(), 1u);
  EXPECT_TRUE(log.waits.empty());
}

TEST(GenerationParams, Defaults) {
  GenerationParams p;
  EXPECT_EQ(p.temperature, 0.0);
  EXPECT_EQ(p.top_p, 1.0);
  EXPECT_EQ(p.n_logprobs, 10);
}

TEST(Fixtures, JsonRoundTrip) {
  FixtureRecord r{sha256_hex("prompt"),
                  {"Paris", std::vector<TokenLogprob>{{"Paris", -0.1, {{"Paris", -0.1}, {"Lyon", -2.5}}}}}};
  const auto back = fixture_from_json(to_json(r));
  EXPECT_EQ(back.prompt_hash, r.prompt_hash);
  EXPECT_EQ(back.completion, r.completion);
}

TEST(Fixtures, Sha256KnownVector) {
  EXPECT_EQ(sha256_hex("abc"), "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
}

TEST(Fixtures, RecordThenReplay) {
  TempDir dir;
  ScriptedClient live([](const std::string& prompt, std::size_t) { return completion("echo:" + prompt); });
  {
    RecordingClient rec(live, dir / "fx.jsonl");
    EXPECT_EQ(rec.complete("a", {}).text, "echo:a");
    EXPECT_EQ(rec.complete("b", {}).text, "echo:b");
  }
  auto replay = ReplayClient::from_file(dir / "fx.jsonl");
  EXPECT_EQ(replay.complete("b", {}).text, "echo:b");
  EXPECT_EQ(replay.complete("a", {}).text, "echo:a");
  EXPECT_THROW(replay.complete("c", {}), FixtureMissingError);
}

TEST(Fixtures, RepeatedHashServedInOrderLastRepeats) {
  const auto h = sha256_hex("p");
  ReplayClient replay({{h, completion("one")}, {h, completion("two")}});
  EXPECT_EQ(replay.complete("p", {}).text, "one");
  EXPECT_EQ(replay.complete("p", {}).text, "two");
  EXPECT_EQ(replay.complete("p", {}).text, "two");
}

TEST(Fixtures, MalformedLineIsParseError) {
  TempDir dir;
  write_file(dir / "fx.jsonl", "{\"prompt_hash\":\"x\",\"completion\":\"y\"}\nnot json\n");
  EXPECT_THROW(load_fixtures(dir / "fx.jsonl"), ParseError);
}

TEST(HttpClient, ParsesCompletionAndLogprobs) {
  std::string seen_body;
  std::string seen_auth;
  LocalServer server([&](const httplib::Request& req, httplib::Response& res) {
    seen_body = req.body;
    seen_auth = req.get_header_value("Authorization");
    res.set_content(R"({"choices":[{"text":" Paris","logprobs":{"tokens":[" Paris"],"token_logprobs":[-0.25],
                        "top_logprobs":[{" Paris":-0.25," Lyon":-1.75}]}}]})",
                    "application/json");
  });
  ::setenv("CONFLICTQA_TEST_KEY", "secret", 1);
  HttpClientSettings s;
  s.base_url = server.url();
  s.api_key_env = "CONFLICTQA_TEST_KEY";
  s.timeout = std::chrono::seconds(5);
  auto client = make_http_client(s);
  const auto c = client->complete("Q?", GenerationParams{});
  EXPECT_EQ(c.text, " Paris");
  ASSERT_TRUE(c.token_logprobs.has_value());
  ASSERT_EQ(c.token_logprobs->size(), 1u);
  EXPECT_DOUBLE_EQ((*c.token_logprobs)[0].logprob, -0.25);
  EXPECT_EQ((*c.token_logprobs)[0].top.size(), 2u);

  const auto body = nlohmann::json::parse(seen_body);
  EXPECT_EQ(body.at("prompt"), "Q?");
  EXPECT_EQ(body.at("temperature"), 0.0);
  EXPECT_EQ(body.at("top_p"), 1.0);
  EXPECT_EQ(body.at("logprobs"), 10);
  EXPECT_EQ(seen_auth, "Bearer secret");
}

TEST(HttpClient, StatusCodesMapToErrors) {
  int status = 429;
  LocalServer server([&](const httplib::Request&, httplib::Response& res) {
    res.status = status;
    res.set_content("{}", "application/json");
  });
  HttpClientSettings s;
  s.base_url = server.url();
  s.timeout = std::chrono::seconds(5);
  auto client = make_http_client(s);
  EXPECT_THROW(client->complete("x", {}), RateLimitError);
  status = 504;
  EXPECT_THROW(client->complete("x", {}), TimeoutError);
  status = 500;
  try {
    client->complete("x", {});
    FAIL() << "expected ClientError";
  } catch (const RateLimitError&) {
    FAIL() << "500 is not a rate limit";
  } catch (const ClientError&) {
  }
  status = 200;
  EXPECT_THROW(client->complete("x", {}), ClientError);  // no choices
}
