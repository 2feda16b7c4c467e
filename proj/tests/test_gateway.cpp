#include <doctest.h>

#include <cmath>
#include <cstdlib>

#include "fake_service.hpp"
#include "normsgame/agents.hpp"
#include "normsgame/gateway.hpp"
#include "temp_dir.hpp"

using namespace normsgame::gateway;
using nlohmann::json;
using std::chrono::milliseconds;

namespace {

// Counts every transport call and answers from a script of responses.
class CountingTransport final : public Transport {
 public:
  explicit CountingTransport(std::vector<HttpResponse> script, int* calls) : script_(std::move(script)), calls_(calls) {}
  HttpResponse post(const std::string& path, const std::string& body, const Headers& headers) override {
    ++*calls_;
    last_path = path;
    last_body = body;
    for (const auto& [k, v] : headers) {
      if (k == "Authorization") authorization = v;
    }
    if (script_.empty()) throw TransportError("connection refused");
    auto r = script_.front();
    script_.erase(script_.begin());
    return r;
  }
  std::string last_path, last_body, authorization;

 private:
  std::vector<HttpResponse> script_;
  int* calls_;
};

HttpResponse chat_ok(const std::string& text) {
  return {200, json{{"choices", {{{"message", {{"role", "assistant"}, {"content", text}}}}}},
                    {"usage", {{"prompt_tokens", 5}, {"completion_tokens", 2}}}}
                   .dump()};
}

ModelRequest sample_request() {
  ModelRequest r;
  r.model = "m";
  r.messages = {{"system", "rules"}, {"user", "hello"}};
  return r;
}

// Sets an environment variable for the scope.
struct EnvVar {
  std::string name;
  EnvVar(std::string n, const char* value) : name(std::move(n)) {
    if (value) {
      setenv(name.c_str(), value, 1);
    } else {
      unsetenv(name.c_str());
    }
  }
  ~EnvVar() { unsetenv(name.c_str()); }
};

}  // namespace

TEST_SUITE("gateway") {

TEST_CASE("request hash is canonical JSON with sorted keys") {
  const auto r = sample_request();
  const auto canon = canonical_json(r);
  CHECK(canon == R"({"kind":"chat","messages":[{"content":"rules","role":"system"},{"content":"hello","role":"user"}],"model":"m","temperature":0.0})");
  CHECK(request_hash(r) == sha256_hex(canon));
  // SHA-256("abc") from the standard's test vectors.
  CHECK(sha256_hex("abc") == "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
  auto other = r;
  other.temperature = 0.5;
  CHECK(request_hash(other) != request_hash(r));
}

TEST_CASE("request validation") {
  ModelRequest r;
  CHECK_THROWS(r.validate());
  r.messages = {{"user", "x"}};
  CHECK_THROWS(r.validate());
  r.messages = {{"system", "x"}};
  r.temperature = -1;
  CHECK_THROWS(r.validate());
}

TEST_CASE("stub mode: canned chat, unit-norm hash embeddings, no transport") {
  GatewayConfig cfg;
  cfg.mode = Mode::Stub;
  cfg.stub_response = "<test/>";
  int calls = 0;
  Gateway gw(cfg, std::make_unique<CountingTransport>(std::vector<HttpResponse>{}, &calls));
  CHECK(gw.complete(sample_request()) == "<test/>");
  gw.set_stub_responder(echo_last_message);
  CHECK(gw.complete(sample_request()) == "hello");
  const auto e1 = gw.embed("a persona");
  const auto e2 = gw.embed("a persona");
  CHECK(e1.values == e2.values);
  CHECK(e1.values.size() == 64);
  double norm = 0.0;
  for (double x : e1.values) norm += x * x;
  CHECK(norm == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(gw.embed("another").values != e1.values);
  CHECK(calls == 0);
  CHECK(gw.calls().size() == 5);
}

TEST_CASE("record then replay: replay performs no I/O") {
  testsupport::TempDir dir;
  EnvVar key("NORMSGAME_TEST_KEY", "sk-test");
  GatewayConfig cfg;
  cfg.mode = Mode::Record;
  cfg.fixture_dir = dir.path();
  cfg.api_key_env = "NORMSGAME_TEST_KEY";
  int record_calls = 0;
  auto transport = std::make_unique<CountingTransport>(
      std::vector<HttpResponse>{chat_ok("<cheat/>"), {200, R"({"data":[{"embedding":[0.6,0.8]}]})"}}, &record_calls);
  auto* raw = transport.get();
  Gateway recorder(cfg, std::move(transport));
  CHECK(recorder.complete(sample_request()) == "<cheat/>");
  CHECK(raw->last_path == "/chat/completions");
  CHECK(raw->authorization == "Bearer sk-test");
  CHECK(recorder.embed("persona").values == std::vector<double>{0.6, 0.8});
  CHECK(raw->last_path == "/embeddings");
  CHECK(record_calls == 2);
  CHECK(recorder.calls()[0].prompt_tokens == 5);

  cfg.mode = Mode::Replay;
  int replay_calls = 0;
  Gateway replayer(cfg, std::make_unique<CountingTransport>(std::vector<HttpResponse>{}, &replay_calls));
  CHECK(replayer.complete(sample_request()) == "<cheat/>");
  CHECK(replayer.embed("persona").values == std::vector<double>{0.6, 0.8});
  auto unseen = sample_request();
  unseen.messages[1].content = "never recorded";
  CHECK_THROWS_AS(replayer.complete(unseen), FixtureMissing);
  CHECK(replay_calls == 0);

  const auto stored = testsupport::slurp(dir.path() / (request_hash(sample_request()) + ".json"));
  CHECK(json::parse(stored).at("kind") == "chat");
}

TEST_CASE("live mode without a key names the variable") {
  EnvVar key("NORMSGAME_ABSENT_KEY", nullptr);
  GatewayConfig cfg;
  cfg.mode = Mode::Live;
  cfg.api_key_env = "NORMSGAME_ABSENT_KEY";
  try {
    Gateway gw(cfg);
    FAIL("expected a GatewayError");
  } catch (const GatewayError& e) {
    CHECK(std::string(e.what()).find("NORMSGAME_ABSENT_KEY") != std::string::npos);
  }
}

TEST_CASE("retries 5xx and transport errors with 1s then 4s backoff") {
  EnvVar key("NORMSGAME_TEST_KEY", "sk-test");
  GatewayConfig cfg;
  cfg.mode = Mode::Live;
  cfg.api_key_env = "NORMSGAME_TEST_KEY";
  int calls = 0;
  Gateway gw(cfg, std::make_unique<CountingTransport>(
                      std::vector<HttpResponse>{{503, "busy"}, {500, "oops"}, chat_ok("<test/>")}, &calls));
  std::vector<milliseconds> sleeps;
  gw.set_sleeper([&](milliseconds d) { sleeps.push_back(d); });
  CHECK(gw.complete(sample_request()) == "<test/>");
  CHECK(calls == 3);
  CHECK(sleeps == std::vector<milliseconds>{milliseconds(1000), milliseconds(4000)});
  CHECK(gw.calls().back().attempts == 3);
  CHECK(gw.calls().back().retry_log.size() == 4);

  int gone = 0;
  Gateway dead(cfg, std::make_unique<CountingTransport>(std::vector<HttpResponse>{}, &gone));
  dead.set_sleeper([](milliseconds) {});
  CHECK_THROWS_AS(dead.complete(sample_request()), GatewayError);
  CHECK(gone == 3);
}

TEST_CASE("4xx fails fast") {
  EnvVar key("NORMSGAME_TEST_KEY", "sk-test");
  GatewayConfig cfg;
  cfg.mode = Mode::Live;
  cfg.api_key_env = "NORMSGAME_TEST_KEY";
  int calls = 0;
  Gateway gw(cfg, std::make_unique<CountingTransport>(std::vector<HttpResponse>{{401, "bad key"}, chat_ok("x")}, &calls));
  bool slept = false;
  gw.set_sleeper([&](milliseconds) { slept = true; });
  CHECK_THROWS_AS(gw.complete(sample_request()), GatewayError);
  CHECK(calls == 1);
  CHECK_FALSE(slept);
}

TEST_CASE("HTTP transport against a loopback service returning 500, 500, 200") {
  testsupport::FakeService service;
  service.fail_next({500, 500});
  EnvVar key("NORMSGAME_TEST_KEY", "sk-test");
  GatewayConfig cfg;
  cfg.mode = Mode::Live;
  cfg.endpoint = service.base_url();
  cfg.api_key_env = "NORMSGAME_TEST_KEY";
  cfg.timeout = std::chrono::seconds(5);
  Gateway gw(cfg);
  std::vector<milliseconds> sleeps;
  gw.set_sleeper([&](milliseconds d) { sleeps.push_back(d); });
  normsgame::agents::AgentContext ctx;
  ctx.self_name = "Alice";
  ctx.roster = {"Alice", "Bob"};
  const auto reply = gw.complete(normsgame::agents::build_model_request(ctx, "m", 0.0));
  CHECK(reply.find("<") != std::string::npos);
  CHECK(service.requests() == 3);
  CHECK(sleeps.size() == 2);
  CHECK(gw.calls().back().attempts == 3);
  CHECK(gw.embed("persona").values.size() == 8);

  service.stop();
  cfg.retry.attempts = 2;
  Gateway after(cfg);
  after.set_sleeper([](milliseconds) {});
  CHECK_THROWS_AS(after.complete(sample_request()), GatewayError);
}

TEST_CASE("mode names") {
  for (auto m : {Mode::Live, Mode::Record, Mode::Replay, Mode::Stub}) CHECK(parse_mode(to_string(m)) == m);
  CHECK_THROWS(parse_mode("offline"));
}

}
