#include <doctest.h>

#include <chrono>
#include <cmath>
#include <cstdlib>
#include <sstream>

#include <spdlog/sinks/ostream_sink.h>
#include <spdlog/spdlog.h>

#include "mobkit/errors.hpp"
#include "mobkit/gateway.hpp"
#include "mobkit/io.hpp"
#include "mock_endpoint.hpp"
#include "test_util.hpp"

using namespace mobkit;
using namespace mobkit::testing;

namespace {

EndpointConfig config_for(const MockEndpoint& mock) {
  EndpointConfig cfg;
  cfg.base_url = mock.base_url();
  cfg.model = "mock-model";
  cfg.api_key = "sk-test-secret-123";
  cfg.timeout_s = 5;
  cfg.backoff_base_s = 0.01;
  cfg.backoff_cap_s = 0.05;
  return cfg;
}

// Routes spdlog into a string for the lifetime of the object.
class LogCapture {
 public:
  LogCapture() : previous_(spdlog::default_logger()) {
    auto sink = std::make_shared<spdlog::sinks::ostream_sink_mt>(out_);
    auto logger = std::make_shared<spdlog::logger>("capture", sink);
    logger->set_level(spdlog::level::trace);
    spdlog::set_default_logger(logger);
  }
  ~LogCapture() { spdlog::set_default_logger(previous_); }
  std::string text() const { return out_.str(); }

 private:
  std::ostringstream out_;
  std::shared_ptr<spdlog::logger> previous_;
};

}  // namespace

TEST_CASE("echo reply is captured verbatim") {
  MockEndpoint mock([](const json&, std::size_t) { return MockReply{200, "{prediction: 7}", 12, 5, {}}; });
  Gateway gw(config_for(mock));
  const auto c = gw.complete("where next?");
  CHECK(c.text == "{prediction: 7}");
  CHECK(c.attempts == 1);
  CHECK(c.usage.prompt_tokens == 12);
  CHECK(c.usage.completion_tokens == 5);
  CHECK(gw.ledger().totals().prompt_tokens == 12);
  CHECK(gw.ledger().requests() == 1);
  REQUIRE(mock.auth_headers().size() == 1);
  CHECK(mock.auth_headers()[0] == "Bearer sk-test-secret-123");
}

TEST_CASE("request body has the chat-completions shape") {
  MockEndpoint mock([](const json&, std::size_t) { return MockReply{200, "ok", 0, 0, {}}; });
  auto cfg = config_for(mock);
  cfg.max_tokens = 64;
  Gateway gw(cfg);
  gw.complete("hello");
  const auto body = json::parse(mock.bodies().at(0));
  CHECK(body == chat_request_body(cfg, "hello"));
  CHECK(body.at("model") == "mock-model");
  CHECK(body.at("messages").size() == 1);
  CHECK(body.at("messages")[0].at("role") == "user");
  CHECK(body.at("messages")[0].at("content") == "hello");
  CHECK(body.at("temperature") == 0.0);
  CHECK(body.at("max_tokens") == 64);
  CHECK(body.at("stream") == false);
}

TEST_CASE("transient failures are retried") {
  MockEndpoint mock([](const json&, std::size_t call) {
    if (call < 2) return MockReply{500, {}, 0, 0, R"({"error": "busy"})"};
    return MockReply{200, "{prediction: 3}", 1, 1, {}};
  });
  Gateway gw(config_for(mock));
  const auto c = gw.complete("p");
  CHECK(c.text == "{prediction: 3}");
  CHECK(c.attempts == 3);
  CHECK(mock.calls() == 3);
  CHECK(gw.ledger().requests() == 3);
}

TEST_CASE("429 and 408 are transient too") {
  MockEndpoint mock([](const json&, std::size_t call) {
    if (call == 0) return MockReply{429, {}, 0, 0, {}};
    if (call == 1) return MockReply{408, {}, 0, 0, {}};
    return MockReply{200, "x", 0, 0, {}};
  });
  Gateway gw(config_for(mock));
  CHECK(gw.complete("p").attempts == 3);
}

TEST_CASE("401 fails at once") {
  MockEndpoint mock([](const json&, std::size_t) { return MockReply{401, {}, 0, 0, R"({"error": "denied"})"}; });
  Gateway gw(config_for(mock));
  try {
    gw.complete("p");
    FAIL("expected ApiError");
  } catch (const ApiError& e) {
    CHECK(e.status() == 401);
  }
  CHECK(mock.calls() == 1);
}

TEST_CASE("400 fails at once") {
  MockEndpoint mock([](const json&, std::size_t) { return MockReply{400, {}, 0, 0, "bad"}; });
  Gateway gw(config_for(mock));
  CHECK_THROWS_AS(gw.complete("p"), ApiError);
  CHECK(mock.calls() == 1);
}

TEST_CASE("exhausted retries raise TransportError") {
  MockEndpoint mock([](const json&, std::size_t) { return MockReply{503, {}, 0, 0, {}}; });
  auto cfg = config_for(mock);
  cfg.max_retries = 2;
  Gateway gw(cfg);
  CHECK_THROWS_AS(gw.complete("p"), TransportError);
  CHECK(mock.calls() == 3);
}

TEST_CASE("unreachable endpoint raises TransportError") {
  EndpointConfig cfg;
  cfg.base_url = "http://127.0.0.1:1/v1";
  cfg.model = "m";
  cfg.max_retries = 1;
  cfg.timeout_s = 1;
  cfg.backoff_base_s = 0.0;
  cfg.backoff_cap_s = 0.0;
  Gateway gw(cfg);
  CHECK_THROWS_AS(gw.complete("p"), TransportError);
}

TEST_CASE("garbage body is an ApiError") {
  MockEndpoint mock([](const json&, std::size_t) { return MockReply{200, {}, 0, 0, "not json"}; });
  Gateway gw(config_for(mock));
  CHECK_THROWS_AS(gw.complete("p"), ApiError);
}

TEST_CASE("backoff grows and is capped") {
  std::vector<std::chrono::steady_clock::time_point> stamps;
  std::mutex m;
  MockEndpoint mock([&](const json&, std::size_t call) {
    std::lock_guard lock(m);
    stamps.push_back(std::chrono::steady_clock::now());
    return call < 4 ? MockReply{500, {}, 0, 0, {}} : MockReply{200, "ok", 0, 0, {}};
  });
  auto cfg = config_for(mock);
  cfg.max_retries = 4;
  cfg.backoff_base_s = 0.05;
  cfg.backoff_cap_s = 0.1;
  Gateway gw(cfg);
  gw.complete("p");
  REQUIRE(stamps.size() == 5);
  // Nominal delays 0.05, 0.1, 0.1 (capped), 0.1, each jittered into [0.5, 1] of nominal.
  const double nominal[] = {0.05, 0.1, 0.1, 0.1};
  for (std::size_t i = 1; i < stamps.size(); ++i) {
    const double gap = std::chrono::duration<double>(stamps[i] - stamps[i - 1]).count();
    CHECK(gap >= 0.5 * nominal[i - 1] - 0.002);
    CHECK(gap <= nominal[i - 1] + 0.05);
  }
}

TEST_CASE("batch keeps input order under concurrency") {
  MockEndpoint mock([](const json& req, std::size_t call) {
    // Reverse-ish completion order: early calls sleep longer.
    std::this_thread::sleep_for(std::chrono::milliseconds(call % 8 == 0 ? 20 : 1));
    return MockReply{200, "echo:" + prompt_of(req), 1, 1, {}};
  });
  auto cfg = config_for(mock);
  cfg.max_concurrency = 8;
  Gateway gw(cfg);
  std::vector<std::string> prompts;
  for (int i = 0; i < 100; ++i) prompts.push_back("prompt " + std::to_string(i));
  const auto out = gw.complete_batch(prompts);
  REQUIRE(out.size() == 100);
  for (int i = 0; i < 100; ++i) {
    REQUIRE(out[i].completion.has_value());
    CHECK(out[i].completion->text == "echo:prompt " + std::to_string(i));
  }
  CHECK(mock.max_in_flight() <= 8);
  CHECK(mock.max_in_flight() >= 2);
  CHECK(gw.ledger().totals().prompt_tokens == 100);
  CHECK(gw.ledger().requests() == 100);
}

TEST_CASE("one permanent failure stays in its slot") {
  MockEndpoint mock([](const json& req, std::size_t) {
    if (prompt_of(req) == "prompt 3") return MockReply{400, {}, 0, 0, "rejected"};
    if (prompt_of(req) == "prompt 5") return MockReply{500, {}, 0, 0, {}};
    return MockReply{200, "ok " + prompt_of(req), 0, 0, {}};
  });
  auto cfg = config_for(mock);
  cfg.max_concurrency = 4;
  cfg.max_retries = 1;
  Gateway gw(cfg);
  std::vector<std::string> prompts;
  for (int i = 0; i < 10; ++i) prompts.push_back("prompt " + std::to_string(i));
  const auto out = gw.complete_batch(prompts);
  for (int i = 0; i < 10; ++i) {
    if (i == 3) {
      CHECK_FALSE(out[i].completion.has_value());
      CHECK(out[i].error_kind == "api");
      CHECK_FALSE(out[i].error.empty());
    } else if (i == 5) {
      CHECK_FALSE(out[i].completion.has_value());
      CHECK(out[i].error_kind == "transport");
    } else {
      REQUIRE(out[i].completion.has_value());
      CHECK(out[i].completion->text == "ok prompt " + std::to_string(i));
    }
  }
}

TEST_CASE("empty batch") {
  MockEndpoint mock([](const json&, std::size_t) { return MockReply{200, "x", 0, 0, {}}; });
  Gateway gw(config_for(mock));
  CHECK(gw.complete_batch({}).empty());
  CHECK(mock.calls() == 0);
}

TEST_CASE("sequential batch is reproducible") {
  auto run = [] {
    MockEndpoint mock([](const json& req, std::size_t call) {
      return MockReply{200, std::to_string(call) + ":" + prompt_of(req), 0, 0, {}};
    });
    auto cfg = config_for(mock);
    cfg.max_concurrency = 1;
    Gateway gw(cfg);
    std::vector<std::string> prompts = {"a", "b", "c", "d"};
    std::string all;
    for (const auto& item : gw.complete_batch(prompts)) all += item.completion->text + "\n";
    return all;
  };
  const auto first = run();
  CHECK(first == "0:a\n1:b\n2:c\n3:d\n");
  CHECK(run() == first);
}

TEST_CASE("the api key never reaches logs or transcripts") {
  TempDir dir;
  const std::string secret = "sk-test-secret-123";
  std::string logs;
  {
    LogCapture capture;
    MockEndpoint mock([](const json&, std::size_t call) {
      if (call == 0) return MockReply{500, {}, 0, 0, {}};
      if (call == 2) return MockReply{401, {}, 0, 0, "no"};
      return MockReply{200, "{prediction: 1}", 1, 1, {}};
    });
    auto cfg = config_for(mock);
    cfg.transcript_path = dir / "transcript.jsonl";
    Gateway gw(cfg);
    gw.complete("first");
    CHECK_THROWS_AS(gw.complete("second"), ApiError);
    logs = capture.text();
  }
  const auto transcript = io::read_text(dir / "transcript.jsonl");
  CHECK(transcript.find("\"prompt\":\"first\"") != std::string::npos);
  CHECK(transcript.find(secret) == std::string::npos);
  CHECK(logs.find("attempt") != std::string::npos);
  CHECK(logs.find(secret) == std::string::npos);
  for (const auto& row : io::read_jsonl(dir / "transcript.jsonl")) {
    CHECK_FALSE(row.contains("api_key"));
    CHECK_FALSE(row.contains("headers"));
  }
}

TEST_CASE("endpoint config from json") {
  ::setenv("MOBKIT_TEST_KEY", "from-env", 1);
  const auto cfg = endpoint_from_json(
      json{{"base_url", "http://localhost:8000/v1"}, {"model", "m"}, {"api_key_env", "MOBKIT_TEST_KEY"},
           {"max_concurrency", 8}, {"temperature", 0.3}});
  CHECK(cfg.api_key == "from-env");
  CHECK(cfg.max_concurrency == 8);
  CHECK(cfg.temperature == doctest::Approx(0.3));
  CHECK(cfg.max_retries == 3);
  CHECK(cfg.backoff_base_s == 1.0);
  CHECK(cfg.backoff_cap_s == 30.0);
  ::unsetenv("MOBKIT_TEST_KEY_MISSING");
  CHECK_THROWS_AS(endpoint_from_json(json{{"base_url", "http://x"}, {"model", "m"},
                                          {"api_key_env", "MOBKIT_TEST_KEY_MISSING"}}),
                  ConfigError);
  CHECK_THROWS_AS(endpoint_from_json(json{{"base_url", "http://x"}, {"model", "m"}, {"colour", "red"}}), ConfigError);
  CHECK_THROWS_AS(endpoint_from_json(json{{"base_url", "ftp://x"}, {"model", "m"}}), ConfigError);
  CHECK_THROWS_AS(endpoint_from_json(json{{"base_url", "http://x"}, {"model", "m"}, {"temperature", -1}}),
                  ConfigError);
  CHECK_THROWS_AS(endpoint_from_json(json{{"model", "m"}}), ConfigError);
  EndpointConfig bad;
  bad.base_url = "http://x";
  bad.model = "m";
  bad.max_concurrency = 0;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
}

TEST_CASE("cost estimates") {
  const auto& prices = default_price_table();
  CHECK(estimate_cost(Usage{1'000'000, 0}, prices, "gpt-4o-mini") == doctest::Approx(0.15).epsilon(1e-12));
  CHECK(estimate_cost(Usage{0, 0}, prices, "gpt-4o-mini") == 0.0);
  CHECK(estimate_cost(Usage{2'000'000, 500'000}, prices, "gpt-4o-mini") ==
        doctest::Approx(0.3 + 0.3).epsilon(1e-12));
  // About 1.2M generated tokens should land near a dollar, not tens of dollars.
  const double generation = estimate_cost(Usage{0, 1'200'000}, prices, "gpt-4o-mini");
  CHECK(generation > 0.1);
  CHECK(generation < 5.0);
  CHECK_THROWS_AS(estimate_cost(Usage{}, prices, "unknown-model"), ConfigError);
  const auto custom = price_table_from_json(json{{"m", {{"input_per_million", 2.0}, {"output_per_million", 4.0}}}});
  CHECK(estimate_cost(Usage{500'000, 250'000}, custom, "m") == doctest::Approx(2.0));
  CHECK_THROWS_AS(price_table_from_json(json{{"m", {{"input_per_million", -1.0}, {"output_per_million", 1.0}}}}),
                  ConfigError);
  CHECK_THROWS_AS(price_table_from_json(json::array()), ConfigError);
}

TEST_CASE("ledger is safe under concurrent updates") {
  UsageLedger ledger;
  std::vector<std::thread> threads;
  for (int t = 0; t < 8; ++t) {
    threads.emplace_back([&] {
      for (int i = 0; i < 1000; ++i) {
        ledger.record(Usage{1, 2});
        ledger.count_request();
      }
    });
  }
  for (auto& t : threads) t.join();
  CHECK(ledger.totals().prompt_tokens == 8000);
  CHECK(ledger.totals().completion_tokens == 16000);
  CHECK(ledger.requests() == 8000);
}
