#include "mobkit/gateway.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <functional>
#include <thread>

#include <httplib.h>
#include <spdlog/spdlog.h>

#include "mobkit/assets.hpp"
#include "mobkit/errors.hpp"
#include "mobkit/rng.hpp"

namespace mobkit {
namespace {

bool retryable_status(int status) { return status == 408 || status == 429 || status >= 500; }

const std::vector<std::string_view> kEndpointKeys = {
    "base_url",       "model",          "api_key",      "api_key_env",     "temperature",  "max_tokens",
    "timeout_s",      "max_retries",    "max_concurrency", "backoff_base_s", "backoff_cap_s", "transcript"};

}  // namespace

void EndpointConfig::validate() const {
  if (base_url.rfind("http://", 0) != 0 && base_url.rfind("https://", 0) != 0) {
    throw ConfigError("endpoint base_url must start with http:// or https://, got '" + base_url + "'");
  }
  if (model.empty()) throw ConfigError("endpoint model name is empty");
  if (!(temperature >= 0.0)) throw ConfigError("endpoint temperature must be >= 0");
  if (max_tokens <= 0) throw ConfigError("endpoint max_tokens must be positive");
  if (!(timeout_s > 0.0)) throw ConfigError("endpoint timeout must be positive");
  if (max_retries < 0) throw ConfigError("endpoint max_retries must be >= 0");
  if (max_concurrency < 1) throw ConfigError("endpoint max_concurrency must be >= 1");
  if (backoff_base_s < 0.0 || backoff_cap_s < backoff_base_s) {
    throw ConfigError("endpoint backoff needs 0 <= base <= cap");
  }
}

EndpointConfig endpoint_from_json(const json& j) {
  if (!j.is_object()) throw ConfigError("endpoint config must be a table");
  for (const auto& [key, _] : j.items()) {
    if (std::find(kEndpointKeys.begin(), kEndpointKeys.end(), key) == kEndpointKeys.end()) {
      throw ConfigError("unknown endpoint key '" + key + "'");
    }
  }
  EndpointConfig cfg;
  try {
    cfg.base_url = j.at("base_url").get<std::string>();
    cfg.model = j.at("model").get<std::string>();
    cfg.api_key = j.value("api_key", std::string{});
    if (j.contains("api_key_env")) {
      const auto var = j.at("api_key_env").get<std::string>();
      const char* value = std::getenv(var.c_str());
      if (value == nullptr) throw ConfigError("environment variable " + var + " is not set");
      cfg.api_key = value;
    }
    cfg.temperature = j.value("temperature", cfg.temperature);
    cfg.max_tokens = j.value("max_tokens", cfg.max_tokens);
    cfg.timeout_s = j.value("timeout_s", cfg.timeout_s);
    cfg.max_retries = j.value("max_retries", cfg.max_retries);
    cfg.max_concurrency = j.value("max_concurrency", cfg.max_concurrency);
    cfg.backoff_base_s = j.value("backoff_base_s", cfg.backoff_base_s);
    cfg.backoff_cap_s = j.value("backoff_cap_s", cfg.backoff_cap_s);
    if (j.contains("transcript")) cfg.transcript_path = j.at("transcript").get<std::string>();
  } catch (const json::exception& e) {
    throw ConfigError(std::string("malformed endpoint config: ") + e.what());
  }
  cfg.validate();
  return cfg;
}

void UsageLedger::record(const Usage& usage) noexcept {
  prompt_.fetch_add(usage.prompt_tokens, std::memory_order_relaxed);
  completion_.fetch_add(usage.completion_tokens, std::memory_order_relaxed);
}

Usage UsageLedger::totals() const noexcept {
  return Usage{prompt_.load(std::memory_order_relaxed), completion_.load(std::memory_order_relaxed)};
}

PriceTable price_table_from_json(const json& j) {
  if (!j.is_object()) throw ConfigError("price table must be an object keyed by model");
  PriceTable table;
  try {
    for (const auto& [model, price] : j.items()) {
      ModelPrice p{price.at("input_per_million").get<double>(), price.at("output_per_million").get<double>()};
      if (p.input_per_m < 0.0 || p.output_per_m < 0.0) throw ConfigError("negative price for " + model);
      table.emplace(model, p);
    }
  } catch (const json::exception& e) {
    throw ConfigError(std::string("malformed price table: ") + e.what());
  }
  return table;
}

const PriceTable& default_price_table() {
  static const PriceTable table = price_table_from_json(json::parse(embedded_asset("prices.json")));
  return table;
}

double estimate_cost(const Usage& usage, const PriceTable& prices, std::string_view model) {
  auto it = prices.find(model);
  if (it == prices.end()) throw ConfigError("no price listed for model '" + std::string(model) + "'");
  return (static_cast<double>(usage.prompt_tokens) * it->second.input_per_m +
          static_cast<double>(usage.completion_tokens) * it->second.output_per_m) /
         1e6;
}

json chat_request_body(const EndpointConfig& cfg, const std::string& prompt) {
  return json{{"model", cfg.model},
              {"messages", json::array({json{{"role", "user"}, {"content", prompt}}})},
              {"temperature", cfg.temperature},
              {"max_tokens", cfg.max_tokens},
              {"stream", false}};
}

Gateway::Gateway(EndpointConfig cfg) : cfg_(std::move(cfg)) {
  cfg_.validate();
  const auto scheme_end = cfg_.base_url.find("://") + 3;
  const auto slash = cfg_.base_url.find('/', scheme_end);
  scheme_host_ = cfg_.base_url.substr(0, slash);
  path_ = slash == std::string::npos ? std::string{} : cfg_.base_url.substr(slash);
  while (!path_.empty() && path_.back() == '/') path_.pop_back();
  path_ += "/chat/completions";
}

Gateway::~Gateway() = default;

void Gateway::write_transcript(const std::string& prompt, const std::string& reply, int status, int attempts) {
  if (!cfg_.transcript_path) return;
  const json row{{"model", cfg_.model}, {"prompt", prompt}, {"reply", reply}, {"status", status},
                 {"attempts", attempts}};
  std::lock_guard lock(transcript_mutex_);
  std::ofstream out(*cfg_.transcript_path, std::ios::app);
  out << row.dump() << '\n';
}

Completion Gateway::complete(const std::string& prompt) {
  if (prompt.empty()) throw ValidationError("refusing to send an empty prompt");
  httplib::Client client(scheme_host_);
  const auto timeout = std::chrono::duration<double>(cfg_.timeout_s);
  client.set_connection_timeout(std::chrono::duration_cast<std::chrono::microseconds>(timeout));
  client.set_read_timeout(std::chrono::duration_cast<std::chrono::microseconds>(timeout));
  client.set_write_timeout(std::chrono::duration_cast<std::chrono::microseconds>(timeout));
  httplib::Headers headers;
  if (!cfg_.api_key.empty()) headers.emplace("Authorization", "Bearer " + cfg_.api_key);
  const auto body = chat_request_body(cfg_, prompt).dump();

  Rng jitter(std::hash<std::string>{}(prompt));
  std::string last_failure;
  const int attempts = cfg_.max_retries + 1;
  for (int attempt = 1; attempt <= attempts; ++attempt) {
    if (attempt > 1) {
      const double delay = std::min(cfg_.backoff_cap_s, cfg_.backoff_base_s * std::ldexp(1.0, attempt - 2));
      std::this_thread::sleep_for(std::chrono::duration<double>(delay * (0.5 + 0.5 * jitter.unit())));
    }
    ledger_.count_request();
    auto res = client.Post(path_, headers, body, "application/json");
    if (!res) {
      last_failure = "connection failed: " + httplib::to_string(res.error());
      spdlog::warn("{} attempt {}/{}: {}", cfg_.model, attempt, attempts, last_failure);
      continue;
    }
    if (retryable_status(res->status)) {
      last_failure = "HTTP " + std::to_string(res->status);
      spdlog::warn("{} attempt {}/{}: {}", cfg_.model, attempt, attempts, last_failure);
      continue;
    }
    if (res->status < 200 || res->status >= 300) {
      write_transcript(prompt, res->body, res->status, attempt);
      throw ApiError(res->status, "endpoint returned HTTP " + std::to_string(res->status) + ": " +
                                      res->body.substr(0, 200));
    }
    Completion out;
    out.attempts = attempt;
    try {
      const auto reply = json::parse(res->body);
      const auto& content = reply.at("choices").at(0).at("message").at("content");
      out.text = content.is_null() ? std::string{} : content.get<std::string>();
      if (reply.contains("usage") && reply["usage"].is_object()) {
        out.usage.prompt_tokens = reply["usage"].value("prompt_tokens", std::uint64_t{0});
        out.usage.completion_tokens = reply["usage"].value("completion_tokens", std::uint64_t{0});
      }
    } catch (const json::exception& e) {
      throw ApiError(res->status, std::string("unreadable chat-completions response: ") + e.what());
    }
    ledger_.record(out.usage);
    write_transcript(prompt, out.text, res->status, attempt);
    return out;
  }
  throw TransportError("giving up after " + std::to_string(attempts) + " attempts: " + last_failure);
}

std::vector<BatchItem> Gateway::complete_batch(std::span<const std::string> prompts) {
  std::vector<BatchItem> results(prompts.size());
  if (prompts.empty()) return results;
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t i = next.fetch_add(1); i < prompts.size(); i = next.fetch_add(1)) {
      try {
        results[i].completion = complete(prompts[i]);
      } catch (const ApiError& e) {
        results[i].error = e.what();
        results[i].error_kind = "api";
      } catch (const Error& e) {
        results[i].error = e.what();
        results[i].error_kind = "transport";
      }
    }
  };
  const auto n_workers = std::min<std::size_t>(static_cast<std::size_t>(cfg_.max_concurrency), prompts.size());
  if (n_workers == 1) {
    worker();
    return results;
  }
  std::vector<std::thread> pool;
  pool.reserve(n_workers);
  for (std::size_t w = 0; w < n_workers; ++w) pool.emplace_back(worker);
  for (auto& t : pool) t.join();
  return results;
}

}  // namespace mobkit
