#pragma once

#include <atomic>
#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "mobkit/records.hpp"

namespace mobkit {

/// An OpenAI-compatible chat-completions endpoint. `base_url` is everything before
/// "/chat/completions", e.g. "http://127.0.0.1:8000/v1".
struct EndpointConfig {
  std::string base_url;
  std::string model;
  /// Secret. Never logged, hashed or written to transcripts.
  std::string api_key;
  double temperature = 0.0;
  int max_tokens = 512;
  double timeout_s = 60.0;
  int max_retries = 3;
  int max_concurrency = 4;
  double backoff_base_s = 1.0;
  double backoff_cap_s = 30.0;
  /// Optional JSONL audit log of prompts and replies.
  std::optional<std::filesystem::path> transcript_path;

  /// Throws ConfigError.
  void validate() const;
};

/// Builds a config from a JSON/TOML-derived object. `api_key_env` names the environment variable
/// holding the key; an inline `api_key` is also accepted.
EndpointConfig endpoint_from_json(const json& j);

struct Usage {
  std::uint64_t prompt_tokens = 0;
  std::uint64_t completion_tokens = 0;
};

/// Thread-safe running totals.
class UsageLedger {
 public:
  void record(const Usage& usage) noexcept;
  void count_request() noexcept { requests_.fetch_add(1, std::memory_order_relaxed); }
  Usage totals() const noexcept;
  std::uint64_t requests() const noexcept { return requests_.load(std::memory_order_relaxed); }

 private:
  std::atomic<std::uint64_t> prompt_{0};
  std::atomic<std::uint64_t> completion_{0};
  std::atomic<std::uint64_t> requests_{0};
};

/// USD per million tokens.
struct ModelPrice {
  double input_per_m = 0.0;
  double output_per_m = 0.0;
};
using PriceTable = std::map<std::string, ModelPrice, std::less<>>;

/// {"<model>": {"input_per_million": x, "output_per_million": y}, ...}.
PriceTable price_table_from_json(const json& j);
/// The shipped table.
const PriceTable& default_price_table();
/// prompt_tokens * p_in + completion_tokens * p_out. Throws ConfigError if `model` is not priced.
double estimate_cost(const Usage& usage, const PriceTable& prices, std::string_view model);

struct Completion {
  std::string text;
  Usage usage;
  int attempts = 1;
};

/// Per-item result of complete_batch; exactly one of `completion` / `error` is set.
struct BatchItem {
  std::optional<Completion> completion;
  std::string error;
  /// "transport" or "api" for failures.
  std::string error_kind;
};

class Gateway {
 public:
  explicit Gateway(EndpointConfig cfg);
  ~Gateway();
  Gateway(const Gateway&) = delete;
  Gateway& operator=(const Gateway&) = delete;

  /// One chat-completions round trip. Connection failures, 408, 429 and 5xx are retried with
  /// jittered exponential backoff; other 4xx raise ApiError at once. Exhausted retries raise
  /// TransportError. Reentrant.
  Completion complete(const std::string& prompt);

  /// Runs at most max_concurrency requests at a time. result[i] answers prompts[i]; failures are
  /// recorded per item.
  std::vector<BatchItem> complete_batch(std::span<const std::string> prompts);

  const EndpointConfig& config() const noexcept { return cfg_; }
  const UsageLedger& ledger() const noexcept { return ledger_; }

 private:
  void write_transcript(const std::string& prompt, const std::string& reply, int status, int attempts);

  EndpointConfig cfg_;
  std::string scheme_host_;
  std::string path_;
  UsageLedger ledger_;
  std::mutex transcript_mutex_;
};

/// Request body for one prompt (single user message).
json chat_request_body(const EndpointConfig& cfg, const std::string& prompt);

}  // namespace mobkit
