#pragma once

#include <atomic>
#include <chrono>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <semaphore>
#include <string>
#include <vector>

#include <json.hpp>

namespace aera {

struct ChatMessage {
  std::string role;
  std::string content;
  friend bool operator==(const ChatMessage&, const ChatMessage&) = default;
};

struct CompletionRequest {
  std::string model_id;
  std::vector<ChatMessage> messages;
  double temperature = 1.0;
  std::optional<int> max_output_tokens;
  int sample_index = 0;

  /// SHA-256 over the canonical JSON of (model, messages, temperature, sample_index).
  std::string cache_key() const;

  static CompletionRequest user_prompt(std::string model_id, std::string prompt,
                                       double temperature = 1.0);
};

struct Usage {
  std::int64_t prompt_tokens = 0;
  std::int64_t output_tokens = 0;
  friend bool operator==(const Usage&, const Usage&) = default;
};

struct CompletionResult {
  std::string text;
  Usage usage;
  std::int64_t latency_ms = 0;
  bool from_cache = false;
  std::string diagnostic;  // required when text is empty
};

/// What a provider returned for one HTTP-level attempt.
struct ProviderReply {
  int status = 200;
  std::string text;
  Usage usage;
  std::string body;  // raw error body for non-2xx
};

class ChatProvider {
 public:
  virtual ~ChatProvider() = default;
  virtual ProviderReply send(const CompletionRequest& req) = 0;
};

/// Chat-completions-compatible HTTP endpoint. The credential is read from an
/// environment variable at construction time.
class HttpChatProvider : public ChatProvider {
 public:
  HttpChatProvider(std::string endpoint_url, std::string api_key_env = "AERA_API_KEY",
                   std::chrono::seconds timeout = std::chrono::seconds(120));
  ProviderReply send(const CompletionRequest& req) override;

  static nlohmann::json request_body(const CompletionRequest& req);
  static ProviderReply parse_response(int status, const std::string& body);

 private:
  std::string scheme_host_port_;
  std::string path_;
  std::string api_key_;
  std::chrono::seconds timeout_;
};

/// Deterministic scripted provider. Script shape:
///   {"default": {...}, "rules": [{"digest"|"contains"|"ends_with"|"sample_index": ..., reply}]}
/// where a reply is {"text": "..."} or {"text_by_sample": [...]} or
/// {"status": 429, "body": "..."}. The first matching rule wins. Usage is
/// counted in whitespace-separated words.
class MockChatProvider : public ChatProvider {
 public:
  explicit MockChatProvider(nlohmann::json script);
  static std::shared_ptr<MockChatProvider> from_file(const std::filesystem::path& path);

  ProviderReply send(const CompletionRequest& req) override;
  std::int64_t calls() const noexcept { return calls_.load(); }

 private:
  nlohmann::json script_;
  std::atomic<std::int64_t> calls_{0};
};

/// Content-addressed on-disk store: <dir>/<key[0:2]>/<key>.json.
class ResponseCache {
 public:
  explicit ResponseCache(std::filesystem::path dir);
  std::optional<CompletionResult> get(const std::string& key) const;
  void put(const std::string& key, const CompletionResult& result) const;
  const std::filesystem::path& dir() const noexcept { return dir_; }

 private:
  std::filesystem::path path_for(const std::string& key) const;
  std::filesystem::path dir_;
};

/// Prices in USD per million tokens.
struct ModelPrice {
  double prompt_usd_per_million = 0.0;
  double output_usd_per_million = 0.0;
};

/// Token counts per model and cost in integer nano-USD, so the total is exact.
class CostLedger {
 public:
  struct Entry {
    std::int64_t prompt_tokens = 0;
    std::int64_t output_tokens = 0;
    std::int64_t requests = 0;
  };

  void set_price(const std::string& model, ModelPrice price);
  void set_cap_usd(std::optional<double> cap);

  /// Throws BudgetExceeded when the running total has reached the cap.
  void check_budget() const;
  void record(const std::string& model, const Usage& usage);

  std::int64_t total_nano_usd() const;
  double total_usd() const { return static_cast<double>(total_nano_usd()) * 1e-9; }
  std::map<std::string, Entry> entries() const;

  nlohmann::json snapshot() const;
  void restore(const nlohmann::json& snap);

 private:
  static std::int64_t nano_per_token(double usd_per_million);
  std::int64_t total_locked() const;

  mutable std::mutex mu_;
  std::map<std::string, Entry> entries_;
  std::map<std::string, ModelPrice> prices_;
  std::optional<std::int64_t> cap_nano_;
};

struct GatewayOptions {
  std::size_t parallelism = 4;
  int max_attempts = 5;
  std::chrono::milliseconds backoff_base{500};
  std::optional<std::filesystem::path> cache_dir;
  std::optional<double> budget_cap_usd;
  std::map<std::string, ModelPrice> prices;
  std::function<void(std::chrono::milliseconds)> sleeper;  // test hook; defaults to sleep_for
};

struct SampleOutcome {
  int sample_index = 0;
  std::optional<CompletionResult> result;
  std::string error;  // set when result is empty
};

/// Thread-safe client: bounded in-flight requests, retries with exponential
/// backoff, disk cache, cost ledger.
class Gateway {
 public:
  Gateway(std::shared_ptr<ChatProvider> provider, GatewayOptions opts = {});

  CompletionResult complete_chat(const CompletionRequest& req);

  /// n requests with sample_index 0..n-1, issued concurrently. Failures are
  /// recorded per index; AllSamplesFailed only if every index failed.
  std::vector<SampleOutcome> sample_completions(const CompletionRequest& base, int n);

  CostLedger& ledger() noexcept { return ledger_; }
  const CostLedger& ledger() const noexcept { return ledger_; }
  std::int64_t provider_calls() const noexcept { return provider_calls_.load(); }
  std::size_t parallelism() const noexcept { return opts_.parallelism; }

 private:
  CompletionResult call_with_retries(const CompletionRequest& req);

  std::shared_ptr<ChatProvider> provider_;
  GatewayOptions opts_;
  std::optional<ResponseCache> cache_;
  CostLedger ledger_;
  std::counting_semaphore<1024> slots_;
  std::atomic<std::int64_t> provider_calls_{0};
};

/// Run fn(i) for i in [0, n) on up to `workers` threads; exceptions are
/// rethrown (first index wins) after all workers stop.
void parallel_for(std::size_t n, std::size_t workers, const std::function<void(std::size_t)>& fn);

}  // namespace aera
