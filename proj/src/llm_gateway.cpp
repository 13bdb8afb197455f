#include "aera/llm_gateway.hpp"

#include <cmath>
#include <cstdlib>
#include <exception>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <thread>

#include <httplib.h>

#include "aera/error.hpp"
#include "aera/text.hpp"

namespace aera {

namespace {

using Clock = std::chrono::steady_clock;

nlohmann::json messages_json(const std::vector<ChatMessage>& msgs) {
  auto arr = nlohmann::json::array();
  for (const auto& m : msgs) arr.push_back({{"role", m.role}, {"content", m.content}});
  return arr;
}

std::int64_t words_in(const std::vector<ChatMessage>& msgs) {
  std::int64_t n = 0;
  for (const auto& m : msgs) n += static_cast<std::int64_t>(text::word_count(m.content));
  return n;
}

bool is_retryable(int status) { return status == 0 || status == 429 || status >= 500; }

bool looks_like_length_error(const std::string& body) {
  const auto b = text::to_lower(body);
  return b.find("context_length_exceeded") != std::string::npos ||
         b.find("maximum context length") != std::string::npos ||
         b.find("prompt is too long") != std::string::npos;
}

void validate(const CompletionRequest& req) {
  if (req.messages.empty()) throw std::invalid_argument("completion request has no messages");
  if (!(req.temperature >= 0.0)) throw std::invalid_argument("temperature must be >= 0");
  if (req.model_id.empty()) throw std::invalid_argument("completion request has no model id");
}

}  // namespace

// ---------------------------------------------------------------------------
// CompletionRequest

std::string CompletionRequest::cache_key() const {
  nlohmann::json j;
  j["model"] = model_id;
  j["messages"] = messages_json(messages);
  j["temperature"] = temperature;
  j["sample_index"] = sample_index;
  return text::sha256_hex(j.dump());
}

CompletionRequest CompletionRequest::user_prompt(std::string model_id, std::string prompt,
                                                 double temperature) {
  CompletionRequest r;
  r.model_id = std::move(model_id);
  r.messages.push_back({"user", std::move(prompt)});
  r.temperature = temperature;
  return r;
}

// ---------------------------------------------------------------------------
// HttpChatProvider

HttpChatProvider::HttpChatProvider(std::string endpoint_url, std::string api_key_env,
                                   std::chrono::seconds timeout)
    : timeout_(timeout) {
  const auto scheme_end = endpoint_url.find("://");
  if (scheme_end == std::string::npos) throw ConfigInvalid("endpoint url needs a scheme: " + endpoint_url);
  const auto path_start = endpoint_url.find('/', scheme_end + 3);
  scheme_host_port_ = endpoint_url.substr(0, path_start);
  path_ = path_start == std::string::npos ? "/" : endpoint_url.substr(path_start);

  const char* key = std::getenv(api_key_env.c_str());
  if (key == nullptr || *key == '\0')
    throw ConfigInvalid("credential environment variable " + api_key_env + " is not set");
  api_key_ = key;
}

nlohmann::json HttpChatProvider::request_body(const CompletionRequest& req) {
  nlohmann::json j;
  j["model"] = req.model_id;
  j["messages"] = messages_json(req.messages);
  j["temperature"] = req.temperature;
  j["n"] = 1;
  if (req.max_output_tokens) j["max_tokens"] = *req.max_output_tokens;
  return j;
}

ProviderReply HttpChatProvider::parse_response(int status, const std::string& body) {
  ProviderReply r;
  r.status = status;
  if (status < 200 || status >= 300) {
    r.body = body;
    return r;
  }
  const auto j = nlohmann::json::parse(body, nullptr, false);
  if (j.is_discarded() || !j.contains("choices") || !j["choices"].is_array() || j["choices"].empty()) {
    r.status = 502;
    r.body = "unparseable completion response: " + body.substr(0, 200);
    return r;
  }
  const auto& msg = j["choices"][0].value("message", nlohmann::json::object());
  if (msg.contains("content") && msg["content"].is_string()) r.text = msg["content"].get<std::string>();
  if (j.contains("usage") && j["usage"].is_object()) {
    r.usage.prompt_tokens = j["usage"].value("prompt_tokens", std::int64_t{0});
    r.usage.output_tokens = j["usage"].value("completion_tokens", std::int64_t{0});
  }
  if (r.text.empty()) r.body = body.substr(0, 200);
  return r;
}

ProviderReply HttpChatProvider::send(const CompletionRequest& req) {
  httplib::Client cli(scheme_host_port_);
  cli.set_connection_timeout(timeout_);
  cli.set_read_timeout(timeout_);
  cli.set_write_timeout(timeout_);
  httplib::Headers headers{{"Authorization", "Bearer " + api_key_}};
  auto res = cli.Post(path_, headers, request_body(req).dump(), "application/json");
  if (!res) {
    ProviderReply r;
    r.status = 0;
    r.body = "transport error: " + httplib::to_string(res.error());
    return r;
  }
  return parse_response(res->status, res->body);
}

// ---------------------------------------------------------------------------
// MockChatProvider

MockChatProvider::MockChatProvider(nlohmann::json script) : script_(std::move(script)) {
  if (!script_.is_object()) throw ConfigInvalid("mock script must be a JSON object");
  if (script_.contains("rules") && !script_["rules"].is_array())
    throw ConfigInvalid("mock script 'rules' must be an array");
}

std::shared_ptr<MockChatProvider> MockChatProvider::from_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigInvalid("cannot open mock script " + path.string());
  auto j = nlohmann::json::parse(in, nullptr, false);
  if (j.is_discarded()) throw ConfigInvalid("mock script is not valid JSON: " + path.string());
  return std::make_shared<MockChatProvider>(std::move(j));
}

ProviderReply MockChatProvider::send(const CompletionRequest& req) {
  ++calls_;
  std::string prompt;
  for (const auto& m : req.messages) {
    if (!prompt.empty()) prompt += '\n';
    prompt += m.content;
  }

  auto matches = [&](const nlohmann::json& rule) {
    if (rule.contains("digest") && rule["digest"].get<std::string>() != req.cache_key()) return false;
    if (rule.contains("sample_index") && rule["sample_index"].get<int>() != req.sample_index) return false;
    if (rule.contains("contains")) {
      const auto& c = rule["contains"];
      if (c.is_string()) {
        if (prompt.find(c.get<std::string>()) == std::string::npos) return false;
      } else {
        for (const auto& s : c)
          if (prompt.find(s.get<std::string>()) == std::string::npos) return false;
      }
    }
    if (rule.contains("ends_with")) {
      const auto suffix = rule["ends_with"].get<std::string>();
      if (prompt.size() < suffix.size() || prompt.compare(prompt.size() - suffix.size(), suffix.size(), suffix) != 0)
        return false;
    }
    return true;
  };

  auto reply_from = [&](const nlohmann::json& rule) {
    ProviderReply r;
    if (rule.contains("status")) {
      r.status = rule["status"].get<int>();
      r.body = rule.value("body", std::string());
      if (r.status >= 200 && r.status < 300) r.text = rule.value("text", std::string());
    } else if (rule.contains("text_by_sample")) {
      const auto& arr = rule["text_by_sample"];
      if (arr.empty()) throw ConfigInvalid("mock rule has an empty text_by_sample");
      const auto idx = static_cast<std::size_t>(req.sample_index) % arr.size();
      r.text = arr[idx].get<std::string>();
    } else {
      r.text = rule.value("text", std::string());
    }
    if (r.status >= 200 && r.status < 300) {
      r.usage.prompt_tokens = words_in(req.messages);
      r.usage.output_tokens = static_cast<std::int64_t>(text::word_count(r.text));
    }
    return r;
  };

  if (script_.contains("rules")) {
    for (const auto& rule : script_["rules"])
      if (matches(rule)) return reply_from(rule);
  }
  if (script_.contains("default")) return reply_from(script_["default"]);
  ProviderReply none;
  none.status = 404;
  none.body = "mock script has no rule for this request";
  return none;
}

// ---------------------------------------------------------------------------
// ResponseCache

ResponseCache::ResponseCache(std::filesystem::path dir) : dir_(std::move(dir)) {
  std::filesystem::create_directories(dir_);
}

std::filesystem::path ResponseCache::path_for(const std::string& key) const {
  return dir_ / key.substr(0, 2) / (key + ".json");
}

std::optional<CompletionResult> ResponseCache::get(const std::string& key) const {
  std::ifstream in(path_for(key));
  if (!in) return std::nullopt;
  auto j = nlohmann::json::parse(in, nullptr, false);
  if (j.is_discarded() || !j.is_object()) return std::nullopt;
  CompletionResult r;
  r.text = j.value("text", std::string());
  r.usage.prompt_tokens = j["usage"].value("prompt_tokens", std::int64_t{0});
  r.usage.output_tokens = j["usage"].value("output_tokens", std::int64_t{0});
  r.latency_ms = j.value("latency_ms", std::int64_t{0});
  r.diagnostic = j.value("diagnostic", std::string());
  r.from_cache = true;
  return r;
}

void ResponseCache::put(const std::string& key, const CompletionResult& result) const {
  const auto target = path_for(key);
  std::filesystem::create_directories(target.parent_path());
  nlohmann::json j;
  j["text"] = result.text;
  j["usage"] = {{"prompt_tokens", result.usage.prompt_tokens},
                {"output_tokens", result.usage.output_tokens}};
  j["latency_ms"] = result.latency_ms;
  j["diagnostic"] = result.diagnostic;

  std::ostringstream tid;
  tid << std::this_thread::get_id();
  auto tmp = target;
  tmp += ".tmp." + tid.str();
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    out << j.dump();
  }
  std::filesystem::rename(tmp, target);
}

// ---------------------------------------------------------------------------
// CostLedger

std::int64_t CostLedger::nano_per_token(double usd_per_million) {
  // USD per 1e6 tokens -> nano-USD per token.
  return static_cast<std::int64_t>(std::llround(usd_per_million * 1000.0));
}

void CostLedger::set_price(const std::string& model, ModelPrice price) {
  std::lock_guard lk(mu_);
  prices_[model] = price;
}

void CostLedger::set_cap_usd(std::optional<double> cap) {
  std::lock_guard lk(mu_);
  if (cap) {
    cap_nano_ = static_cast<std::int64_t>(std::llround(*cap * 1e9));
  } else {
    cap_nano_.reset();
  }
}

std::int64_t CostLedger::total_locked() const {
  std::int64_t total = 0;
  for (const auto& [model, e] : entries_) {
    auto it = prices_.find(model);
    if (it == prices_.end()) continue;
    total += e.prompt_tokens * nano_per_token(it->second.prompt_usd_per_million) +
             e.output_tokens * nano_per_token(it->second.output_usd_per_million);
  }
  return total;
}

void CostLedger::check_budget() const {
  std::lock_guard lk(mu_);
  if (cap_nano_ && total_locked() >= *cap_nano_)
    throw BudgetExceeded("spend " + std::to_string(total_locked()) + " nano-USD reached cap " +
                         std::to_string(*cap_nano_));
}

void CostLedger::record(const std::string& model, const Usage& usage) {
  std::lock_guard lk(mu_);
  auto& e = entries_[model];
  e.prompt_tokens += usage.prompt_tokens;
  e.output_tokens += usage.output_tokens;
  e.requests += 1;
}

std::int64_t CostLedger::total_nano_usd() const {
  std::lock_guard lk(mu_);
  return total_locked();
}

std::map<std::string, CostLedger::Entry> CostLedger::entries() const {
  std::lock_guard lk(mu_);
  return entries_;
}

nlohmann::json CostLedger::snapshot() const {
  std::lock_guard lk(mu_);
  nlohmann::json j;
  j["models"] = nlohmann::json::object();
  for (const auto& [model, e] : entries_) {
    nlohmann::json m{{"prompt_tokens", e.prompt_tokens},
                     {"output_tokens", e.output_tokens},
                     {"requests", e.requests}};
    if (auto it = prices_.find(model); it != prices_.end()) {
      m["prompt_usd_per_million"] = it->second.prompt_usd_per_million;
      m["output_usd_per_million"] = it->second.output_usd_per_million;
    }
    j["models"][model] = m;
  }
  j["total_nano_usd"] = total_locked();
  j["total_usd"] = static_cast<double>(total_locked()) * 1e-9;
  return j;
}

void CostLedger::restore(const nlohmann::json& snap) {
  std::lock_guard lk(mu_);
  entries_.clear();
  if (!snap.contains("models")) return;
  for (const auto& [model, m] : snap["models"].items()) {
    Entry e;
    e.prompt_tokens = m.value("prompt_tokens", std::int64_t{0});
    e.output_tokens = m.value("output_tokens", std::int64_t{0});
    e.requests = m.value("requests", std::int64_t{0});
    entries_[model] = e;
    if (m.contains("prompt_usd_per_million") && !prices_.contains(model))
      prices_[model] = {m["prompt_usd_per_million"].get<double>(), m["output_usd_per_million"].get<double>()};
  }
}

// ---------------------------------------------------------------------------
// Gateway

Gateway::Gateway(std::shared_ptr<ChatProvider> provider, GatewayOptions opts)
    : provider_(std::move(provider)),
      opts_(std::move(opts)),
      slots_(static_cast<std::ptrdiff_t>(std::clamp<std::size_t>(opts_.parallelism, 1, 1024))) {
  if (!provider_) throw ConfigInvalid("gateway needs a provider");
  if (opts_.parallelism == 0 || opts_.parallelism > 1024)
    throw ConfigInvalid("parallelism must be in 1..1024");
  if (opts_.max_attempts < 1) throw ConfigInvalid("max_attempts must be >= 1");
  if (opts_.cache_dir) cache_.emplace(*opts_.cache_dir);
  for (const auto& [model, price] : opts_.prices) ledger_.set_price(model, price);
  ledger_.set_cap_usd(opts_.budget_cap_usd);
  if (!opts_.sleeper) opts_.sleeper = [](std::chrono::milliseconds d) { std::this_thread::sleep_for(d); };
}

CompletionResult Gateway::call_with_retries(const CompletionRequest& req) {
  ProviderReply last;
  for (int attempt = 1; attempt <= opts_.max_attempts; ++attempt) {
    ledger_.check_budget();
    const auto start = Clock::now();
    {
      slots_.acquire();
      try {
        ++provider_calls_;
        last = provider_->send(req);
      } catch (...) {
        slots_.release();
        throw;
      }
      slots_.release();
    }
    const auto elapsed = std::chrono::duration_cast<std::chrono::milliseconds>(Clock::now() - start);

    if (last.status >= 200 && last.status < 300) {
      CompletionResult r;
      r.text = std::move(last.text);
      r.usage = last.usage;
      r.latency_ms = elapsed.count();
      if (r.text.empty())
        r.diagnostic = last.body.empty() ? "provider returned empty content" : last.body;
      ledger_.record(req.model_id, r.usage);
      return r;
    }
    if (last.status == 400 && looks_like_length_error(last.body)) throw PromptTooLong(last.body);
    if (!is_retryable(last.status)) break;
    if (attempt < opts_.max_attempts) {
      const auto shift = std::min(attempt - 1, 16);
      opts_.sleeper(opts_.backoff_base * (std::int64_t{1} << shift));
    }
  }
  throw ProviderError(last.status, last.body);
}

CompletionResult Gateway::complete_chat(const CompletionRequest& req) {
  validate(req);
  std::string key;
  if (cache_) {
    key = req.cache_key();
    if (auto hit = cache_->get(key)) return *hit;
  }
  auto r = call_with_retries(req);
  if (cache_) cache_->put(key, r);
  return r;
}

std::vector<SampleOutcome> Gateway::sample_completions(const CompletionRequest& base, int n) {
  if (n < 1) throw std::invalid_argument("sample_completions needs n >= 1");
  std::vector<SampleOutcome> out(static_cast<std::size_t>(n));
  parallel_for(out.size(), opts_.parallelism, [&](std::size_t i) {
    CompletionRequest req = base;
    req.sample_index = static_cast<int>(i);
    out[i].sample_index = req.sample_index;
    try {
      out[i].result = complete_chat(req);
    } catch (const ProviderError& e) {
      out[i].error = e.what();
    } catch (const PromptTooLong& e) {
      out[i].error = std::string("prompt too long: ") + e.what();
    }
  });
  for (const auto& o : out)
    if (o.result) return out;
  throw AllSamplesFailed("all " + std::to_string(n) + " samples failed; first: " + out.front().error);
}

void parallel_for(std::size_t n, std::size_t workers, const std::function<void(std::size_t)>& fn) {
  if (n == 0) return;
  workers = std::clamp<std::size_t>(workers, 1, n);
  std::vector<std::exception_ptr> errors(n);
  if (workers == 1) {
    for (std::size_t i = 0; i < n; ++i) {
      try {
        fn(i);
      } catch (...) {
        errors[i] = std::current_exception();
      }
    }
  } else {
    std::atomic<std::size_t> next{0};
    std::vector<std::thread> threads;
    threads.reserve(workers);
    for (std::size_t w = 0; w < workers; ++w) {
      threads.emplace_back([&] {
        for (std::size_t i = next++; i < n; i = next++) {
          try {
            fn(i);
          } catch (...) {
            errors[i] = std::current_exception();
          }
        }
      });
    }
    for (auto& t : threads) t.join();
  }
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
}

}  // namespace aera
