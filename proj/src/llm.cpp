#include "specagent/llm.hpp"

#include <chrono>
#include <cmath>
#include <condition_variable>
#include <cstdlib>
#include <fstream>
#include <thread>

#include <httplib.h>
#include <json.hpp>

#include "specagent/util.hpp"

namespace specagent {

using nlohmann::json;

const char* to_string(Role role) {
  switch (role) {
    case Role::System: return "system";
    case Role::User: return "user";
    case Role::Assistant: return "assistant";
  }
  return "user";
}

Role role_from_string(const std::string& name) {
  if (name == "system") return Role::System;
  if (name == "assistant") return Role::Assistant;
  if (name == "user") return Role::User;
  raise(ErrorCode::ParseError, "unknown chat role '" + name + "'");
}

std::string ChatExchange::to_json() const {
  json j;
  json msgs = json::array();
  for (const ChatMessage& m : messages)
    msgs.push_back({{"role", to_string(m.role)}, {"content", m.content}});
  j["messages"] = std::move(msgs);
  j["response"] = response;
  j["usage"] = {{"prompt_tokens", usage.prompt_tokens},
                {"completion_tokens", usage.completion_tokens}};
  j["latency_ms"] = latency_ms;
  j["attempts"] = attempts;
  return j.dump();
}

ChatExchange ChatExchange::from_json(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    raise(ErrorCode::ParseError, "transcript entry: " + std::string(e.what()));
  }
  ChatExchange e;
  for (const json& m : j.at("messages"))
    e.messages.push_back(
        {role_from_string(m.at("role").get<std::string>()), m.at("content").get<std::string>()});
  e.response = j.at("response").get<std::string>();
  e.usage.prompt_tokens = j.at("usage").at("prompt_tokens").get<int>();
  e.usage.completion_tokens = j.at("usage").at("completion_tokens").get<int>();
  e.latency_ms = j.value("latency_ms", 0.0);
  e.attempts = j.value("attempts", 1);
  return e;
}

int estimate_tokens(const std::vector<ChatMessage>& messages) {
  long chars = 0;
  for (const ChatMessage& m : messages) chars += static_cast<long>(m.content.size());
  const int content = static_cast<int>((chars + 3) / 4);
  return content + 8 * static_cast<int>(messages.size());
}

LlmConfig LlmConfig::from_env() {
  LlmConfig cfg;
  if (const char* v = std::getenv("LLM_BASE_URL")) cfg.base_url = v;
  if (const char* v = std::getenv("LLM_MODEL")) cfg.model = v;
  if (const char* v = std::getenv("LLM_API_KEY")) cfg.api_key = v;
  return cfg;
}

// --- HTTP backend --------------------------------------------------------

namespace {
std::atomic<std::uint64_t> g_http_requests{0};
}

std::uint64_t http_requests_total() { return g_http_requests.load(); }

std::string HttpChatBackend::complete(const LlmConfig& cfg,
                                      const std::vector<ChatMessage>& messages) {
  if (cfg.base_url.empty())
    raise(ErrorCode::ConfigError, "LLM base URL is not configured (LLM_BASE_URL)");

  // scheme://authority goes to the client, any path prefix is kept
  std::string origin = cfg.base_url;
  std::string prefix;
  const std::size_t scheme = origin.find("://");
  const std::size_t slash = scheme == std::string::npos ? origin.find('/')
                                                        : origin.find('/', scheme + 3);
  if (slash != std::string::npos) {
    prefix = origin.substr(slash);
    origin = origin.substr(0, slash);
  }
  while (!prefix.empty() && prefix.back() == '/') prefix.pop_back();

  json body;
  body["model"] = cfg.model;
  body["temperature"] = cfg.temperature;
  body["max_tokens"] = cfg.max_tokens;
  json msgs = json::array();
  for (const ChatMessage& m : messages)
    msgs.push_back({{"role", to_string(m.role)}, {"content", m.content}});
  body["messages"] = std::move(msgs);

  httplib::Client client(origin);
  client.set_connection_timeout(static_cast<int>(cfg.timeout_seconds), 0);
  client.set_read_timeout(static_cast<int>(cfg.timeout_seconds), 0);
  httplib::Headers headers;
  if (!cfg.api_key.empty()) headers.emplace("Authorization", "Bearer " + cfg.api_key);

  g_http_requests.fetch_add(1);
  httplib::Result res =
      client.Post(prefix + "/chat/completions", headers, body.dump(), "application/json");

  if (!res) {
    const auto err = res.error();
    if (err == httplib::Error::ConnectionTimeout || err == httplib::Error::Read ||
        err == httplib::Error::Write)
      raise(ErrorCode::Timeout, "request to " + origin + " timed out");
    throw TransportError("transport failure: " + httplib::to_string(err));
  }
  if (res->status == 429)
    raise(ErrorCode::RateLimited, "provider returned 429: " + res->body);
  if (res->status < 200 || res->status >= 300)
    raise(ErrorCode::ProviderError,
          "status " + std::to_string(res->status) + ": " + res->body);

  try {
    const json reply = json::parse(res->body);
    return reply.at("choices").at(0).at("message").at("content").get<std::string>();
  } catch (const json::exception& e) {
    raise(ErrorCode::ProviderError, "malformed completion body: " + std::string(e.what()));
  }
}

// --- scripted backend ------------------------------------------------------

std::uint64_t ScriptedBackend::key_of(const std::vector<ChatMessage>& messages) {
  std::uint64_t h = 0xcbf29ce484222325ull;
  for (const ChatMessage& m : messages) {
    h = fnv1a(to_string(m.role), h);
    h = fnv1a("\x1f", h);
    h = fnv1a(m.content, h);
    h = fnv1a("\x1e", h);
  }
  return h;
}

void ScriptedBackend::record(const std::vector<ChatMessage>& messages,
                             const std::string& response) {
  std::lock_guard<std::mutex> lock(mutex_);
  canned_[key_of(messages)] = response;
}

void ScriptedBackend::push_response(const std::string& response) {
  std::lock_guard<std::mutex> lock(mutex_);
  queue_.push_back(response);
}

std::shared_ptr<ScriptedBackend> ScriptedBackend::from_transcript(
    const std::vector<ChatExchange>& log) {
  auto backend = std::make_shared<ScriptedBackend>();
  for (const ChatExchange& e : log) backend->record(e.messages, e.response);
  return backend;
}

std::string ScriptedBackend::complete(const LlmConfig&,
                                      const std::vector<ChatMessage>& messages) {
  std::lock_guard<std::mutex> lock(mutex_);
  calls_ += 1;
  auto it = canned_.find(key_of(messages));
  if (it != canned_.end()) return it->second;
  if (!queue_.empty()) {
    std::string response = std::move(queue_.front());
    queue_.pop_front();
    return response;
  }
  raise(ErrorCode::ProviderError, "scripted backend has no response for this request");
}

// --- transcript log ----------------------------------------------------------

TranscriptLog::TranscriptLog(std::string path) : path_(std::move(path)) {}

void TranscriptLog::append(const ChatExchange& exchange) {
  std::lock_guard<std::mutex> lock(mutex_);
  entries_.push_back(exchange);
  if (!path_.empty()) {
    std::ofstream out(path_, std::ios::app);
    out << exchange.to_json() << '\n';
  }
}

std::vector<ChatExchange> TranscriptLog::load(const std::string& path) {
  std::ifstream in(path);
  if (!in) raise(ErrorCode::ParseError, "cannot open transcript '" + path + "'");
  std::vector<ChatExchange> entries;
  std::string line;
  while (std::getline(in, line))
    if (!trim(line).empty()) entries.push_back(ChatExchange::from_json(line));
  return entries;
}

// --- client ---------------------------------------------------------------

LlmClient::LlmClient(LlmConfig cfg, std::shared_ptr<LlmBackend> backend, TranscriptLog* log)
    : cfg_(std::move(cfg)), backend_(std::move(backend)), log_(log) {
  sleep_ = [](double seconds) {
    std::this_thread::sleep_for(std::chrono::duration<double>(seconds));
  };
}

void LlmClient::set_max_concurrency(int n) {
  if (n < 1) raise(ErrorCode::ConfigError, "concurrency cap must be >= 1");
  max_concurrency_ = n;
}

void LlmClient::rate_limit() {
  if (min_interval_s_ <= 0.0) return;
  double wait = 0.0;
  {
    std::lock_guard<std::mutex> lock(gate_mutex_);
    const auto now = std::chrono::steady_clock::now();
    if (last_request_.time_since_epoch().count() != 0) {
      const double since = std::chrono::duration<double>(now - last_request_).count();
      wait = min_interval_s_ - since;
    }
    last_request_ = now + std::chrono::duration_cast<std::chrono::steady_clock::duration>(
                              std::chrono::duration<double>(std::max(0.0, wait)));
  }
  if (wait > 0.0) sleep_(wait);
}

ChatExchange LlmClient::complete(const std::vector<ChatMessage>& messages,
                                 std::optional<double> temperature) {
  if (messages.empty()) raise(ErrorCode::ConfigError, "no messages to send");
  const int estimate = estimate_tokens(messages);
  if (estimate > cfg_.budget_tokens())
    raise(ErrorCode::BudgetExceeded,
          "estimated " + std::to_string(estimate) + " tokens exceeds budget " +
              std::to_string(cfg_.budget_tokens()));

  LlmConfig request_cfg = cfg_;
  if (temperature) request_cfg.temperature = *temperature;

  // crude in-flight cap; spin-waits are fine at this call volume
  while (true) {
    int current = in_flight_.load();
    if (current < max_concurrency_ &&
        in_flight_.compare_exchange_weak(current, current + 1))
      break;
    std::this_thread::yield();
  }
  struct Release {
    std::atomic<int>& counter;
    ~Release() { counter.fetch_sub(1); }
  } release{in_flight_};

  const auto t0 = std::chrono::steady_clock::now();
  int attempt = 0;
  while (true) {
    ++attempt;
    attempts_total_.fetch_add(1);
    rate_limit();
    try {
      ChatExchange exchange;
      exchange.messages = messages;
      exchange.response = backend_->complete(request_cfg, messages);
      exchange.usage.prompt_tokens = estimate;
      exchange.usage.completion_tokens =
          static_cast<int>((exchange.response.size() + 3) / 4);
      exchange.attempts = attempt;
      if (!backend_->deterministic()) {
        exchange.latency_ms = std::chrono::duration<double, std::milli>(
                                  std::chrono::steady_clock::now() - t0)
                                  .count();
      }
      if (log_) log_->append(exchange);
      return exchange;
    } catch (const Error& e) {
      const bool retryable = e.code() == ErrorCode::Timeout ||
                             e.code() == ErrorCode::RateLimited ||
                             dynamic_cast<const TransportError*>(&e) != nullptr;
      if (!retryable || attempt > cfg_.max_retries) throw;
      // exponential backoff with multiplicative jitter in [0.5, 1)
      jitter_state_ = jitter_state_ * 6364136223846793005ull + 1442695040888963407ull;
      const double jitter = 0.5 + 0.5 * ((jitter_state_ >> 11) * 0x1.0p-53);
      sleep_(std::pow(2.0, attempt - 1) * jitter);
    }
  }
}

}  // namespace specagent
