#pragma once

#include <atomic>
#include <chrono>
#include <cstdint>
#include <deque>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

#include "specagent/error.hpp"

namespace specagent {

enum class Role { System, User, Assistant };

const char* to_string(Role role);
Role role_from_string(const std::string& name);

struct ChatMessage {
  Role role = Role::User;
  std::string content;
};

struct Usage {
  int prompt_tokens = 0;
  int completion_tokens = 0;
};

struct ChatExchange {
  std::vector<ChatMessage> messages;
  std::string response;
  Usage usage;
  double latency_ms = 0.0;
  int attempts = 1;

  std::string to_json() const;
  static ChatExchange from_json(const std::string& text);
};

// Character heuristic used only for budget gating: ceil(chars/4) + 8 per
// message. Never a billing estimate.
int estimate_tokens(const std::vector<ChatMessage>& messages);

struct LlmConfig {
  std::string base_url;  // e.g. https://api.example.com/v1
  std::string model;
  std::string api_key;
  double temperature = 0.5;  // entity extraction overrides to 0.1
  int max_tokens = 2048;
  double timeout_seconds = 60.0;
  int max_retries = 3;
  int context_limit = 8192;    // provider context size, in tokens
  double budget_margin = 0.8;  // gate at margin * context_limit

  // reads LLM_BASE_URL, LLM_MODEL, LLM_API_KEY
  static LlmConfig from_env();
  int budget_tokens() const { return static_cast<int>(budget_margin * context_limit); }
};

// Connection-level failure (refused, reset, DNS): retryable, unlike an HTTP
// error status, which still reports as ProviderError.
class TransportError : public Error {
 public:
  explicit TransportError(const std::string& message)
      : Error(ErrorCode::ProviderError, message) {}
};

class LlmBackend {
 public:
  virtual ~LlmBackend() = default;
  virtual std::string name() const = 0;
  // Returns the provider text verbatim. Throws Error with code Timeout /
  // RateLimited / ProviderError (TransportError when retryable). Retrying is
  // the client's job.
  virtual std::string complete(const LlmConfig& cfg,
                               const std::vector<ChatMessage>& messages) = 0;
  virtual bool deterministic() const { return false; }
};

// Counts real network attempts process-wide so tests can assert that mock
// runs never touch the wire.
std::uint64_t http_requests_total();

// JSON chat-completion shape: POST {base_url}/chat/completions with
// {model, messages[{role,content}], temperature, max_tokens}. Reasoning-mode
// provider flags are never sent.
class HttpChatBackend : public LlmBackend {
 public:
  std::string name() const override { return "http"; }
  std::string complete(const LlmConfig& cfg, const std::vector<ChatMessage>& messages) override;
};

// Deterministic mock: exact-match transcript map first, then a FIFO queue.
class ScriptedBackend : public LlmBackend {
 public:
  std::string name() const override { return "scripted"; }
  bool deterministic() const override { return true; }

  void record(const std::vector<ChatMessage>& messages, const std::string& response);
  void push_response(const std::string& response);
  static std::shared_ptr<ScriptedBackend> from_transcript(const std::vector<ChatExchange>& log);

  std::string complete(const LlmConfig& cfg, const std::vector<ChatMessage>& messages) override;
  int calls() const { return calls_; }

 private:
  static std::uint64_t key_of(const std::vector<ChatMessage>& messages);
  std::map<std::uint64_t, std::string> canned_;
  std::deque<std::string> queue_;
  std::atomic<int> calls_{0};
  std::mutex mutex_;
};

// Append-only JSONL log of completed exchanges; replayable via
// ScriptedBackend::from_transcript.
class TranscriptLog {
 public:
  TranscriptLog() = default;  // in-memory only
  explicit TranscriptLog(std::string path);

  void append(const ChatExchange& exchange);
  const std::vector<ChatExchange>& entries() const { return entries_; }
  std::size_t size() const { return entries_.size(); }
  static std::vector<ChatExchange> load(const std::string& path);

 private:
  std::string path_;
  std::vector<ChatExchange> entries_;
  std::mutex mutex_;
};

// Budget gate, exponential backoff with jitter (base 1s, factor 2), retry on
// timeouts / rate limits / transport-level provider failures, transcript
// logging, and a global in-flight cap.
class LlmClient {
 public:
  LlmClient(LlmConfig cfg, std::shared_ptr<LlmBackend> backend,
            TranscriptLog* log = nullptr);

  ChatExchange complete(const std::vector<ChatMessage>& messages,
                        std::optional<double> temperature = {});

  const LlmConfig& config() const { return cfg_; }
  LlmConfig& config() { return cfg_; }
  LlmBackend& backend() { return *backend_; }
  const TranscriptLog* transcript() const { return log_; }

  // minimum spacing between provider requests; 0 disables the limiter
  void set_min_interval(double seconds) { min_interval_s_ = seconds; }

  // test hooks
  void set_sleep_hook(std::function<void(double seconds)> hook) { sleep_ = std::move(hook); }
  void set_max_concurrency(int n);
  std::uint64_t total_attempts() const { return attempts_total_; }

 private:
  void rate_limit();

  LlmConfig cfg_;
  std::shared_ptr<LlmBackend> backend_;
  TranscriptLog* log_ = nullptr;
  std::function<void(double)> sleep_;
  std::atomic<std::uint64_t> attempts_total_{0};
  std::atomic<int> in_flight_{0};
  int max_concurrency_ = 4;
  double min_interval_s_ = 0.0;
  std::chrono::steady_clock::time_point last_request_{};
  std::mutex gate_mutex_;
  std::uint64_t jitter_state_ = 0x9e3779b97f4a7c15ull;
};

}  // namespace specagent
