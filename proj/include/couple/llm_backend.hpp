#pragma once

#include <chrono>
#include <condition_variable>
#include <cstdint>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <string>
#include <type_traits>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "couple/errors.hpp"
#include "couple/prompt_protocol.hpp"

namespace couple::llm {

struct BackendConfig {
  std::string endpoint;
  std::string model_id;
  double temperature = 0.2;
  int max_retries = 3;  // additional attempts after the first, at most 10
  std::chrono::milliseconds timeout{30000};
  int max_parallel = 4;
  std::string api_key_env;
  std::chrono::milliseconds backoff_base{250};
  /// JSON pointer to the reply text inside the service response.
  std::string content_json_pointer = "/choices/0/message/content";

  void validate() const;
};

struct ChatExchange {
  std::string stage;
  std::string system_text;
  std::string user_text;
  double temperature = 0.0;
  std::string response;
  std::int64_t latency_ms = 0;
  int attempt_count = 1;
  std::string backend_id;
  std::string error;  // set only on a failed exchange
};

nlohmann::json exchange_to_json(const ChatExchange& exchange);
ChatExchange exchange_from_json(const nlohmann::json& doc);

/// Thrown by ChatBackend::complete; carries the failed exchange so callers
/// can keep complete call logs.
class CallFailed : public Error {
 public:
  CallFailed(ErrorKind kind, const std::string& message, ChatExchange exchange)
      : Error(kind, message), exchange_(std::move(exchange)) {}
  const ChatExchange& exchange() const noexcept { return exchange_; }

 private:
  ChatExchange exchange_;
};

/// Chat-completion backend with retry, bounded concurrency, and a call log.
/// Instances are shareable across threads.
class ChatBackend {
 public:
  explicit ChatBackend(BackendConfig config);
  virtual ~ChatBackend() = default;

  /// Runs one request with up to max_retries re-attempts on retryable
  /// failures; never holds more than max_parallel requests in flight.
  ChatExchange complete(const std::string& system_text, const std::string& user_text,
                        const std::string& stage = {});

  const BackendConfig& config() const noexcept { return config_; }
  std::vector<ChatExchange> call_log() const;

  /// Backoff before retry `retry_index` (1-based); monotone non-decreasing.
  std::chrono::milliseconds backoff_delay(int retry_index) const;

 protected:
  /// One transport attempt; throws couple::Error on failure.
  virtual std::string attempt(const std::string& system_text, const std::string& user_text) = 0;
  /// Scripted/test backends report zero latency to keep records
  /// bit-deterministic.
  virtual bool measure_latency() const { return true; }

 private:
  BackendConfig config_;

  class Gate {
   public:
    explicit Gate(int limit) : limit_(limit) {}
    void acquire();
    void release();

   private:
    std::mutex mutex_;
    std::condition_variable cv_;
    int limit_;
    int in_flight_ = 0;
  };
  Gate gate_;

  mutable std::mutex log_mutex_;
  std::vector<ChatExchange> log_;
};

// ---------------------------------------------------------------------------
// Scripted backend (deterministic test double)

struct ScriptedRule {
  std::vector<std::string> match_all;  // every substring must occur in the prompt
  std::string response;
};

class ScriptedBackend final : public ChatBackend {
 public:
  ScriptedBackend(BackendConfig config, std::vector<ScriptedRule> rules);

  /// Rule file: JSON array of {"match": str | "match_all": [str...], "response": str}.
  static std::vector<ScriptedRule> rules_from_json(const nlohmann::json& doc);
  static std::shared_ptr<ScriptedBackend> from_file(const std::string& path, BackendConfig config);

 protected:
  std::string attempt(const std::string& system_text, const std::string& user_text) override;
  bool measure_latency() const override { return false; }

 private:
  std::vector<ScriptedRule> rules_;
};

// ---------------------------------------------------------------------------
// HTTP backend (chat-completions JSON schema)

class HttpBackend final : public ChatBackend {
 public:
  explicit HttpBackend(BackendConfig config);

 protected:
  std::string attempt(const std::string& system_text, const std::string& user_text) override;
};

/// Builds a backend from config JSON: {"kind": "scripted"|"http", ...}.
/// Relative rule-file paths resolve against base_dir.
std::shared_ptr<ChatBackend> backend_from_json(const nlohmann::json& doc,
                                               const std::string& base_dir);

// ---------------------------------------------------------------------------
// Parse-retrying completion

struct ParsePolicy {
  int parse_retries = 2;  // re-asks after the first reply
};

/// Renders nothing: the prompt is already final. Calls the backend, applies
/// `parse`, and re-asks with a format reminder on parse failure. Every
/// exchange (including failed ones) is appended to `sink` as it happens.
template <typename ParseFn>
auto complete_parsed_text(ChatBackend& backend, const std::string& system_text,
                          const std::string& user_text, ParseFn&& parse, const std::string& stage,
                          std::vector<ChatExchange>& sink, const ParsePolicy& policy = {})
    -> std::invoke_result_t<ParseFn, const std::string&> {
  std::string last_error;
  std::string last_raw;
  for (int ask = 0; ask <= policy.parse_retries; ++ask) {
    std::string prompt = user_text;
    if (ask > 0) {
      prompt += "\n\nReminder: your previous reply could not be used (" + last_error +
                "). Please answer again and follow the Output Format exactly.";
    }
    ChatExchange exchange;
    try {
      exchange = backend.complete(system_text, prompt, stage);
    } catch (const CallFailed& failed) {
      ChatExchange logged = failed.exchange();
      logged.stage = stage;
      sink.push_back(std::move(logged));
      throw;
    }
    exchange.stage = stage;
    sink.push_back(exchange);
    try {
      return parse(exchange.response);
    } catch (const Error& e) {
      if (e.kind() != ErrorKind::Parse) throw;
      last_error = e.what();
      last_raw = exchange.response;
    }
  }
  throw Error(ErrorKind::ParseExhausted,
              "no parsable reply after " + std::to_string(policy.parse_retries + 1) +
                  " attempts at stage '" + stage + "'; last error: " + last_error)
      .with_payload(std::move(last_raw));
}

/// Template-rendering variant of complete_parsed_text.
template <typename ParseFn>
auto complete_parsed(ChatBackend& backend, const prompts::PromptTemplate& tmpl,
                     const prompts::Bindings& bindings, ParseFn&& parse, const std::string& stage,
                     std::vector<ChatExchange>& sink, const ParsePolicy& policy = {})
    -> std::invoke_result_t<ParseFn, const std::string&> {
  return complete_parsed_text(backend, std::string{}, tmpl.render(bindings),
                              std::forward<ParseFn>(parse), stage, sink, policy);
}

}  // namespace couple::llm
