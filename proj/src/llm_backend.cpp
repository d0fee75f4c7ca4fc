#include "couple/llm_backend.hpp"

#include <algorithm>
#include <cstdlib>
#include <fstream>
#include <thread>

#ifdef COUPLE_HTTPS_SUPPORT
#define CPPHTTPLIB_OPENSSL_SUPPORT
#endif
#include <httplib.h>
#include <nlohmann/json.hpp>

namespace couple::llm {

// ---------------------------------------------------------------------------
// BackendConfig

void BackendConfig::validate() const {
  if (max_retries < 0 || max_retries > 10) {
    throw Error(ErrorKind::Config, "max_retries must be in [0, 10]");
  }
  if (max_parallel < 1) throw Error(ErrorKind::Config, "max_parallel must be >= 1");
  if (temperature < 0.0) throw Error(ErrorKind::Config, "temperature must be >= 0");
}

nlohmann::json exchange_to_json(const ChatExchange& e) {
  return nlohmann::json{{"stage", e.stage},
                        {"system", e.system_text},
                        {"user", e.user_text},
                        {"temperature", e.temperature},
                        {"response", e.response},
                        {"latency_ms", e.latency_ms},
                        {"attempt_count", e.attempt_count},
                        {"backend_id", e.backend_id},
                        {"error", e.error}};
}

ChatExchange exchange_from_json(const nlohmann::json& doc) {
  ChatExchange e;
  e.stage = doc.value("stage", "");
  e.system_text = doc.value("system", "");
  e.user_text = doc.value("user", "");
  e.temperature = doc.value("temperature", 0.0);
  e.response = doc.value("response", "");
  e.latency_ms = doc.value("latency_ms", std::int64_t{0});
  e.attempt_count = doc.value("attempt_count", 1);
  e.backend_id = doc.value("backend_id", "");
  e.error = doc.value("error", "");
  return e;
}

// ---------------------------------------------------------------------------
// ChatBackend

void ChatBackend::Gate::acquire() {
  std::unique_lock lock(mutex_);
  cv_.wait(lock, [&] { return in_flight_ < limit_; });
  ++in_flight_;
}

void ChatBackend::Gate::release() {
  {
    std::lock_guard lock(mutex_);
    --in_flight_;
  }
  cv_.notify_one();
}

ChatBackend::ChatBackend(BackendConfig config)
    : config_(std::move(config)), gate_(config_.max_parallel) {
  config_.validate();
}

std::chrono::milliseconds ChatBackend::backoff_delay(int retry_index) const {
  const auto cap = std::chrono::milliseconds(8000);
  auto delay = config_.backoff_base;
  for (int i = 1; i < retry_index && delay < cap; ++i) delay *= 2;
  return std::min(delay, cap);
}

ChatExchange ChatBackend::complete(const std::string& system_text, const std::string& user_text,
                                   const std::string& stage) {
  if (user_text.empty() && system_text.empty()) {
    throw Error(ErrorKind::Precondition, "empty prompt");
  }
  gate_.acquire();
  struct Release {
    Gate& gate;
    ~Release() { gate.release(); }
  } release{gate_};

  ChatExchange exchange;
  exchange.stage = stage;
  exchange.system_text = system_text;
  exchange.user_text = user_text;
  exchange.temperature = config_.temperature;
  exchange.backend_id = config_.model_id;

  const auto started = std::chrono::steady_clock::now();
  int attempts = 0;
  for (;;) {
    ++attempts;
    try {
      exchange.response = attempt(system_text, user_text);
      exchange.attempt_count = attempts;
      if (measure_latency()) {
        exchange.latency_ms = std::chrono::duration_cast<std::chrono::milliseconds>(
                                  std::chrono::steady_clock::now() - started)
                                  .count();
      }
      {
        std::lock_guard lock(log_mutex_);
        log_.push_back(exchange);
      }
      return exchange;
    } catch (const Error& e) {
      if (is_retryable(e.kind()) && attempts <= config_.max_retries) {
        std::this_thread::sleep_for(backoff_delay(attempts));
        continue;
      }
      ErrorKind kind = e.kind();
      if (kind == ErrorKind::Transport) kind = ErrorKind::TransportExhausted;
      if (kind == ErrorKind::RateLimit) kind = ErrorKind::RateLimitExhausted;
      exchange.attempt_count = attempts;
      exchange.response.clear();
      exchange.error = e.what();
      {
        std::lock_guard lock(log_mutex_);
        log_.push_back(exchange);
      }
      throw CallFailed(kind,
                       std::string(e.what()) + " (after " + std::to_string(attempts) +
                           " attempt(s))",
                       exchange);
    }
  }
}

std::vector<ChatExchange> ChatBackend::call_log() const {
  std::lock_guard lock(log_mutex_);
  return log_;
}

// ---------------------------------------------------------------------------
// ScriptedBackend

ScriptedBackend::ScriptedBackend(BackendConfig config, std::vector<ScriptedRule> rules)
    : ChatBackend(std::move(config)), rules_(std::move(rules)) {}

std::string ScriptedBackend::attempt(const std::string& system_text,
                                     const std::string& user_text) {
  const std::string haystack = system_text + "\n" + user_text;
  for (const ScriptedRule& rule : rules_) {
    const bool matches = std::all_of(rule.match_all.begin(), rule.match_all.end(),
                                     [&](const std::string& needle) {
                                       return haystack.find(needle) != std::string::npos;
                                     });
    if (matches) return rule.response;
  }
  throw Error(ErrorKind::UnmatchedPrompt,
              "no scripted rule matches prompt starting with: " + haystack.substr(0, 160));
}

std::vector<ScriptedRule> ScriptedBackend::rules_from_json(const nlohmann::json& doc) {
  if (!doc.is_array()) throw Error(ErrorKind::Config, "scripted rules must be a JSON array");
  std::vector<ScriptedRule> rules;
  for (const auto& entry : doc) {
    ScriptedRule rule;
    if (entry.contains("match")) {
      rule.match_all.push_back(entry.at("match").get<std::string>());
    } else if (entry.contains("match_all")) {
      for (const auto& needle : entry.at("match_all")) {
        rule.match_all.push_back(needle.get<std::string>());
      }
    } else {
      throw Error(ErrorKind::Config, "scripted rule needs 'match' or 'match_all'");
    }
    rule.response = entry.at("response").get<std::string>();
    rules.push_back(std::move(rule));
  }
  return rules;
}

std::shared_ptr<ScriptedBackend> ScriptedBackend::from_file(const std::string& path,
                                                            BackendConfig config) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorKind::Io, "cannot open scripted rule file '" + path + "'");
  nlohmann::json doc;
  try {
    in >> doc;
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorKind::Config, "invalid JSON in '" + path + "': " + e.what());
  }
  return std::make_shared<ScriptedBackend>(std::move(config), rules_from_json(doc));
}

// ---------------------------------------------------------------------------
// HttpBackend

namespace {

struct SplitUrl {
  std::string base;  // scheme://host[:port]
  std::string path;
};

SplitUrl split_url(const std::string& endpoint) {
  const std::size_t scheme = endpoint.find("://");
  if (scheme == std::string::npos) {
    throw Error(ErrorKind::Config, "endpoint must include a scheme: " + endpoint);
  }
  const std::size_t path_start = endpoint.find('/', scheme + 3);
  if (path_start == std::string::npos) return {endpoint, "/"};
  return {endpoint.substr(0, path_start), endpoint.substr(path_start)};
}

}  // namespace

HttpBackend::HttpBackend(BackendConfig config) : ChatBackend(std::move(config)) {
  if (this->config().endpoint.empty()) {
    throw Error(ErrorKind::Config, "http backend needs an endpoint");
  }
  split_url(this->config().endpoint);  // validate early
#ifndef COUPLE_HTTPS_SUPPORT
  if (this->config().endpoint.rfind("https://", 0) == 0) {
    throw Error(ErrorKind::Config, "built without TLS support; use an http:// endpoint");
  }
#endif
}

std::string HttpBackend::attempt(const std::string& system_text, const std::string& user_text) {
  const BackendConfig& cfg = config();
  const SplitUrl url = split_url(cfg.endpoint);

  httplib::Client client(url.base);
  const auto timeout_s = std::chrono::duration_cast<std::chrono::seconds>(cfg.timeout);
  client.set_connection_timeout(timeout_s.count(), 0);
  client.set_read_timeout(timeout_s.count(), 0);
  client.set_write_timeout(timeout_s.count(), 0);

  httplib::Headers headers;
  if (!cfg.api_key_env.empty()) {
    const char* key = std::getenv(cfg.api_key_env.c_str());
    if (!key || !*key) {
      throw Error(ErrorKind::Auth, "environment variable " + cfg.api_key_env + " is not set");
    }
    headers.emplace("Authorization", std::string("Bearer ") + key);
  }

  nlohmann::json messages = nlohmann::json::array();
  if (!system_text.empty()) {
    messages.push_back({{"role", "system"}, {"content", system_text}});
  }
  messages.push_back({{"role", "user"}, {"content", user_text}});
  const nlohmann::json body{{"model", cfg.model_id},
                            {"messages", std::move(messages)},
                            {"temperature", cfg.temperature}};

  httplib::Result result = client.Post(url.path, headers, body.dump(), "application/json");
  if (!result) {
    throw Error(ErrorKind::Transport,
                "request to " + cfg.endpoint + " failed: " + httplib::to_string(result.error()));
  }
  const int status = result->status;
  if (status == 401 || status == 403) {
    throw Error(ErrorKind::Auth, "service returned status " + std::to_string(status));
  }
  if (status == 429) throw Error(ErrorKind::RateLimit, "service returned status 429");
  if (status >= 500) {
    throw Error(ErrorKind::Transport, "service returned status " + std::to_string(status));
  }
  if (status != 200) {
    throw Error(ErrorKind::MalformedReply, "unexpected status " + std::to_string(status) + ": " +
                                               result->body.substr(0, 200));
  }

  nlohmann::json reply;
  try {
    reply = nlohmann::json::parse(result->body);
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorKind::MalformedReply, std::string("reply is not JSON: ") + e.what());
  }
  try {
    const auto pointer = nlohmann::json::json_pointer(cfg.content_json_pointer);
    return reply.at(pointer).get<std::string>();
  } catch (const nlohmann::json::exception&) {
    throw Error(ErrorKind::MalformedReply,
                "reply has no text at " + cfg.content_json_pointer + ": " +
                    result->body.substr(0, 200));
  }
}

// ---------------------------------------------------------------------------
// Factory

std::shared_ptr<ChatBackend> backend_from_json(const nlohmann::json& doc,
                                               const std::string& base_dir) {
  if (!doc.is_object()) throw Error(ErrorKind::Config, "backend config must be an object");
  BackendConfig config;
  config.endpoint = doc.value("endpoint", "");
  config.model_id = doc.value("model_id", "");
  config.temperature = doc.value("temperature", config.temperature);
  config.max_retries = doc.value("max_retries", config.max_retries);
  config.max_parallel = doc.value("max_parallel", config.max_parallel);
  config.api_key_env = doc.value("api_key_env", "");
  if (doc.contains("timeout_ms")) {
    config.timeout = std::chrono::milliseconds(doc.at("timeout_ms").get<std::int64_t>());
  }
  if (doc.contains("backoff_ms")) {
    config.backoff_base = std::chrono::milliseconds(doc.at("backoff_ms").get<std::int64_t>());
  }
  config.content_json_pointer = doc.value("content_json_pointer", config.content_json_pointer);

  const std::string kind = doc.value("kind", "http");
  if (kind == "scripted") {
    if (!doc.contains("rules_file")) {
      throw Error(ErrorKind::Config, "scripted backend needs 'rules_file'");
    }
    std::string path = doc.at("rules_file").get<std::string>();
    if (!path.empty() && path.front() != '/' && !base_dir.empty()) {
      path = base_dir + "/" + path;
    }
    if (config.model_id.empty()) config.model_id = "scripted";
    return ScriptedBackend::from_file(path, std::move(config));
  }
  if (kind == "http") {
    if (config.model_id.empty()) throw Error(ErrorKind::Config, "http backend needs 'model_id'");
    return std::make_shared<HttpBackend>(std::move(config));
  }
  throw Error(ErrorKind::Config, "unknown backend kind '" + kind + "'");
}

}  // namespace couple::llm
