#pragma once

#include <stdexcept>
#include <string>

namespace couple {

enum class ErrorKind {
  // configuration / input files
  Config,
  Io,
  // domain-type invariants and operation preconditions
  Invariant,
  Precondition,
  DimensionMismatch,
  UndefinedCorrelation,
  // structured-output parsing and template rendering
  Parse,
  Template,
  // backend call outcomes
  Transport,
  RateLimit,
  Auth,
  MalformedReply,
  UnmatchedPrompt,
  TransportExhausted,
  RateLimitExhausted,
  ParseExhausted,
};

inline const char* to_string(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::Config: return "config error";
    case ErrorKind::Io: return "io error";
    case ErrorKind::Invariant: return "invariant violation";
    case ErrorKind::Precondition: return "precondition violation";
    case ErrorKind::DimensionMismatch: return "dimension-set mismatch";
    case ErrorKind::UndefinedCorrelation: return "undefined correlation";
    case ErrorKind::Parse: return "parse error";
    case ErrorKind::Template: return "template error";
    case ErrorKind::Transport: return "transport failure";
    case ErrorKind::RateLimit: return "rate limited";
    case ErrorKind::Auth: return "authentication failure";
    case ErrorKind::MalformedReply: return "malformed service reply";
    case ErrorKind::UnmatchedPrompt: return "unmatched prompt";
    case ErrorKind::TransportExhausted: return "transport retries exhausted";
    case ErrorKind::RateLimitExhausted: return "rate-limit retries exhausted";
    case ErrorKind::ParseExhausted: return "parse retries exhausted";
  }
  return "error";
}

/// Whether another attempt against the same backend may succeed.
inline bool is_retryable(ErrorKind kind) {
  return kind == ErrorKind::Transport || kind == ErrorKind::RateLimit;
}

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& message)
      : std::runtime_error(std::string(to_string(kind)) + ": " + message), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

  /// Raw text attached for diagnostics (e.g. the last unparsable reply).
  const std::string& payload() const noexcept { return payload_; }
  Error&& with_payload(std::string raw) && {
    payload_ = std::move(raw);
    return std::move(*this);
  }

 private:
  ErrorKind kind_;
  std::string payload_;
};

}  // namespace couple
