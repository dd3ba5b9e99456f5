#pragma once

#include <stdexcept>
#include <string>

namespace stepsearch {

enum class ErrorCode {
  // core
  ExtendPastTerminal,
  DepthExceeded,
  // scoring
  EmptyStep,
  NonFiniteLogprob,
  InvalidLogprob,
  // strategies
  NoProgress,
  // backends
  Transport,
  Protocol,
  MissingLogprobs,
  ScriptError,
  CacheCorrupt,
  // evaluation
  JudgeUnavailable,
  ParseError,
  MissingGold,
  // dataset
  TemplateError,
  InvalidRecord,
  // cli / config
  ConfigError,
  IoError,
};

const char* error_code_name(ErrorCode code);

class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message)
      : std::runtime_error(std::string(error_code_name(code)) + ": " + message), code_(code) {}

  ErrorCode code() const { return code_; }

 private:
  ErrorCode code_;
};

}  // namespace stepsearch
