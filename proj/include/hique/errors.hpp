#pragma once

#include <stdexcept>
#include <string>

namespace hique {

// Process exit codes used by the CLI.
enum class ExitCode : int {
  kOk = 0,
  kUsage = 2,
  kDataValidation = 3,
  kRuntime = 4,
};

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
  virtual ExitCode exit_code() const noexcept { return ExitCode::kRuntime; }
};

// Malformed input (taxonomy file, transcript, cache, checkpoint).
class ParseError : public Error {
 public:
  using Error::Error;
  ExitCode exit_code() const noexcept override { return ExitCode::kDataValidation; }
};

// Well-formed input that violates a contract (counts, shapes, ranges).
class ValidationError : public Error {
 public:
  using Error::Error;
  ExitCode exit_code() const noexcept override { return ExitCode::kDataValidation; }
};

// Missing or misconfigured adapter / option.
class ConfigError : public Error {
 public:
  using Error::Error;
  ExitCode exit_code() const noexcept override { return ExitCode::kUsage; }
};

// Failure reported by an external adapter (encoder, acoustic extractor).
class AdapterError : public Error {
 public:
  using Error::Error;
};

// Non-finite loss during optimization.
class DivergenceError : public Error {
 public:
  using Error::Error;
};

}  // namespace hique
