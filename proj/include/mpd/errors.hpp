#pragma once

#include <stdexcept>
#include <string>

namespace mpd {

/// Process exit codes used by the command-line tool.
enum class ExitCode : int {
  kOk = 0,
  kConfig = 2,
  kData = 3,
  kDivergence = 4,
  kTransport = 5,
};

class Error : public std::runtime_error {
 public:
  Error(ExitCode code, const std::string& what)
      : std::runtime_error(what), code_(code) {}
  ExitCode code() const noexcept { return code_; }

 private:
  ExitCode code_;
};

// Bad arguments, shape mismatches and invalid configuration.
class ConfigError : public Error {
 public:
  explicit ConfigError(const std::string& what) : Error(ExitCode::kConfig, what) {}
};

// Malformed or inconsistent data on disk or from a provider.
class DataError : public Error {
 public:
  explicit DataError(const std::string& what) : Error(ExitCode::kData, what) {}
};

class ChecksumError : public DataError {
 public:
  using DataError::DataError;
};

class NotFoundError : public DataError {
 public:
  using DataError::DataError;
};

// A provider returned vectors whose dimensions disagree with expectation.
class ContractError : public DataError {
 public:
  using DataError::DataError;
};

// Non-finite values, underflow, or a diverging training run.
class NumericError : public Error {
 public:
  explicit NumericError(const std::string& what) : Error(ExitCode::kDivergence, what) {}
};

class TransportError : public Error {
 public:
  TransportError(const std::string& what, int status = 0)
      : Error(ExitCode::kTransport, what), status_(status) {}
  /// HTTP status of the last attempt, 0 when no response arrived.
  int status() const noexcept { return status_; }

 private:
  int status_;
};

}  // namespace mpd
