#pragma once

#include <optional>
#include <stdexcept>
#include <string>

namespace sslgm {

/// Base class for every recoverable error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Invalid parameters or configuration (bad dimensions, out-of-range values,
/// unknown config keys). Maps to CLI exit code 1.
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// Invalid or unusable data. Carries the offending location when known:
/// `line` for file input, `time`/`channel` for observation matrices.
class DataError : public Error {
 public:
  explicit DataError(const std::string& what, std::optional<long> line = std::nullopt,
                     std::optional<long> time = std::nullopt,
                     std::optional<long> channel = std::nullopt)
      : Error(what), line_(line), time_(time), channel_(channel) {}

  std::optional<long> line() const { return line_; }
  std::optional<long> time() const { return time_; }
  std::optional<long> channel() const { return channel_; }

 private:
  std::optional<long> line_;
  std::optional<long> time_;
  std::optional<long> channel_;
};

/// Misuse of an API (mismatched inputs that the caller controls).
class ContractError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

}  // namespace sslgm
