#pragma once

#include <stdexcept>
#include <string>

namespace mlc {

/// Coarse error class, used by the CLI to pick an exit code.
enum class ErrorKind {
  Config,     // bad flags, bad config values, infeasible specs
  Data,       // malformed files, invalid tensors, I/O
  Numerical,  // non-finite objectives, eigensolver failures
};

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what)
      : std::runtime_error(what), kind_(kind) {}
  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

/// Invariant violated by an input value (shape, NaN, out-of-range label).
class ValidationError : public Error {
 public:
  explicit ValidationError(const std::string& what)
      : Error(ErrorKind::Data, "validation error: " + what) {}
};

class ConfigError : public Error {
 public:
  explicit ConfigError(const std::string& what)
      : Error(ErrorKind::Config, "config error: " + what) {}
};

class IoError : public Error {
 public:
  explicit IoError(const std::string& what)
      : Error(ErrorKind::Data, "io error: " + what) {}
};

/// Bad magic, unknown version or dtype in a binary container.
class FormatError : public Error {
 public:
  explicit FormatError(const std::string& what)
      : Error(ErrorKind::Data, "format error: " + what) {}
};

/// Payload shorter than its header promises.
class LengthError : public Error {
 public:
  explicit LengthError(const std::string& what)
      : Error(ErrorKind::Data, "length error: " + what) {}
};

class ChecksumError : public Error {
 public:
  explicit ChecksumError(const std::string& what)
      : Error(ErrorKind::Data, "checksum error: " + what) {}
};

class NumericalError : public Error {
 public:
  explicit NumericalError(const std::string& what)
      : Error(ErrorKind::Numerical, "numerical error: " + what) {}
};

}  // namespace mlc
