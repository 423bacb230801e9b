#pragma once

#include <stdexcept>
#include <string>

namespace devprint {

// Error categories double as process exit codes and C API status values.
enum class ErrorKind : int {
  usage = 1,
  data = 2,
  internal = 3,
};

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what)
      : std::runtime_error(what), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

class UsageError : public Error {
 public:
  explicit UsageError(const std::string& what) : Error(ErrorKind::usage, what) {}
};

class DataError : public Error {
 public:
  explicit DataError(const std::string& what) : Error(ErrorKind::data, what) {}
};

// Malformed wire bytes. `layer` names the header that failed ("ipv4", "tcp", ...).
class DecodeError : public DataError {
 public:
  DecodeError(std::string layer, const std::string& what)
      : DataError(layer + ": " + what), layer_(std::move(layer)) {}

  const std::string& layer() const noexcept { return layer_; }

 private:
  std::string layer_;
};

// Header fields that cannot be put on the wire.
class EncodeError : public DataError {
 public:
  using DataError::DataError;
};

// Bad catalog, profile, rules or other configuration content.
class ConfigError : public DataError {
 public:
  using DataError::DataError;
};

// Feature vectors, models and fingerprints that disagree on slot layout.
class SchemaError : public DataError {
 public:
  using DataError::DataError;
};

// A line-oriented input file failed to parse; `line` is 1-based.
class ParseError : public DataError {
 public:
  ParseError(std::string path, std::size_t line, const std::string& what)
      : DataError(path + ":" + std::to_string(line) + ": " + what),
        path_(std::move(path)),
        line_(line) {}

  const std::string& path() const noexcept { return path_; }
  std::size_t line() const noexcept { return line_; }

 private:
  std::string path_;
  std::size_t line_;
};

}  // namespace devprint
