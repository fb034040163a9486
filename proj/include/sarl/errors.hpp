#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace sarl {

// Error families map onto CLI exit codes: configuration/usage -> 1,
// data/format -> 2, numerical -> 3.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

class UsageError : public Error {
 public:
  using Error::Error;
};

class DataError : public Error {
 public:
  using Error::Error;
};

class NumericalError : public Error {
 public:
  using Error::Error;
};

class FormatError : public DataError {
 public:
  FormatError(const std::string& what, std::size_t location)
      : DataError(what), location_(location) {}
  explicit FormatError(const std::string& what) : DataError(what) {}

  // Byte offset (binary formats) or 1-based line number (text formats).
  std::size_t location() const { return location_; }

 private:
  std::size_t location_ = 0;
};

class CorruptionError : public FormatError {
 public:
  using FormatError::FormatError;
};

class MigrationError : public FormatError {
 public:
  using FormatError::FormatError;
};

}  // namespace sarl
