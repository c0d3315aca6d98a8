#pragma once

#include <stdexcept>
#include <string>

namespace iskd {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Tensor shapes that do not agree for an operation.
class DimensionError : public Error {
 public:
  using Error::Error;
};

/// Invalid configuration value. `key()` names the offending field
/// (dotted path such as "kd.alpha") when one is known.
class ConfigError : public Error {
 public:
  explicit ConfigError(const std::string& what, std::string key = {})
      : Error(key.empty() ? what : key + ": " + what), key_(std::move(key)) {}

  const std::string& key() const noexcept { return key_; }

 private:
  std::string key_;
};

/// Layer stack whose shapes do not chain.
class BuildError : public Error {
 public:
  using Error::Error;
};

/// NaN or Inf produced where finite values are required.
class NumericError : public Error {
 public:
  using Error::Error;
};

/// Malformed or truncated file.
class FormatError : public Error {
 public:
  using Error::Error;
};

/// API misuse, e.g. backward() on a cache from an older parameter state.
class ContractError : public Error {
 public:
  using Error::Error;
};

}  // namespace iskd
