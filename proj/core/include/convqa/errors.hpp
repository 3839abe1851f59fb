#pragma once

#include <stdexcept>
#include <string>

namespace convqa {

// Bad or inconsistent run configuration (flags, config file, model/checkpoint
// mismatch). CLI exit code 2.
class ConfigError : public std::runtime_error {
 public:
  explicit ConfigError(const std::string& what) : std::runtime_error(what) {}
};

// Malformed or internally inconsistent input data (corpus files, caches,
// prediction files). CLI exit code 3.
class DataError : public std::runtime_error {
 public:
  explicit DataError(const std::string& what) : std::runtime_error(what) {}
};

// Numeric failure at runtime: non-finite loss, failed gradient check.
// CLI exit code 4.
class NumericError : public std::runtime_error {
 public:
  explicit NumericError(const std::string& what) : std::runtime_error(what) {}
};

// Tensor shape mismatch; the message names both offending shapes.
class ShapeError : public std::runtime_error {
 public:
  explicit ShapeError(const std::string& what) : std::runtime_error(what) {}
};

// A documented precondition of an operation was violated by the caller
// (all-masked softmax, backward through an untracked tensor, ...).
class ContractError : public std::logic_error {
 public:
  explicit ContractError(const std::string& what) : std::logic_error(what) {}
};

}  // namespace convqa
