#pragma once

#include <stdexcept>
#include <string>
#include <vector>

namespace bset {

// Base of every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Incompatible tensor or layer shapes.
class ShapeError : public Error {
 public:
  using Error::Error;
};

// NaN/Inf in inputs, gradients or training loss.
class NumericError : public Error {
 public:
  using Error::Error;
};

// Malformed files: IDX, checkpoints, results, manifests.
class FormatError : public Error {
 public:
  using Error::Error;
};

// Bad arguments that are not shape problems (empty batch, label out of range...).
class ArgumentError : public Error {
 public:
  using Error::Error;
};

// Aggregated configuration problems. what() lists every problem, one per line.
class ConfigError : public Error {
 public:
  explicit ConfigError(std::vector<std::string> problems);
  const std::vector<std::string>& problems() const { return problems_; }

 private:
  std::vector<std::string> problems_;
};

}  // namespace bset
