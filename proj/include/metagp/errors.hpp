#pragma once

#include <stdexcept>
#include <string>

namespace metagp {

// Bad usage: malformed config file, CLI arguments, invalid specs. CLI exit code 1.
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Tensor/spec dimension mismatch. Message names the operation and both shapes.
class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// Numerical failure: non-finite values, Cholesky breakdown. CLI exit code 2.
class NumericalError : public std::runtime_error {
 public:
  explicit NumericalError(const std::string& what, int leading_minor = 0)
      : std::runtime_error(what), leading_minor_(leading_minor) {}

  // 1-based index of the first non-positive-definite leading minor, 0 if n/a.
  int leading_minor() const { return leading_minor_; }

 private:
  int leading_minor_;
};

// Malformed data file. Carries the 1-based line number.
class ParseError : public std::runtime_error {
 public:
  ParseError(const std::string& what, long line)
      : std::runtime_error(what + " (line " + std::to_string(line) + ")"), line_(line) {}

  long line() const { return line_; }

 private:
  long line_;
};

}  // namespace metagp
