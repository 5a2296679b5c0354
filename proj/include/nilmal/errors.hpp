#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace nilmal {

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ValidationError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ParseError : public std::runtime_error {
 public:
  ParseError(std::size_t line, const std::string& what)
      : std::runtime_error("line " + std::to_string(line) + ": " + what), line_(line) {}
  std::size_t line() const noexcept { return line_; }

 private:
  std::size_t line_;
};

class ShapeError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Non-finite values in a loss, gradient or moment computation.
class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// A read of data that the current phase of the experiment is not allowed to see.
class LeakageError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace nilmal
