#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace drformer {

// Operand extents do not line up. Messages name every shape involved.
class DimensionError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// A documented precondition of an operation was violated by the caller.
class ContractError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

// Input is well-shaped but numerically degenerate (e.g. a zero-norm vector).
class DegenerateInputError : public std::domain_error {
 public:
  using std::domain_error::domain_error;
};

class LookupError : public std::out_of_range {
 public:
  using std::out_of_range::out_of_range;
};

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ParseError : public std::runtime_error {
 public:
  ParseError(const std::string& what, std::size_t line)
      : std::runtime_error("line " + std::to_string(line) + ": " + what), line_(line) {}
  std::size_t line() const noexcept { return line_; }

 private:
  std::size_t line_;
};

class TrainingDivergenceError : public std::runtime_error {
 public:
  TrainingDivergenceError(const std::string& term, double value)
      : std::runtime_error("non-finite loss term '" + term + "' (" + std::to_string(value) + ")"),
        term_(term) {}
  const std::string& term() const noexcept { return term_; }

 private:
  std::string term_;
};

class CheckpointError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace drformer
