#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace tgp {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Shape or arity mismatch between operands.
class DimensionError : public Error {
 public:
  using Error::Error;
};

// log/sqrt of a non-positive entry and similar.
class DomainError : public Error {
 public:
  using Error::Error;
};

// A caller broke an operation's precondition.
class ContractError : public Error {
 public:
  using Error::Error;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

class NotPositiveDefiniteError : public Error {
 public:
  NotPositiveDefiniteError(std::size_t pivot, double value)
      : Error("matrix is not positive definite: pivot " + std::to_string(pivot) +
              " is " + std::to_string(value)),
        pivot_(pivot) {}
  std::size_t pivot() const { return pivot_; }

 private:
  std::size_t pivot_;
};

class SingularError : public Error {
 public:
  using Error::Error;
};

class ConvergenceError : public Error {
 public:
  ConvergenceError(const std::string& what, double residual)
      : Error(what + " (last residual " + std::to_string(residual) + ")"),
        residual_(residual) {}
  double residual() const { return residual_; }

 private:
  double residual_;
};

// Window or search region falls outside an image.
class BoundaryError : public Error {
 public:
  using Error::Error;
};

// Malformed text input. line/column are 1-based; column 0 means "whole line".
class FormatError : public Error {
 public:
  FormatError(const std::string& source, std::size_t line, std::size_t column,
              const std::string& what)
      : Error(source + ":" + std::to_string(line) +
              (column ? ":" + std::to_string(column) : std::string()) + ": " + what),
        line_(line),
        column_(column) {}
  std::size_t line() const { return line_; }
  std::size_t column() const { return column_; }

 private:
  std::size_t line_;
  std::size_t column_;
};

}  // namespace tgp
