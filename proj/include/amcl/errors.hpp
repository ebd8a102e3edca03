#pragma once

#include <stdexcept>
#include <string>

namespace amcl {

/// A caller broke a documented precondition (shape, size, configuration).
class ContractViolation : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

/// A mathematical operation was applied outside its domain (log of a
/// non-positive value, division by zero, normalizing a zero vector).
class DomainError : public std::domain_error {
 public:
  using std::domain_error::domain_error;
};

/// Numerical evaluation produced a non-finite value.
class EvaluationError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Malformed file contents. `field()` names the offending header field or row.
class ParseError : public std::runtime_error {
 public:
  ParseError(std::string field, const std::string& message)
      : std::runtime_error(field + ": " + message), field_(std::move(field)) {}

  const std::string& field() const noexcept { return field_; }

 private:
  std::string field_;
};

class IoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace amcl
