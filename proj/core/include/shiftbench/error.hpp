#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace shiftbench {

class Error : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

/// Value outside a family's support, natural parameter outside its domain,
/// or a nonpositive radius.
class DomainError : public Error {
public:
  using Error::Error;
};

/// eta + s(z; delta) left the natural-parameter domain.
class ShiftDomainError : public DomainError {
public:
  ShiftDomainError(std::string variable, int coordinate, const std::string& what)
      : DomainError(what), variable_(std::move(variable)), coordinate_(coordinate) {}
  const std::string& variable() const { return variable_; }
  int coordinate() const { return coordinate_; }

private:
  std::string variable_;
  int coordinate_;
};

/// A discrete conditioning stratum has no rows.
class CoverageError : public Error {
public:
  CoverageError(std::string variable, std::string stratum, const std::string& what)
      : Error(what), variable_(std::move(variable)), stratum_(std::move(stratum)) {}
  const std::string& variable() const { return variable_; }
  const std::string& stratum() const { return stratum_; }

private:
  std::string variable_;
  std::string stratum_;
};

class InfeasibleTargetError : public Error {
public:
  InfeasibleTargetError(double lo, double hi, const std::string& what)
      : Error(what), lo_(lo), hi_(hi) {}
  double lo() const { return lo_; }
  double hi() const { return hi_; }

private:
  double lo_;
  double hi_;
};

class ContractError : public Error {
public:
  using Error::Error;
};

class ScopeError : public Error {
public:
  using Error::Error;
};

class UnsupportedConstraintError : public Error {
public:
  using Error::Error;
};

/// Malformed configuration or data. `pointer` is a JSON pointer for config
/// documents; `line` is a 1-based line number for CSV input (0 if unknown).
class SchemaError : public Error {
public:
  SchemaError(std::string pointer, const std::string& what, std::size_t line = 0)
      : Error(what), pointer_(std::move(pointer)), line_(line) {}
  const std::string& pointer() const { return pointer_; }
  std::size_t line() const { return line_; }

private:
  std::string pointer_;
  std::size_t line_;
};

class NotFoundError : public Error {
public:
  using Error::Error;
};

class ConflictError : public Error {
public:
  using Error::Error;
};

} // namespace shiftbench
