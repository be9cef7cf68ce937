#pragma once

#include <stdexcept>
#include <string>

namespace gridsentinel {

/// Base class of every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Malformed grid-case, config or CSV document. Carries the offending line
/// (0 when unknown) and field path.
class ParseError : public Error {
 public:
  ParseError(const std::string& what, std::size_t line, std::string field)
      : Error(what), line_(line), field_(std::move(field)) {}

  std::size_t line() const { return line_; }
  const std::string& field() const { return field_; }

 private:
  std::size_t line_;
  std::string field_;
};

/// A well-formed document that violates a domain invariant.
class ValidationError : public Error {
 public:
  using Error::Error;
};

/// Caller broke a precondition (dimension mismatch, bad argument).
class ContractError : public Error {
 public:
  using Error::Error;
};

class NumericalError : public Error {
 public:
  using Error::Error;
};

class EstimationError : public Error {
 public:
  using Error::Error;
};

class PowerFlowError : public Error {
 public:
  using Error::Error;
};

class DispatchError : public Error {
 public:
  using Error::Error;
};

class GenerationError : public Error {
 public:
  using Error::Error;
};

class AttackSpecError : public Error {
 public:
  using Error::Error;
};

class UnmonitorableBusError : public Error {
 public:
  UnmonitorableBusError(const std::string& what, int bus)
      : Error(what), bus_(bus) {}
  int bus() const { return bus_; }

 private:
  int bus_;
};

class CalibrationError : public Error {
 public:
  using Error::Error;
};

class LocalizationError : public Error {
 public:
  using Error::Error;
};

class MetricsError : public Error {
 public:
  using Error::Error;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

class IoError : public Error {
 public:
  using Error::Error;
};

class HarnessError : public Error {
 public:
  using Error::Error;
};

}  // namespace gridsentinel
