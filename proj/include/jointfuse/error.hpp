#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace jointfuse {

enum class ErrorKind {
  MissingColumn,
  InvariantViolation,
  SingularDesign,
  UnsupportedOrder,
  EmptyInterval,
  NonFiniteIntegrand,
  NonPositiveTime,
  UnsupportedDesign,
  NonPositiveVariance,
  NonBinaryValue,
  DomainError,
  NotPositiveDefinite,
  NonFiniteLogPosterior,
  ChainDiverged,
  FactorizationFailure,
  ConvergenceFailure,
  DegenerateChains,
  UnknownParameter,
  ConfigError,
  DataError,
};

std::string_view to_string(ErrorKind kind);

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what)
      : std::runtime_error(std::string(to_string(kind)) + ": " + what), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

}  // namespace jointfuse
