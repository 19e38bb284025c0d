#pragma once

#include <stdexcept>
#include <string>

namespace distill {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Operand shapes do not agree.
class DimensionError : public Error {
 public:
  using Error::Error;
};

/// A precondition of a public operation was violated by the caller.
class ContractError : public Error {
 public:
  using Error::Error;
};

/// Non-finite input reached an operation that requires finite values.
class NumericDomainError : public Error {
 public:
  using Error::Error;
};

/// Malformed input document; the message carries the offending field path.
class ParseError : public Error {
 public:
  using Error::Error;
};

/// Well-formed input that breaks a data-model invariant; the message names the rule.
class ValidationError : public Error {
 public:
  using Error::Error;
};

class IoError : public Error {
 public:
  using Error::Error;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

/// Loss became non-finite during optimization.
class TrainingError : public Error {
 public:
  TrainingError(const std::string& what, int epoch) : Error(what), epoch_(epoch) {}
  int epoch() const noexcept { return epoch_; }

 private:
  int epoch_;
};

}  // namespace distill
