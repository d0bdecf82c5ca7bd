#pragma once

#include <stdexcept>
#include <string>

namespace t2c {

/// Operand shapes do not agree for the requested operation.
class DimensionError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// A numeric domain violation (log of a non-positive value, overflow to inf, NaN input).
class NumericError : public std::domain_error {
 public:
  using std::domain_error::domain_error;
};

/// A caller broke a documented precondition.
class ContractError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

/// Every position of a loss computation was masked out.
class DegenerateBatchError : public ContractError {
 public:
  using ContractError::ContractError;
};

/// File could not be opened, read or written.
class IoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Malformed persisted data (vocabulary file, checkpoint container, metrics log).
class FormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// User-supplied input that cannot be processed, e.g. an empty source line.
class InputError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Training could not continue, e.g. a batch produced a non-finite loss.
class TrainingError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace t2c
