#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace deconf {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Bad arguments or configuration: wrong shapes, unknown names, infeasible knobs.
class ValidationError : public Error {
 public:
  using Error::Error;
};

class DimensionError : public ValidationError {
 public:
  using ValidationError::ValidationError;
};

/// Infeasible alpha / marginal combination.
class DomainError : public ValidationError {
 public:
  using ValidationError::ValidationError;
};

/// The data cannot support the request (empty cells, single-class input...).
class DataError : public Error {
 public:
  using Error::Error;
};

class UndefinedMetricError : public DataError {
 public:
  using DataError::DataError;
};

class EmptyRecordError : public Error {
 public:
  using Error::Error;
};

class TrainingDivergedError : public Error {
 public:
  TrainingDivergedError(std::size_t step, const std::string& what)
      : Error(what + " at step " + std::to_string(step)), step_(step) {}
  std::size_t step() const { return step_; }

 private:
  std::size_t step_;
};

}  // namespace deconf
