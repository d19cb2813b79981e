#pragma once

#include <stdexcept>
#include <string>

namespace kaer {

/// Base of every error raised by the library. The CLI maps subclasses of
/// DataError to exit code 2 and NumericalError to exit code 3.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class DataError : public Error {
 public:
  using Error::Error;
};

class FormatError : public DataError {
 public:
  using DataError::DataError;
};

class DuplicateIdError : public DataError {
 public:
  using DataError::DataError;
};

class DanglingReferenceError : public DataError {
 public:
  using DataError::DataError;
};

class DomainError : public DataError {
 public:
  using DataError::DataError;
};

class OverlapError : public DataError {
 public:
  using DataError::DataError;
};

class AnnotationMismatchError : public DataError {
 public:
  using DataError::DataError;
};

class SequenceOverflowError : public DataError {
 public:
  using DataError::DataError;
};

class IncompatibleArtifactsError : public DataError {
 public:
  using DataError::DataError;
};

// Two correctness vectors with no disagreement; the t statistic is undefined.
class DegenerateError : public DataError {
 public:
  using DataError::DataError;
};

class NumericalError : public Error {
 public:
  using Error::Error;
};

}  // namespace kaer
