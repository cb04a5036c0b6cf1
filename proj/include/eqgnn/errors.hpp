#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace eqgnn {

/// Root of every error thrown by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class InvalidArgument : public Error {
 public:
  using Error::Error;
};

// mesh
class RetryExhausted : public Error {
 public:
  using Error::Error;
};
class MeshQualityError : public Error {
 public:
  using Error::Error;
};
class NoDirichletError : public Error {
 public:
  using Error::Error;
};

class ParseError : public Error {
 public:
  ParseError(const std::string& what, std::size_t line)
      : Error("line " + std::to_string(line) + ": " + what), line_(line) {}
  std::size_t line() const noexcept { return line_; }

 private:
  std::size_t line_;
};

// fem
class SingularElementError : public Error {
 public:
  using Error::Error;
};
class SingularMatrixError : public Error {
 public:
  using Error::Error;
};
class DimensionMismatch : public Error {
 public:
  using Error::Error;
};

// dataset
class InconsistentInputs : public Error {
 public:
  using Error::Error;
};
class EmptyDataset : public Error {
 public:
  using Error::Error;
};

// autodiff
class ShapeMismatch : public Error {
 public:
  using Error::Error;
};
class NonFiniteValue : public Error {
 public:
  using Error::Error;
};

// equilibrium / training
class NotConverged : public Error {
 public:
  using Error::Error;
};
class TrainingAborted : public Error {
 public:
  using Error::Error;
};

// evaluation
class EmptySplit : public Error {
 public:
  using Error::Error;
};

}  // namespace eqgnn
