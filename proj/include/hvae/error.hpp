#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>

namespace hvae {

/// Root of every exception thrown by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Operand dimensions do not agree.
class ShapeError : public Error {
 public:
  using Error::Error;
};

/// Parameter vector length does not match its Hamiltonian spec.
class ParameterShapeError : public ShapeError {
 public:
  using ShapeError::ShapeError;
};

/// Input outside the mathematical domain of an operation (NaN, Inf, ...).
class DomainError : public Error {
 public:
  using Error::Error;
};

/// Scaling-and-squaring would need more squarings than allowed.
class OverflowError : public Error {
 public:
  using Error::Error;
};

/// A documented precondition was violated (e.g. a non-symmetric metric).
class ContractError : public Error {
 public:
  using Error::Error;
};

class IndexError : public Error {
 public:
  using Error::Error;
};

/// Action label vector is not one-hot.
class LabelError : public Error {
 public:
  using Error::Error;
};

/// More sequences requested than the synthetic world can provide.
class CapacityError : public Error {
 public:
  using Error::Error;
};

/// Classifier did not reach its accuracy floor.
class TrainingFailure : public Error {
 public:
  using Error::Error;
};

/// Malformed binary file; carries the byte offset where parsing failed.
class FormatError : public Error {
 public:
  FormatError(const std::string& what, std::uint64_t offset)
      : Error(what + " (at byte " + std::to_string(offset) + ")"), offset_(offset) {}

  std::uint64_t offset() const noexcept { return offset_; }

 private:
  std::uint64_t offset_;
};

class IoError : public Error {
 public:
  using Error::Error;
};

}  // namespace hvae
