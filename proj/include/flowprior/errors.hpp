#pragma once

#include <stdexcept>
#include <string>

namespace flowprior {

// Base of every error the library throws.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Tensor extents disagree with what an operation needs.
class ShapeError : public Error {
 public:
  using Error::Error;
};

// Input outside the mathematical domain of an operation (log of 0, ...).
class DomainError : public Error {
 public:
  using Error::Error;
};

// Caller broke an API contract (non-scalar loss, missing latent, ...).
class ContractError : public Error {
 public:
  using Error::Error;
};

// Layer used in a state it does not support yet.
class StateError : public Error {
 public:
  using Error::Error;
};

class SingularityError : public Error {
 public:
  using Error::Error;
};

class NumericalError : public Error {
 public:
  using Error::Error;
};

class ParameterError : public Error {
 public:
  using Error::Error;
};

class ValidationError : public Error {
 public:
  using Error::Error;
};

class ParseError : public Error {
 public:
  using Error::Error;
};

}  // namespace flowprior
