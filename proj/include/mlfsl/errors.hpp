// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <stdexcept>
#include <string>

namespace mlfsl {

// Caller broke a precondition (shape mismatch, empty input, bad argument).
class ContractViolation : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

// NaN/Inf produced, singular system, divergence.
class NumericalError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class SingularMatrix : public NumericalError {
 public:
  using NumericalError::NumericalError;
};

// Malformed or inconsistent input data.
class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class InsufficientClasses : public DataError {
 public:
  using DataError::DataError;
};

class InsufficientShots : public DataError {
 public:
  using DataError::DataError;
};

class EmptyRestriction : public DataError {
 public:
  using DataError::DataError;
};

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline void require(bool condition, const std::string& message) {
  if (!condition) throw ContractViolation(message);
}

}  // namespace mlfsl
