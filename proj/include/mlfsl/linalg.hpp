// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <vector>

#include "mlfsl/tensor.hpp"

namespace mlfsl::linalg {

// Condition-number ceiling used by inverse() unless the caller passes one.
inline constexpr double kDefaultConditionBound = 1e12;
// Pivots smaller than this (relative to the matrix infinity norm) mark the
// matrix as singular.
inline constexpr double kPivotTolerance = 1e-12;

// LU factorization with partial pivoting, P A = L U, packed in one matrix.
class LuDecomposition {
 public:
  // Throws SingularMatrix when a pivot falls below tolerance.
  explicit LuDecomposition(const Tensor& a);

  std::size_t size() const { return n_; }
  double determinant() const;
  // Solves A X = B for X; B has n rows.
  Tensor solve(const Tensor& b) const;
  Tensor inverse() const;

 private:
  std::size_t n_ = 0;
  Tensor lu_;
  std::vector<std::size_t> perm_;
  int sign_ = 1;
};

// Explicit inverse; throws SingularMatrix if the 1-norm condition estimate
// exceeds condition_bound.
Tensor inverse(const Tensor& a, double condition_bound = kDefaultConditionBound);

// Solves A X = B.
Tensor solve(const Tensor& a, const Tensor& b);

double norm_1(const Tensor& a);

}  // namespace mlfsl::linalg
