// SPDX-License-Identifier: Apache-2.0
#include "mlfsl/linalg.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

#include "mlfsl/errors.hpp"

namespace mlfsl::linalg {

LuDecomposition::LuDecomposition(const Tensor& a) : n_(a.rows()), lu_(a), perm_(a.rows()) {
  require(a.rows() == a.cols(), "LU needs a square matrix, got " + a.shape_string());
  std::iota(perm_.begin(), perm_.end(), std::size_t{0});

  double scale = 0.0;
  for (std::size_t r = 0; r < n_; ++r) {
    double row_sum = 0.0;
    for (double v : a.row_span(r)) row_sum += std::abs(v);
    scale = std::max(scale, row_sum);
  }
  const double tol = kPivotTolerance * std::max(1.0, scale);

  for (std::size_t k = 0; k < n_; ++k) {
    std::size_t pivot = k;
    double best = std::abs(lu_(k, k));
    for (std::size_t r = k + 1; r < n_; ++r) {
      if (std::abs(lu_(r, k)) > best) {
        best = std::abs(lu_(r, k));
        pivot = r;
      }
    }
    if (best < tol) {
      throw SingularMatrix("singular matrix: pivot " + std::to_string(best) + " at column " +
                           std::to_string(k));
    }
    if (pivot != k) {
      for (std::size_t c = 0; c < n_; ++c) std::swap(lu_(k, c), lu_(pivot, c));
      std::swap(perm_[k], perm_[pivot]);
      sign_ = -sign_;
    }
    const double inv_pivot = 1.0 / lu_(k, k);
    for (std::size_t r = k + 1; r < n_; ++r) {
      const double factor = lu_(r, k) * inv_pivot;
      lu_(r, k) = factor;
      if (factor == 0.0) continue;
      for (std::size_t c = k + 1; c < n_; ++c) lu_(r, c) -= factor * lu_(k, c);
    }
  }
}

double LuDecomposition::determinant() const {
  double det = sign_;
  for (std::size_t i = 0; i < n_; ++i) det *= lu_(i, i);
  return det;
}

Tensor LuDecomposition::solve(const Tensor& b) const {
  require(b.rows() == n_, "solve: right-hand side has " + std::to_string(b.rows()) +
                              " rows, expected " + std::to_string(n_));
  const std::size_t m = b.cols();
  Tensor x(n_, m);
  for (std::size_t r = 0; r < n_; ++r)
    for (std::size_t c = 0; c < m; ++c) x(r, c) = b(perm_[r], c);
  // Forward substitution with unit lower triangle.
  for (std::size_t r = 0; r < n_; ++r)
    for (std::size_t k = 0; k < r; ++k) {
      const double l = lu_(r, k);
      if (l == 0.0) continue;
      for (std::size_t c = 0; c < m; ++c) x(r, c) -= l * x(k, c);
    }
  for (std::size_t ri = n_; ri-- > 0;) {
    for (std::size_t k = ri + 1; k < n_; ++k) {
      const double u = lu_(ri, k);
      if (u == 0.0) continue;
      for (std::size_t c = 0; c < m; ++c) x(ri, c) -= u * x(k, c);
    }
    const double inv = 1.0 / lu_(ri, ri);
    for (std::size_t c = 0; c < m; ++c) x(ri, c) *= inv;
  }
  return x;
}

Tensor LuDecomposition::inverse() const { return solve(Tensor::identity(n_)); }

double norm_1(const Tensor& a) {
  double best = 0.0;
  for (std::size_t c = 0; c < a.cols(); ++c) {
    double s = 0.0;
    for (std::size_t r = 0; r < a.rows(); ++r) s += std::abs(a(r, c));
    best = std::max(best, s);
  }
  return best;
}

Tensor inverse(const Tensor& a, double condition_bound) {
  const LuDecomposition lu(a);
  Tensor inv = lu.inverse();
  const double cond = norm_1(a) * norm_1(inv);
  if (!std::isfinite(cond) || cond > condition_bound) {
    throw SingularMatrix("matrix is ill-conditioned: condition estimate " +
                         std::to_string(cond));
  }
  return inv;
}

Tensor solve(const Tensor& a, const Tensor& b) { return LuDecomposition(a).solve(b); }

}  // namespace mlfsl::linalg
