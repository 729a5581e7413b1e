// SPDX-License-Identifier: Apache-2.0
#include "mlfsl/tensor.hpp"

#include <algorithm>
#include <cmath>

#include "mlfsl/errors.hpp"
#include "mlfsl/kernels.hpp"

namespace mlfsl {

Tensor::Tensor(std::size_t rows, std::size_t cols)
    : rows_(rows), cols_(cols), data_(rows * cols, 0.0) {
  require(rows > 0 && cols > 0, "tensor dimensions must be positive");
}

Tensor::Tensor(std::size_t rows, std::size_t cols, std::vector<double> data)
    : rows_(rows), cols_(cols), data_(std::move(data)) {
  require(rows > 0 && cols > 0, "tensor dimensions must be positive");
  require(data_.size() == rows * cols,
          "tensor data length " + std::to_string(data_.size()) + " does not match shape " +
              shape_string());
}

Tensor Tensor::filled(std::size_t rows, std::size_t cols, double value) {
  return Tensor(rows, cols, std::vector<double>(rows * cols, value));
}

Tensor Tensor::identity(std::size_t n) {
  Tensor out(n, n);
  for (std::size_t i = 0; i < n; ++i) out(i, i) = 1.0;
  return out;
}

Tensor Tensor::row(std::vector<double> values) {
  const std::size_t n = values.size();
  return Tensor(1, n, std::move(values));
}

Tensor Tensor::from_rows(std::initializer_list<std::initializer_list<double>> rows) {
  require(rows.size() > 0, "from_rows needs at least one row");
  const std::size_t cols = rows.begin()->size();
  std::vector<double> data;
  data.reserve(rows.size() * cols);
  for (const auto& r : rows) {
    require(r.size() == cols, "ragged rows");
    data.insert(data.end(), r.begin(), r.end());
  }
  return Tensor(rows.size(), cols, std::move(data));
}

std::string Tensor::shape_string() const {
  return "(" + std::to_string(rows_) + "x" + std::to_string(cols_) + ")";
}

double Tensor::item() const {
  require(rows_ == 1 && cols_ == 1, "item() on non-scalar tensor " + shape_string());
  return data_[0];
}

Tensor Tensor::transposed() const {
  Tensor out(cols_, rows_);
  for (std::size_t r = 0; r < rows_; ++r)
    for (std::size_t c = 0; c < cols_; ++c) out(c, r) = (*this)(r, c);
  return out;
}

bool Tensor::all_finite() const {
  return std::all_of(data_.begin(), data_.end(), [](double v) { return std::isfinite(v); });
}

Tensor matmul(const Tensor& a, const Tensor& b) {
  require(a.cols() == b.rows(),
          "matmul shape mismatch " + a.shape_string() + " * " + b.shape_string());
  Tensor out(a.rows(), b.cols());
  kernels::active().gemm(a.rows(), b.cols(), a.cols(), a.data().data(), b.data().data(),
                         out.data().data());
  return out;
}

double max_abs_diff(const Tensor& a, const Tensor& b) {
  require(a.same_shape(b), "max_abs_diff shape mismatch");
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

}  // namespace mlfsl
