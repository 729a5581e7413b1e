// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <functional>
#include <span>
#include <string_view>
#include <vector>

#include "mlfsl/tensor.hpp"

namespace mlfsl::ad {

enum class Op {
  kLeaf,
  kMatmul,
  kAdd,
  kSub,
  kMul,
  kScale,
  kAddScalar,
  kNeg,
  kExp,
  kLog,
  kSquare,
  kPow,
  kSum,
  kMean,
  kRowSums,
  kColSums,
  kSqRowDist,
  kSoftmax,
  kLogSoftmax,
  kSigmoid,
  kRelu,
  kConcatCols,
  kL1NormalizeRows,
  kInverse,
  kTranspose,
  kReshape,
  kClamp,
  kGatherRows,
  kSliceCols,
};

std::string_view op_name(Op op);

class Tape;

// Handle to a value recorded on a tape. Cheap to copy; valid while the tape
// lives.
class Var {
 public:
  Var() = default;

  const Tensor& value() const;
  std::size_t id() const { return id_; }
  Tape* tape() const { return tape_; }
  bool requires_grad() const;
  std::size_t rows() const { return value().rows(); }
  std::size_t cols() const { return value().cols(); }

 private:
  friend class Tape;
  Var(Tape* tape, std::size_t id) : tape_(tape), id_(id) {}

  Tape* tape_ = nullptr;
  std::size_t id_ = 0;
};

// Records primitive operations in creation order (which is a topological
// order) and replays them in reverse to accumulate gradients. Single owner;
// not shareable while recording.
class Tape {
 public:
  // Receives the gradient of the loss w.r.t. the node's output and pushes
  // contributions into the node's inputs through accumulate().
  using Backprop = std::function<void(const Tensor& out_grad, Tape& tape)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var constant(Tensor value);
  Var variable(Tensor value);

  // Appends a node. The backprop closure is kept only when some input
  // requires gradients. Throws NumericalError on non-finite output.
  Var record(Op op, Tensor value, std::vector<std::size_t> inputs, Backprop backprop);

  const Tensor& value(std::size_t id) const { return nodes_[id].value; }
  bool requires_grad(std::size_t id) const { return nodes_[id].requires_grad; }
  Op op(std::size_t id) const { return nodes_[id].op; }
  std::span<const std::size_t> inputs(std::size_t id) const { return nodes_[id].inputs; }
  std::size_t size() const { return nodes_.size(); }

  // Reverse sweep from a 1 x 1 loss. Every requires_grad leaf ends up with a
  // gradient of its own shape (zeros when the loss does not depend on it).
  void backward(Var loss);

  // Valid after backward().
  const Tensor& grad(Var v) const;

  void accumulate(std::size_t id, const Tensor& g);
  void accumulate(std::size_t id, std::span<const double> g);

 private:
  struct Node {
    Op op;
    Tensor value;
    std::vector<std::size_t> inputs;
    bool requires_grad = false;
    Backprop backprop;
  };

  std::vector<Node> nodes_;
  std::vector<Tensor> grads_;
};

// Primitives. Binary elementwise ops broadcast b over a when b is 1 x 1,
// 1 x cols(a) or rows(a) x 1.
Var matmul(Var a, Var b);
Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);
Var scale(Var a, double factor);
Var add_scalar(Var a, double offset);
Var neg(Var a);
Var exp(Var a);
Var log(Var a);
Var square(Var a);
// Elementwise power; input must be positive.
Var pow(Var a, double exponent);
Var sum(Var a);
Var mean(Var a);
// rows x 1
Var row_sums(Var a);
// 1 x cols
Var col_sums(Var a);
// [rows(a) x rows(b)] with entry (i, j) = ||a_i - b_j||^2.
Var sq_row_dist(Var a, Var b);
Var softmax_rows(Var a);
Var log_softmax_rows(Var a);
Var sigmoid(Var a);
Var relu(Var a);
Var concat_cols(std::span<const Var> parts);
// Each row divided by its L1 norm; rows must not be all zero.
Var l1_normalize_rows(Var a);
// Explicit inverse of a small square matrix (LU with partial pivoting).
Var inverse(Var a);
Var transpose(Var a);
Var reshape(Var a, std::size_t rows, std::size_t cols);
// Gradient passes only where lo <= a <= hi.
Var clamp(Var a, double lo, double hi);
Var gather_rows(Var a, std::span<const std::size_t> indices);
Var slice_cols(Var a, std::size_t begin, std::size_t count);

}  // namespace mlfsl::ad
