// SPDX-License-Identifier: Apache-2.0
#include "mlfsl/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "mlfsl/errors.hpp"
#include "mlfsl/kernels.hpp"
#include "mlfsl/linalg.hpp"

namespace mlfsl::ad {

std::string_view op_name(Op op) {
  switch (op) {
    case Op::kLeaf: return "leaf";
    case Op::kMatmul: return "matmul";
    case Op::kAdd: return "add";
    case Op::kSub: return "sub";
    case Op::kMul: return "mul";
    case Op::kScale: return "scale";
    case Op::kAddScalar: return "add_scalar";
    case Op::kNeg: return "neg";
    case Op::kExp: return "exp";
    case Op::kLog: return "log";
    case Op::kSquare: return "square";
    case Op::kPow: return "pow";
    case Op::kSum: return "sum";
    case Op::kMean: return "mean";
    case Op::kRowSums: return "row_sums";
    case Op::kColSums: return "col_sums";
    case Op::kSqRowDist: return "sq_row_dist";
    case Op::kSoftmax: return "softmax";
    case Op::kLogSoftmax: return "log_softmax";
    case Op::kSigmoid: return "sigmoid";
    case Op::kRelu: return "relu";
    case Op::kConcatCols: return "concat_cols";
    case Op::kL1NormalizeRows: return "l1_normalize_rows";
    case Op::kInverse: return "inverse";
    case Op::kTranspose: return "transpose";
    case Op::kReshape: return "reshape";
    case Op::kClamp: return "clamp";
    case Op::kGatherRows: return "gather_rows";
    case Op::kSliceCols: return "slice_cols";
  }
  return "unknown";
}

const Tensor& Var::value() const {
  require(tape_ != nullptr, "use of an unbound Var");
  return tape_->value(id_);
}

bool Var::requires_grad() const { return tape_ != nullptr && tape_->requires_grad(id_); }

Var Tape::constant(Tensor value) { return record(Op::kLeaf, std::move(value), {}, nullptr); }

Var Tape::variable(Tensor value) {
  Var v = record(Op::kLeaf, std::move(value), {}, nullptr);
  nodes_[v.id_].requires_grad = true;
  return v;
}

Var Tape::record(Op op, Tensor value, std::vector<std::size_t> inputs, Backprop backprop) {
  if (!value.all_finite()) {
    throw NumericalError("non-finite value produced by " + std::string(op_name(op)) +
                         " (node " + std::to_string(nodes_.size()) + ")");
  }
  bool needs = false;
  for (std::size_t in : inputs) {
    require(in < nodes_.size(), "tape input refers to a future node");
    needs = needs || nodes_[in].requires_grad;
  }
  Node node{op, std::move(value), std::move(inputs), needs, needs ? std::move(backprop) : nullptr};
  nodes_.push_back(std::move(node));
  return Var(this, nodes_.size() - 1);
}

void Tape::backward(Var loss) {
  require(loss.tape_ == this, "loss belongs to another tape");
  const Tensor& lv = value(loss.id_);
  require(lv.rows() == 1 && lv.cols() == 1,
          "backward needs a scalar loss, got " + lv.shape_string());
  grads_.assign(nodes_.size(), Tensor());
  for (std::size_t i = 0; i < nodes_.size(); ++i) {
    if (nodes_[i].requires_grad) grads_[i] = Tensor(nodes_[i].value.rows(), nodes_[i].value.cols());
  }
  if (!nodes_[loss.id_].requires_grad) return;
  grads_[loss.id_][0] = 1.0;
  for (std::size_t i = loss.id_ + 1; i-- > 0;) {
    Node& node = nodes_[i];
    if (!node.requires_grad || !node.backprop) continue;
    node.backprop(grads_[i], *this);
  }
}

const Tensor& Tape::grad(Var v) const {
  require(v.tape_ == this, "grad of a Var from another tape");
  require(v.id_ < grads_.size() && !grads_[v.id_].empty(),
          "no gradient for node " + std::to_string(v.id_) + " (backward not run or constant)");
  return grads_[v.id_];
}

void Tape::accumulate(std::size_t id, const Tensor& g) { accumulate(id, g.data()); }

void Tape::accumulate(std::size_t id, std::span<const double> g) {
  if (!nodes_[id].requires_grad) return;
  Tensor& target = grads_[id];
  require(target.size() == g.size(), "gradient shape mismatch at node " + std::to_string(id));
  kernels::active().axpy(1.0, g.data(), target.data().data(), g.size());
}

namespace {

enum class Broadcast { kSame, kScalar, kRow, kCol };

Broadcast broadcast_kind(const Tensor& a, const Tensor& b, std::string_view what) {
  if (a.same_shape(b)) return Broadcast::kSame;
  if (b.rows() == 1 && b.cols() == 1) return Broadcast::kScalar;
  if (b.rows() == 1 && b.cols() == a.cols()) return Broadcast::kRow;
  if (b.cols() == 1 && b.rows() == a.rows()) return Broadcast::kCol;
  throw ContractViolation(std::string(what) + ": cannot broadcast " + b.shape_string() +
                          " onto " + a.shape_string());
}

double bvalue(const Tensor& b, Broadcast kind, std::size_t r, std::size_t c) {
  switch (kind) {
    case Broadcast::kSame: return b(r, c);
    case Broadcast::kScalar: return b[0];
    case Broadcast::kRow: return b(0, c);
    case Broadcast::kCol: return b(r, 0);
  }
  return 0.0;
}

// Sums a full-shape gradient down to the broadcast operand's shape.
Tensor reduce_to(const Tensor& g, const Tensor& b, Broadcast kind) {
  if (kind == Broadcast::kSame) return g;
  Tensor out(b.rows(), b.cols());
  for (std::size_t r = 0; r < g.rows(); ++r)
    for (std::size_t c = 0; c < g.cols(); ++c) {
      switch (kind) {
        case Broadcast::kScalar: out[0] += g(r, c); break;
        case Broadcast::kRow: out(0, c) += g(r, c); break;
        case Broadcast::kCol: out(r, 0) += g(r, c); break;
        case Broadcast::kSame: break;
      }
    }
  return out;
}

template <class F>
Tensor map(const Tensor& a, F f) {
  Tensor out(a.rows(), a.cols());
  for (std::size_t i = 0; i < a.size(); ++i) out[i] = f(a[i]);
  return out;
}

void check_same_tape(Var a, Var b) {
  require(a.tape() != nullptr && a.tape() == b.tape(), "operands live on different tapes");
}

}  // namespace

Var matmul(Var a, Var b) {
  check_same_tape(a, b);
  Tape& t = *a.tape();
  Tensor out = mlfsl::matmul(a.value(), b.value());
  const std::size_t ia = a.id(), ib = b.id();
  return t.record(Op::kMatmul, std::move(out), {ia, ib}, [ia, ib](const Tensor& g, Tape& tp) {
    if (tp.requires_grad(ia)) tp.accumulate(ia, mlfsl::matmul(g, tp.value(ib).transposed()));
    if (tp.requires_grad(ib)) tp.accumulate(ib, mlfsl::matmul(tp.value(ia).transposed(), g));
  });
}

namespace {

Var add_like(Var a, Var b, double sign, Op op) {
  check_same_tape(a, b);
  Tape& t = *a.tape();
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  const Broadcast kind = broadcast_kind(av, bv, op_name(op));
  Tensor out(av.rows(), av.cols());
  for (std::size_t r = 0; r < av.rows(); ++r)
    for (std::size_t c = 0; c < av.cols(); ++c) out(r, c) = av(r, c) + sign * bvalue(bv, kind, r, c);
  const std::size_t ia = a.id(), ib = b.id();
  return t.record(op, std::move(out), {ia, ib}, [ia, ib, kind, sign](const Tensor& g, Tape& tp) {
    tp.accumulate(ia, g);
    if (tp.requires_grad(ib)) {
      Tensor gb = reduce_to(g, tp.value(ib), kind);
      if (sign != 1.0)
        for (std::size_t i = 0; i < gb.size(); ++i) gb[i] *= sign;
      tp.accumulate(ib, gb);
    }
  });
}

}  // namespace

Var add(Var a, Var b) { return add_like(a, b, 1.0, Op::kAdd); }
Var sub(Var a, Var b) { return add_like(a, b, -1.0, Op::kSub); }

Var mul(Var a, Var b) {
  check_same_tape(a, b);
  Tape& t = *a.tape();
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  const Broadcast kind = broadcast_kind(av, bv, "mul");
  Tensor out(av.rows(), av.cols());
  if (kind == Broadcast::kSame) {
    kernels::active().hadamard(av.data().data(), bv.data().data(), out.data().data(), av.size());
  } else {
    for (std::size_t r = 0; r < av.rows(); ++r)
      for (std::size_t c = 0; c < av.cols(); ++c) out(r, c) = av(r, c) * bvalue(bv, kind, r, c);
  }
  const std::size_t ia = a.id(), ib = b.id();
  return t.record(Op::kMul, std::move(out), {ia, ib}, [ia, ib, kind](const Tensor& g, Tape& tp) {
    const Tensor& av = tp.value(ia);
    const Tensor& bv = tp.value(ib);
    if (tp.requires_grad(ia)) {
      Tensor ga(av.rows(), av.cols());
      for (std::size_t r = 0; r < av.rows(); ++r)
        for (std::size_t c = 0; c < av.cols(); ++c) ga(r, c) = g(r, c) * bvalue(bv, kind, r, c);
      tp.accumulate(ia, ga);
    }
    if (tp.requires_grad(ib)) {
      Tensor full(av.rows(), av.cols());
      kernels::active().hadamard(g.data().data(), av.data().data(), full.data().data(), av.size());
      tp.accumulate(ib, reduce_to(full, bv, kind));
    }
  });
}

Var scale(Var a, double factor) {
  Tape& t = *a.tape();
  const std::size_t ia = a.id();
  return t.record(Op::kScale, map(a.value(), [factor](double v) { return v * factor; }), {ia},
                  [ia, factor](const Tensor& g, Tape& tp) {
                    tp.accumulate(ia, map(g, [factor](double v) { return v * factor; }));
                  });
}

Var add_scalar(Var a, double offset) {
  Tape& t = *a.tape();
  const std::size_t ia = a.id();
  return t.record(Op::kAddScalar, map(a.value(), [offset](double v) { return v + offset; }), {ia},
                  [ia](const Tensor& g, Tape& tp) { tp.accumulate(ia, g); });
}

Var neg(Var a) {
  Tape& t = *a.tape();
  const std::size_t ia = a.id();
  return t.record(Op::kNeg, map(a.value(), [](double v) { return -v; }), {ia},
                  [ia](const Tensor& g, Tape& tp) {
                    tp.accumulate(ia, map(g, [](double v) { return -v; }));
                  });
}

Var exp(Var a) {
  Tape& t = *a.tape();
  const std::size_t ia = a.id();
  Tensor y = map(a.value(), [](double v) { return std::exp(v); });
  return t.record(Op::kExp, y, {ia}, [ia, y](const Tensor& g, Tape& tp) {
    Tensor ga(y.rows(), y.cols());
    kernels::active().hadamard(g.data().data(), y.data().data(), ga.data().data(), y.size());
    tp.accumulate(ia, ga);
  });
}

Var log(Var a) {
  Tape& t = *a.tape();
  const std::size_t ia = a.id();
  return t.record(Op::kLog, map(a.value(), [](double v) { return std::log(v); }), {ia},
                  [ia](const Tensor& g, Tape& tp) {
                    const Tensor& x = tp.value(ia);
                    Tensor ga(x.rows(), x.cols());
                    for (std::size_t i = 0; i < x.size(); ++i) ga[i] = g[i] / x[i];
                    tp.accumulate(ia, ga);
                  });
}

Var square(Var a) {
  Tape& t = *a.tape();
  const std::size_t ia = a.id();
  return t.record(Op::kSquare, map(a.value(), [](double v) { return v * v; }), {ia},
                  [ia](const Tensor& g, Tape& tp) {
                    const Tensor& x = tp.value(ia);
                    Tensor ga(x.rows(), x.cols());
                    for (std::size_t i = 0; i < x.size(); ++i) ga[i] = 2.0 * x[i] * g[i];
                    tp.accumulate(ia, ga);
                  });
}

Var pow(Var a, double exponent) {
  Tape& t = *a.tape();
  for (double v : a.value().data()) require(v > 0.0, "pow needs a positive base");
  const std::size_t ia = a.id();
  return t.record(Op::kPow, map(a.value(), [exponent](double v) { return std::pow(v, exponent); }),
                  {ia}, [ia, exponent](const Tensor& g, Tape& tp) {
                    const Tensor& x = tp.value(ia);
                    Tensor ga(x.rows(), x.cols());
                    for (std::size_t i = 0; i < x.size(); ++i)
                      ga[i] = g[i] * exponent * std::pow(x[i], exponent - 1.0);
                    tp.accumulate(ia, ga);
                  });
}

Var sum(Var a) {
  Tape& t = *a.tape();
  const Tensor& av = a.value();
  const double s = kernels::active().sum(av.data().data(), av.size());
  const std::size_t ia = a.id();
  return t.record(Op::kSum, Tensor::scalar(s), {ia}, [ia](const Tensor& g, Tape& tp) {
    const Tensor& x = tp.value(ia);
    tp.accumulate(ia, Tensor::filled(x.rows(), x.cols(), g[0]));
  });
}

Var mean(Var a) {
  Tape& t = *a.tape();
  const Tensor& av = a.value();
  const double n = static_cast<double>(av.size());
  const double s = kernels::active().sum(av.data().data(), av.size()) / n;
  const std::size_t ia = a.id();
  return t.record(Op::kMean, Tensor::scalar(s), {ia}, [ia, n](const Tensor& g, Tape& tp) {
    const Tensor& x = tp.value(ia);
    tp.accumulate(ia, Tensor::filled(x.rows(), x.cols(), g[0] / n));
  });
}

Var row_sums(Var a) {
  Tape& t = *a.tape();
  const Tensor& av = a.value();
  Tensor out(av.rows(), 1);
  for (std::size_t r = 0; r < av.rows(); ++r)
    out(r, 0) = kernels::active().sum(av.row_span(r).data(), av.cols());
  const std::size_t ia = a.id();
  return t.record(Op::kRowSums, std::move(out), {ia}, [ia](const Tensor& g, Tape& tp) {
    const Tensor& x = tp.value(ia);
    Tensor ga(x.rows(), x.cols());
    for (std::size_t r = 0; r < x.rows(); ++r)
      for (std::size_t c = 0; c < x.cols(); ++c) ga(r, c) = g(r, 0);
    tp.accumulate(ia, ga);
  });
}

Var col_sums(Var a) {
  Tape& t = *a.tape();
  const Tensor& av = a.value();
  Tensor out(1, av.cols());
  for (std::size_t r = 0; r < av.rows(); ++r)
    kernels::active().axpy(1.0, av.row_span(r).data(), out.data().data(), av.cols());
  const std::size_t ia = a.id();
  return t.record(Op::kColSums, std::move(out), {ia}, [ia](const Tensor& g, Tape& tp) {
    const Tensor& x = tp.value(ia);
    Tensor ga(x.rows(), x.cols());
    for (std::size_t r = 0; r < x.rows(); ++r)
      for (std::size_t c = 0; c < x.cols(); ++c) ga(r, c) = g(0, c);
    tp.accumulate(ia, ga);
  });
}

Var sq_row_dist(Var a, Var b) {
  check_same_tape(a, b);
  Tape& t = *a.tape();
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  require(av.cols() == bv.cols(),
          "sq_row_dist dimension mismatch " + av.shape_string() + " vs " + bv.shape_string());
  const auto& k = kernels::active();
  Tensor out(av.rows(), bv.rows());
  for (std::size_t i = 0; i < av.rows(); ++i)
    for (std::size_t j = 0; j < bv.rows(); ++j)
      out(i, j) = k.sq_dist(av.row_span(i).data(), bv.row_span(j).data(), av.cols());
  const std::size_t ia = a.id(), ib = b.id();
  return t.record(Op::kSqRowDist, std::move(out), {ia, ib}, [ia, ib](const Tensor& g, Tape& tp) {
    const Tensor& av = tp.value(ia);
    const Tensor& bv = tp.value(ib);
    const auto& k = kernels::active();
    const std::size_t d = av.cols();
    Tensor ga(av.rows(), d);
    Tensor gb(bv.rows(), d);
    std::vector<double> diff(d);
    for (std::size_t i = 0; i < av.rows(); ++i)
      for (std::size_t j = 0; j < bv.rows(); ++j) {
        const double gij = g(i, j);
        if (gij == 0.0) continue;
        for (std::size_t c = 0; c < d; ++c) diff[c] = av(i, c) - bv(j, c);
        k.axpy(2.0 * gij, diff.data(), ga.row_span(i).data(), d);
        k.axpy(-2.0 * gij, diff.data(), gb.row_span(j).data(), d);
      }
    tp.accumulate(ia, ga);
    tp.accumulate(ib, gb);
  });
}

namespace {

Tensor softmax_values(const Tensor& x) {
  Tensor out(x.rows(), x.cols());
  for (std::size_t r = 0; r < x.rows(); ++r) {
    const auto row = x.row_span(r);
    const double mx = *std::max_element(row.begin(), row.end());
    double z = 0.0;
    for (std::size_t c = 0; c < x.cols(); ++c) {
      out(r, c) = std::exp(row[c] - mx);
      z += out(r, c);
    }
    for (std::size_t c = 0; c < x.cols(); ++c) out(r, c) /= z;
  }
  return out;
}

}  // namespace

Var softmax_rows(Var a) {
  Tape& t = *a.tape();
  const std::size_t ia = a.id();
  Tensor y = softmax_values(a.value());
  return t.record(Op::kSoftmax, y, {ia}, [ia, y](const Tensor& g, Tape& tp) {
    Tensor ga(y.rows(), y.cols());
    for (std::size_t r = 0; r < y.rows(); ++r) {
      double dotp = 0.0;
      for (std::size_t c = 0; c < y.cols(); ++c) dotp += g(r, c) * y(r, c);
      for (std::size_t c = 0; c < y.cols(); ++c) ga(r, c) = y(r, c) * (g(r, c) - dotp);
    }
    tp.accumulate(ia, ga);
  });
}

Var log_softmax_rows(Var a) {
  Tape& t = *a.tape();
  const Tensor& x = a.value();
  Tensor out(x.rows(), x.cols());
  for (std::size_t r = 0; r < x.rows(); ++r) {
    const auto row = x.row_span(r);
    const double mx = *std::max_element(row.begin(), row.end());
    double z = 0.0;
    for (double v : row) z += std::exp(v - mx);
    const double lse = mx + std::log(z);
    for (std::size_t c = 0; c < x.cols(); ++c) out(r, c) = row[c] - lse;
  }
  const std::size_t ia = a.id();
  Tensor probs = map(out, [](double v) { return std::exp(v); });
  return t.record(Op::kLogSoftmax, std::move(out), {ia},
                  [ia, probs = std::move(probs)](const Tensor& g, Tape& tp) {
                    Tensor ga(probs.rows(), probs.cols());
                    for (std::size_t r = 0; r < probs.rows(); ++r) {
                      double gs = 0.0;
                      for (std::size_t c = 0; c < probs.cols(); ++c) gs += g(r, c);
                      for (std::size_t c = 0; c < probs.cols(); ++c)
                        ga(r, c) = g(r, c) - probs(r, c) * gs;
                    }
                    tp.accumulate(ia, ga);
                  });
}

Var sigmoid(Var a) {
  Tape& t = *a.tape();
  const std::size_t ia = a.id();
  Tensor y = map(a.value(), [](double v) {
    if (v >= 0.0) return 1.0 / (1.0 + std::exp(-v));
    const double e = std::exp(v);
    return e / (1.0 + e);
  });
  return t.record(Op::kSigmoid, y, {ia}, [ia, y](const Tensor& g, Tape& tp) {
    Tensor ga(y.rows(), y.cols());
    for (std::size_t i = 0; i < y.size(); ++i) ga[i] = g[i] * y[i] * (1.0 - y[i]);
    tp.accumulate(ia, ga);
  });
}

Var relu(Var a) {
  Tape& t = *a.tape();
  const std::size_t ia = a.id();
  return t.record(Op::kRelu, map(a.value(), [](double v) { return v > 0.0 ? v : 0.0; }), {ia},
                  [ia](const Tensor& g, Tape& tp) {
                    const Tensor& x = tp.value(ia);
                    Tensor ga(x.rows(), x.cols());
                    for (std::size_t i = 0; i < x.size(); ++i) ga[i] = x[i] > 0.0 ? g[i] : 0.0;
                    tp.accumulate(ia, ga);
                  });
}

Var concat_cols(std::span<const Var> parts) {
  require(!parts.empty(), "concat_cols needs at least one input");
  Tape& t = *parts.front().tape();
  const std::size_t rows = parts.front().rows();
  std::size_t cols = 0;
  std::vector<std::size_t> ids;
  std::vector<std::size_t> widths;
  for (const Var& p : parts) {
    require(p.tape() == &t, "concat_cols operands live on different tapes");
    require(p.rows() == rows, "concat_cols row mismatch");
    ids.push_back(p.id());
    widths.push_back(p.cols());
    cols += p.cols();
  }
  Tensor out(rows, cols);
  std::size_t offset = 0;
  for (const Var& p : parts) {
    const Tensor& v = p.value();
    for (std::size_t r = 0; r < rows; ++r)
      std::copy(v.row_span(r).begin(), v.row_span(r).end(), out.row_span(r).begin() + offset);
    offset += v.cols();
  }
  std::vector<std::size_t> inputs = ids;
  return t.record(Op::kConcatCols, std::move(out), std::move(inputs),
                  [ids, widths](const Tensor& g, Tape& tp) {
                    std::size_t off = 0;
                    for (std::size_t k = 0; k < ids.size(); ++k) {
                      if (tp.requires_grad(ids[k])) {
                        Tensor gk(g.rows(), widths[k]);
                        for (std::size_t r = 0; r < g.rows(); ++r)
                          for (std::size_t c = 0; c < widths[k]; ++c) gk(r, c) = g(r, off + c);
                        tp.accumulate(ids[k], gk);
                      }
                      off += widths[k];
                    }
                  });
}

Var l1_normalize_rows(Var a) {
  Tape& t = *a.tape();
  const Tensor& x = a.value();
  Tensor out(x.rows(), x.cols());
  for (std::size_t r = 0; r < x.rows(); ++r) {
    double s = 0.0;
    for (double v : x.row_span(r)) s += std::abs(v);
    require(s > 0.0, "l1_normalize_rows: row " + std::to_string(r) + " is all zero");
    for (std::size_t c = 0; c < x.cols(); ++c) out(r, c) = x(r, c) / s;
  }
  const std::size_t ia = a.id();
  return t.record(Op::kL1NormalizeRows, std::move(out), {ia}, [ia](const Tensor& g, Tape& tp) {
    const Tensor& x = tp.value(ia);
    Tensor ga(x.rows(), x.cols());
    for (std::size_t r = 0; r < x.rows(); ++r) {
      double s = 0.0, gx = 0.0;
      for (std::size_t c = 0; c < x.cols(); ++c) {
        s += std::abs(x(r, c));
        gx += g(r, c) * x(r, c);
      }
      for (std::size_t c = 0; c < x.cols(); ++c) {
        const double sign = x(r, c) > 0.0 ? 1.0 : (x(r, c) < 0.0 ? -1.0 : 0.0);
        ga(r, c) = g(r, c) / s - sign * gx / (s * s);
      }
    }
    tp.accumulate(ia, ga);
  });
}

Var inverse(Var a) {
  Tape& t = *a.tape();
  Tensor y = linalg::inverse(a.value());
  const std::size_t ia = a.id();
  return t.record(Op::kInverse, y, {ia}, [ia, y](const Tensor& g, Tape& tp) {
    // d(A^-1) = -A^-1 dA A^-1  =>  grad_A = -Y^T G Y^T
    const Tensor yt = y.transposed();
    Tensor ga = mlfsl::matmul(mlfsl::matmul(yt, g), yt);
    for (std::size_t i = 0; i < ga.size(); ++i) ga[i] = -ga[i];
    tp.accumulate(ia, ga);
  });
}

Var transpose(Var a) {
  Tape& t = *a.tape();
  const std::size_t ia = a.id();
  return t.record(Op::kTranspose, a.value().transposed(), {ia},
                  [ia](const Tensor& g, Tape& tp) { tp.accumulate(ia, g.transposed()); });
}

Var reshape(Var a, std::size_t rows, std::size_t cols) {
  Tape& t = *a.tape();
  require(rows * cols == a.value().size(), "reshape changes element count");
  const std::size_t ia = a.id();
  return t.record(Op::kReshape, Tensor(rows, cols, a.value().values()), {ia},
                  [ia](const Tensor& g, Tape& tp) { tp.accumulate(ia, g.data()); });
}

Var clamp(Var a, double lo, double hi) {
  require(lo <= hi, "clamp bounds out of order");
  Tape& t = *a.tape();
  const std::size_t ia = a.id();
  return t.record(Op::kClamp, map(a.value(), [lo, hi](double v) { return std::clamp(v, lo, hi); }),
                  {ia}, [ia, lo, hi](const Tensor& g, Tape& tp) {
                    const Tensor& x = tp.value(ia);
                    Tensor ga(x.rows(), x.cols());
                    for (std::size_t i = 0; i < x.size(); ++i)
                      ga[i] = (x[i] >= lo && x[i] <= hi) ? g[i] : 0.0;
                    tp.accumulate(ia, ga);
                  });
}

Var gather_rows(Var a, std::span<const std::size_t> indices) {
  require(!indices.empty(), "gather_rows needs at least one index");
  Tape& t = *a.tape();
  const Tensor& x = a.value();
  Tensor out(indices.size(), x.cols());
  for (std::size_t r = 0; r < indices.size(); ++r) {
    require(indices[r] < x.rows(), "gather_rows index out of range");
    std::copy(x.row_span(indices[r]).begin(), x.row_span(indices[r]).end(),
              out.row_span(r).begin());
  }
  const std::size_t ia = a.id();
  std::vector<std::size_t> idx(indices.begin(), indices.end());
  return t.record(Op::kGatherRows, std::move(out), {ia},
                  [ia, idx = std::move(idx)](const Tensor& g, Tape& tp) {
                    const Tensor& x = tp.value(ia);
                    Tensor ga(x.rows(), x.cols());
                    for (std::size_t r = 0; r < idx.size(); ++r)
                      kernels::active().axpy(1.0, g.row_span(r).data(),
                                             ga.row_span(idx[r]).data(), x.cols());
                    tp.accumulate(ia, ga);
                  });
}

Var slice_cols(Var a, std::size_t begin, std::size_t count) {
  const Tensor& x = a.value();
  require(count > 0 && begin + count <= x.cols(), "slice_cols range out of bounds");
  Tape& t = *a.tape();
  Tensor out(x.rows(), count);
  for (std::size_t r = 0; r < x.rows(); ++r)
    for (std::size_t c = 0; c < count; ++c) out(r, c) = x(r, begin + c);
  const std::size_t ia = a.id();
  return t.record(Op::kSliceCols, std::move(out), {ia},
                  [ia, begin, count](const Tensor& g, Tape& tp) {
                    const Tensor& x = tp.value(ia);
                    Tensor ga(x.rows(), x.cols());
                    for (std::size_t r = 0; r < x.rows(); ++r)
                      for (std::size_t c = 0; c < count; ++c) ga(r, begin + c) = g(r, c);
                    tp.accumulate(ia, ga);
                  });
}

}  // namespace mlfsl::ad
