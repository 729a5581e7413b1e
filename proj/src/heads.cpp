// SPDX-License-Identifier: Apache-2.0
#include "mlfsl/heads.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

#include "mlfsl/errors.hpp"
#include "mlfsl/linalg.hpp"

namespace mlfsl::heads {

HeadKind parse_head_kind(std::string_view name) {
  if (name == "proto") return HeadKind::kPrototypical;
  if (name == "relation") return HeadKind::kRelation;
  if (name == "lpn") return HeadKind::kLabelPropagation;
  throw ConfigError("unknown head kind '" + std::string(name) + "' (expected proto|relation|lpn)");
}

std::string_view head_name(HeadKind kind) {
  switch (kind) {
    case HeadKind::kPrototypical: return "proto";
    case HeadKind::kRelation: return "relation";
    case HeadKind::kLabelPropagation: return "lpn";
  }
  return "unknown";
}

Tensor prototype_weights(const Tensor& support_labels) {
  const std::size_t ns = support_labels.rows();
  const std::size_t way = support_labels.cols();
  Tensor w(way, ns);
  for (std::size_t k = 0; k < way; ++k) {
    std::size_t members = 0;
    for (std::size_t i = 0; i < ns; ++i) members += support_labels(i, k) != 0.0 ? 1 : 0;
    require(members > 0, "class " + std::to_string(k) + " has no supporting sample");
    const double inv = 1.0 / static_cast<double>(members);
    for (std::size_t i = 0; i < ns; ++i)
      if (support_labels(i, k) != 0.0) w(k, i) = inv;
  }
  return w;
}

ad::Var compute_prototypes(ad::Var support_embeddings, const Tensor& support_labels) {
  require(support_labels.rows() == support_embeddings.rows(),
          "support labels and embeddings disagree on sample count");
  ad::Tape& tape = *support_embeddings.tape();
  return ad::matmul(tape.constant(prototype_weights(support_labels)), support_embeddings);
}

ad::Var proto_scores(ad::Var prototypes, ad::Var query_embeddings) {
  return ad::sq_row_dist(query_embeddings, prototypes);
}

namespace {

void require_nonzero_rows(const Tensor& labels, std::string_view what) {
  for (std::size_t r = 0; r < labels.rows(); ++r) {
    double s = 0.0;
    for (double v : labels.row_span(r)) s += std::abs(v);
    require(s > 0.0, std::string(what) + ": label row " + std::to_string(r) + " is all zero");
  }
}

Tensor l1_rows(const Tensor& labels) {
  Tensor out = labels;
  for (std::size_t r = 0; r < out.rows(); ++r) {
    double s = 0.0;
    for (double v : out.row_span(r)) s += std::abs(v);
    require(s > 0.0, "label row " + std::to_string(r) + " is all zero");
    for (double& v : out.row_span(r)) v /= s;
  }
  return out;
}

}  // namespace

ad::Var proto_loss(ad::Var distances, const Tensor& query_labels) {
  require(distances.value().same_shape(query_labels), "proto_loss shape mismatch");
  require_nonzero_rows(query_labels, "proto_loss");
  ad::Tape& tape = *distances.tape();
  ad::Var target = tape.constant(l1_rows(query_labels));
  ad::Var probs = ad::softmax_rows(ad::neg(distances));
  return ad::sum(ad::square(ad::sub(target, probs)));
}

ad::Var relation_scores(const Mlp::Bound& relation_module, ad::Var support_embeddings,
                        const Tensor& support_labels, ad::Var query_embeddings) {
  const std::size_t way = support_labels.cols();
  const std::size_t nq = query_embeddings.rows();
  ad::Var means = compute_prototypes(support_embeddings, support_labels);
  std::vector<std::size_t> q_idx, c_idx;
  q_idx.reserve(nq * way);
  c_idx.reserve(nq * way);
  for (std::size_t q = 0; q < nq; ++q)
    for (std::size_t j = 0; j < way; ++j) {
      q_idx.push_back(q);
      c_idx.push_back(j);
    }
  const ad::Var parts[] = {ad::gather_rows(query_embeddings, q_idx), ad::gather_rows(means, c_idx)};
  ad::Var pairs = ad::concat_cols(parts);
  ad::Var logits = Mlp::forward(relation_module, pairs);
  require(logits.cols() == 1, "relation module must produce one output per pair");
  return ad::reshape(ad::sigmoid(logits), nq, way);
}

ad::Var relation_loss(ad::Var scores, const Tensor& labels, RelationLoss mode) {
  require(scores.value().same_shape(labels), "relation_loss shape mismatch");
  ad::Tape& tape = *scores.tape();
  ad::Var y = tape.constant(labels);
  if (mode == RelationLoss::kMse) return ad::sum(ad::square(ad::sub(scores, y)));

  ad::Var r = ad::clamp(scores, kBceClamp, 1.0 - kBceClamp);
  Tensor one_minus_labels = labels;
  for (double& v : one_minus_labels.data()) v = 1.0 - v;
  ad::Var pos = ad::mul(y, ad::log(r));
  ad::Var negative = ad::mul(tape.constant(std::move(one_minus_labels)),
                             ad::log(ad::add_scalar(ad::neg(r), 1.0)));
  return ad::neg(ad::sum(ad::add(pos, negative)));
}

Tensor knn_mask(const Tensor& embeddings, std::size_t k_nn) {
  const std::size_t n = embeddings.rows();
  require(n >= 2, "a propagation graph needs at least two nodes");
  require(k_nn >= 1 && k_nn < n, "k_nn must lie in [1, nodes)");
  Tensor mask(n, n);
  std::vector<std::pair<double, std::size_t>> dist;
  for (std::size_t i = 0; i < n; ++i) {
    dist.clear();
    for (std::size_t j = 0; j < n; ++j) {
      if (j == i) continue;
      double d = 0.0;
      for (std::size_t c = 0; c < embeddings.cols(); ++c) {
        const double diff = embeddings(i, c) - embeddings(j, c);
        d += diff * diff;
      }
      dist.emplace_back(d, j);
    }
    std::partial_sort(dist.begin(), dist.begin() + static_cast<std::ptrdiff_t>(k_nn), dist.end());
    for (std::size_t k = 0; k < k_nn; ++k) {
      mask(i, dist[k].second) = 1.0;
      mask(dist[k].second, i) = 1.0;
    }
  }
  return mask;
}

ad::Var build_graph(ad::Var embeddings, double sigma, std::size_t k_nn) {
  require(sigma > 0.0, "sigma must be positive");
  ad::Tape& tape = *embeddings.tape();
  Tensor mask = knn_mask(embeddings.value(), k_nn);
  ad::Var d = ad::sq_row_dist(embeddings, embeddings);
  return ad::mul(ad::exp(ad::scale(d, -sigma)), tape.constant(std::move(mask)));
}

ad::Var normalize_graph(ad::Var weights) {
  const Tensor& w = weights.value();
  require(w.rows() == w.cols(), "graph weights must be square");
  ad::Tape& tape = *weights.tape();
  const std::size_t n = w.rows();
  Tensor loops(n, n);
  bool any_isolated = false;
  for (std::size_t i = 0; i < n; ++i) {
    double s = 0.0;
    for (double v : w.row_span(i)) {
      require(v >= 0.0, "graph weights must be non-negative");
      s += v;
    }
    if (s == 0.0) {
      loops(i, i) = 1.0;
      any_isolated = true;
    }
  }
  ad::Var wl = any_isolated ? ad::add(weights, tape.constant(std::move(loops))) : weights;
  ad::Var inv_sqrt_degree = ad::pow(ad::row_sums(wl), -0.5);
  return ad::mul(wl, ad::matmul(inv_sqrt_degree, ad::transpose(inv_sqrt_degree)));
}

Tensor support_label_matrix(const Tensor& support_labels, std::size_t query_count) {
  const std::size_t ns = support_labels.rows();
  const std::size_t way = support_labels.cols();
  Tensor normalized = l1_rows(support_labels);
  Tensor phi(way, ns + query_count);
  for (std::size_t i = 0; i < ns; ++i)
    for (std::size_t k = 0; k < way; ++k) phi(k, i) = normalized(i, k);
  return phi;
}

Tensor full_label_matrix(const Tensor& support_labels, const Tensor& query_labels) {
  require(support_labels.cols() == query_labels.cols(), "label matrices disagree on way");
  const std::size_t ns = support_labels.rows();
  Tensor phi = support_label_matrix(support_labels, query_labels.rows());
  Tensor normalized = l1_rows(query_labels);
  for (std::size_t q = 0; q < query_labels.rows(); ++q)
    for (std::size_t k = 0; k < query_labels.cols(); ++k) phi(k, ns + q) = normalized(q, k);
  return phi;
}

namespace {

Tensor propagation_system(const Tensor& normalized, double alpha) {
  Tensor a = Tensor::identity(normalized.rows());
  for (std::size_t i = 0; i < a.size(); ++i) a[i] -= alpha * normalized[i];
  return a;
}

}  // namespace

ad::Var propagate(const Tensor& phi_x, ad::Var normalized, double alpha) {
  require(alpha >= 0.0 && alpha < 1.0, "alpha must lie in [0, 1)");
  require(phi_x.cols() == normalized.rows(), "label matrix and graph disagree on node count");
  ad::Tape& tape = *normalized.tape();
  ad::Var system =
      ad::sub(tape.constant(Tensor::identity(normalized.rows())), ad::scale(normalized, alpha));
  return ad::matmul(tape.constant(phi_x), ad::inverse(system));
}

Tensor propagate_solve(const Tensor& phi_x, const Tensor& normalized, double alpha) {
  require(alpha >= 0.0 && alpha < 1.0, "alpha must lie in [0, 1)");
  require(phi_x.cols() == normalized.rows(), "label matrix and graph disagree on node count");
  // F (I - aS) = Phi  <=>  (I - aS)^T F^T = Phi^T
  const Tensor system_t = propagation_system(normalized, alpha).transposed();
  return linalg::solve(system_t, phi_x.transposed()).transposed();
}

ad::Var lp_loss(ad::Var propagated, const Tensor& phi_full) {
  require(propagated.value().same_shape(phi_full), "lp_loss shape mismatch");
  ad::Tape& tape = *propagated.tape();
  return ad::sum(ad::square(ad::sub(tape.constant(phi_full), propagated)));
}

std::size_t effective_neighbors(std::size_t requested, std::size_t nodes) {
  require(nodes >= 2, "a propagation graph needs at least two nodes");
  return std::clamp<std::size_t>(requested, 1, nodes - 1);
}

HeadOutput run_head(const HeadOptions& options, const Mlp::Bound* relation_module,
                    ad::Var embeddings, std::size_t support_count, const Tensor& support_labels,
                    const Tensor& query_labels) {
  const std::size_t total = embeddings.rows();
  require(support_count > 0 && support_count < total, "need at least one support and one query");
  require(support_labels.rows() == support_count, "support label count mismatch");
  const std::size_t nq = total - support_count;
  const bool with_loss = !query_labels.empty();
  if (with_loss) require(query_labels.rows() == nq, "query label count mismatch");

  std::vector<std::size_t> s_idx(support_count), q_idx(nq);
  std::iota(s_idx.begin(), s_idx.end(), std::size_t{0});
  std::iota(q_idx.begin(), q_idx.end(), support_count);

  ad::Tape& tape = *embeddings.tape();
  HeadOutput out;
  switch (options.kind) {
    case HeadKind::kPrototypical: {
      ad::Var protos = compute_prototypes(ad::gather_rows(embeddings, s_idx), support_labels);
      ad::Var z = proto_scores(protos, ad::gather_rows(embeddings, q_idx));
      out.scores = ad::neg(z);
      if (with_loss) out.loss = proto_loss(z, query_labels);
      break;
    }
    case HeadKind::kRelation: {
      require(relation_module != nullptr, "relation head needs a relation module");
      out.scores = relation_scores(*relation_module, ad::gather_rows(embeddings, s_idx),
                                   support_labels, ad::gather_rows(embeddings, q_idx));
      if (with_loss) out.loss = relation_loss(out.scores, query_labels, options.relation_loss);
      break;
    }
    case HeadKind::kLabelPropagation: {
      const std::size_t k = effective_neighbors(options.k_nn, total);
      ad::Var s = normalize_graph(build_graph(embeddings, options.sigma, k));
      const Tensor phi_x = support_label_matrix(support_labels, nq);
      ad::Var f;
      if (s.requires_grad()) {
        f = propagate(phi_x, s, options.alpha);
      } else {
        f = tape.constant(propagate_solve(phi_x, s.value(), options.alpha));
      }
      out.scores = ad::transpose(ad::slice_cols(f, support_count, nq));
      if (with_loss) out.loss = lp_loss(f, full_label_matrix(support_labels, query_labels));
      break;
    }
  }
  out.has_loss = with_loss;
  return out;
}

}  // namespace mlfsl::heads
