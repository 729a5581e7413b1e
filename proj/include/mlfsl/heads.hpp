// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <string_view>
#include <vector>

#include "mlfsl/autodiff.hpp"
#include "mlfsl/embedding.hpp"
#include "mlfsl/tensor.hpp"

namespace mlfsl::heads {

enum class HeadKind { kPrototypical, kRelation, kLabelPropagation };

// "proto" | "relation" | "lpn"; ConfigError otherwise.
HeadKind parse_head_kind(std::string_view name);
std::string_view head_name(HeadKind kind);

// ---- prototypical -------------------------------------------------------

// [way x support] averaging weights: row k holds 1/|C_k| at every support
// sample carrying class k. A multi-label sample feeds several rows.
Tensor prototype_weights(const Tensor& support_labels);

// [way x n] class means of the support embeddings.
ad::Var compute_prototypes(ad::Var support_embeddings, const Tensor& support_labels);

// [queries x way] squared Euclidean distances to each prototype.
ad::Var proto_scores(ad::Var prototypes, ad::Var query_embeddings);

// Sum over queries of sum_j (y_j / |y|_1 - softmax(-z)_j)^2.
ad::Var proto_loss(ad::Var distances, const Tensor& query_labels);

// ---- relation -----------------------------------------------------------

// [queries x way] scores in (0, 1): the relation module applied to
// [query embedding | class mean] followed by a sigmoid.
ad::Var relation_scores(const Mlp::Bound& relation_module, ad::Var support_embeddings,
                        const Tensor& support_labels, ad::Var query_embeddings);

enum class RelationLoss { kMse, kBce };

// kMse: sum (r - y)^2.  kBce: -sum [y log r + (1 - y) log(1 - r)] with r
// clamped to [1e-7, 1 - 1e-7].
ad::Var relation_loss(ad::Var scores, const Tensor& labels, RelationLoss mode);

inline constexpr double kBceClamp = 1e-7;

// ---- label propagation --------------------------------------------------

inline constexpr double kDefaultAlpha = 0.99;
inline constexpr double kDefaultSigma = 1.0;
inline constexpr std::size_t kDefaultNeighbors = 10;

// Binary [nodes x nodes] kNN mask (k nearest by squared distance, ties to the
// lower index), symmetrized by elementwise max, zero diagonal.
Tensor knn_mask(const Tensor& embeddings, std::size_t k_nn);

// W with w_ij = exp(-sigma ||e_i - e_j||^2) on the symmetrized kNN mask.
ad::Var build_graph(ad::Var embeddings, double sigma, std::size_t k_nn);

// S = D^{-1/2} W D^{-1/2}; zero-degree nodes get a unit self-loop first.
ad::Var normalize_graph(ad::Var weights);

// Phi_X: [way x (support + queries)], support columns are l1-normalized
// labels, query columns are zero.
Tensor support_label_matrix(const Tensor& support_labels, std::size_t query_count);
// Same layout with the normalized ground-truth labels in the query columns.
Tensor full_label_matrix(const Tensor& support_labels, const Tensor& query_labels);

// F* = Phi_X (I - alpha S)^{-1} with the inverse recorded on the tape.
ad::Var propagate(const Tensor& phi_x, ad::Var normalized, double alpha);
// Same quantity through an LU solve, for inference.
Tensor propagate_solve(const Tensor& phi_x, const Tensor& normalized, double alpha);

// ||Phi - F*||_F^2
ad::Var lp_loss(ad::Var propagated, const Tensor& phi_full);

// ---- uniform interface --------------------------------------------------

struct HeadOptions {
  HeadKind kind = HeadKind::kPrototypical;
  RelationLoss relation_loss = RelationLoss::kBce;
  double alpha = kDefaultAlpha;
  double sigma = kDefaultSigma;
  std::size_t k_nn = kDefaultNeighbors;
};

// k_nn clipped to nodes - 1.
std::size_t effective_neighbors(std::size_t requested, std::size_t nodes);

struct HeadOutput {
  ad::Var scores;  // [queries x way], higher means more likely
  ad::Var loss;    // unset when no query labels were given
  bool has_loss = false;
};

// `embeddings` holds support rows first, then query rows. `relation_module`
// is only read by the relation head. Pass an empty `query_labels` tensor to
// skip the loss.
HeadOutput run_head(const HeadOptions& options, const Mlp::Bound* relation_module,
                    ad::Var embeddings, std::size_t support_count, const Tensor& support_labels,
                    const Tensor& query_labels);

}  // namespace mlfsl::heads
