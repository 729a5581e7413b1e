// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "mlfsl/autodiff.hpp"
#include "mlfsl/embedding.hpp"
#include "mlfsl/tensor.hpp"

namespace mlfsl::nlc {

inline constexpr double kDefaultLambda = 0.01;

// Mean of the support embedding rows (divided by the actual support size).
ad::Var context_vector(ad::Var support_embeddings);

// Widths of the count network for a given embedding size and way:
// [3n, hidden, 2 * way].
std::vector<std::size_t> count_net_widths(std::size_t embedding_dim, std::size_t way,
                                          std::size_t hidden = 64);

// Logits for every (query, support) pair, [queries * support x 2 * way],
// row q * support + i. Column c - 1 stands for a combined count of c.
ad::Var pair_logits(const Mlp::Bound& count_net, ad::Var support_embeddings,
                    ad::Var query_embeddings, ad::Var context);

// Argmax of each logit row as a 1-based combined count; ties go to the
// lowest count.
std::vector<std::size_t> argmax_counts(const Tensor& logits);

// Row-wise softmax of the logits.
Tensor pair_probabilities(const Tensor& logits);

// Targets aligned with pair_logits rows: |labels(x_i)| + |labels(q)|.
std::vector<std::size_t> combined_counts(std::span<const std::size_t> support_counts,
                                         std::span<const std::size_t> query_counts);

// -sum over pairs of log softmax(logits)[target - 1]. Targets must lie in
// [2, 2 * way].
ad::Var count_loss(ad::Var logits, std::span<const std::size_t> targets, std::size_t way);

// L_su + lambda * L_co
ad::Var joint_loss(ad::Var head_loss, ad::Var count_loss, double lambda);

struct CountHistogram {
  std::vector<std::size_t> bins;  // index m in 0..2 * way

  std::size_t total() const;
};

// h(m) = #{i : clamp(M_i - B_i, 0, 2 * way) == m}.
CountHistogram count_histogram(std::span<const std::size_t> predicted_counts,
                               std::span<const std::size_t> support_counts, std::size_t way);

struct Vote {
  std::size_t count = 1;  // in 1..way
  bool fallback = false;  // no vote landed in 1..way
  bool tie_broken = false;
};

// Majority over h(1..way). Ties go to the count with the largest summed
// probability sum_i P_i(count + B_i), where P_i is row i of
// `pair_probs` ([support x 2 * way]); remaining ties go to the smaller count.
Vote vote_label_count(const CountHistogram& histogram, const Tensor& pair_probs,
                      std::span<const std::size_t> support_counts, std::size_t way);

}  // namespace mlfsl::nlc
