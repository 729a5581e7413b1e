// SPDX-License-Identifier: Apache-2.0
#include "mlfsl/nlc.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "mlfsl/errors.hpp"

namespace mlfsl::nlc {

ad::Var context_vector(ad::Var support_embeddings) {
  require(support_embeddings.rows() > 0, "context vector of an empty support set");
  return ad::scale(ad::col_sums(support_embeddings),
                   1.0 / static_cast<double>(support_embeddings.rows()));
}

std::vector<std::size_t> count_net_widths(std::size_t embedding_dim, std::size_t way,
                                          std::size_t hidden) {
  return {3 * embedding_dim, hidden, 2 * way};
}

ad::Var pair_logits(const Mlp::Bound& count_net, ad::Var support_embeddings,
                    ad::Var query_embeddings, ad::Var context) {
  const std::size_t ns = support_embeddings.rows();
  const std::size_t nq = query_embeddings.rows();
  require(context.rows() == 1 && context.cols() == support_embeddings.cols(),
          "context vector has the wrong shape");
  require(query_embeddings.cols() == support_embeddings.cols(), "embedding widths differ");
  std::vector<std::size_t> s_idx, q_idx, z_idx(nq * ns, 0);
  s_idx.reserve(nq * ns);
  q_idx.reserve(nq * ns);
  for (std::size_t q = 0; q < nq; ++q)
    for (std::size_t i = 0; i < ns; ++i) {
      s_idx.push_back(i);
      q_idx.push_back(q);
    }
  const ad::Var parts[] = {ad::gather_rows(support_embeddings, s_idx),
                           ad::gather_rows(query_embeddings, q_idx),
                           ad::gather_rows(context, z_idx)};
  return Mlp::forward(count_net, ad::concat_cols(parts));
}

std::vector<std::size_t> argmax_counts(const Tensor& logits) {
  std::vector<std::size_t> out(logits.rows());
  for (std::size_t r = 0; r < logits.rows(); ++r) {
    const auto row = logits.row_span(r);
    out[r] = static_cast<std::size_t>(std::max_element(row.begin(), row.end()) - row.begin()) + 1;
  }
  return out;
}

Tensor pair_probabilities(const Tensor& logits) {
  Tensor out(logits.rows(), logits.cols());
  for (std::size_t r = 0; r < logits.rows(); ++r) {
    const auto row = logits.row_span(r);
    const double mx = *std::max_element(row.begin(), row.end());
    double z = 0.0;
    for (std::size_t c = 0; c < row.size(); ++c) z += (out(r, c) = std::exp(row[c] - mx));
    for (std::size_t c = 0; c < row.size(); ++c) out(r, c) /= z;
  }
  return out;
}

std::vector<std::size_t> combined_counts(std::span<const std::size_t> support_counts,
                                         std::span<const std::size_t> query_counts) {
  std::vector<std::size_t> out;
  out.reserve(support_counts.size() * query_counts.size());
  for (std::size_t qc : query_counts)
    for (std::size_t sc : support_counts) out.push_back(sc + qc);
  return out;
}

ad::Var count_loss(ad::Var logits, std::span<const std::size_t> targets, std::size_t way) {
  require(logits.cols() == 2 * way, "count logits must have 2 * way columns");
  require(logits.rows() == targets.size(), "one target per pair is required");
  Tensor onehot(logits.rows(), logits.cols());
  for (std::size_t r = 0; r < targets.size(); ++r) {
    const std::size_t t = targets[r];
    if (t < 2 || t > 2 * way)
      throw ContractViolation("combined count " + std::to_string(t) + " outside [2, " +
                              std::to_string(2 * way) + "]");
    onehot(r, t - 1) = 1.0;
  }
  ad::Tape& tape = *logits.tape();
  return ad::neg(ad::sum(ad::mul(ad::log_softmax_rows(logits), tape.constant(std::move(onehot)))));
}

ad::Var joint_loss(ad::Var head_loss, ad::Var count_loss, double lambda) {
  require(lambda >= 0.0, "lambda must be non-negative");
  return ad::add(head_loss, ad::scale(count_loss, lambda));
}

std::size_t CountHistogram::total() const {
  std::size_t t = 0;
  for (std::size_t b : bins) t += b;
  return t;
}

CountHistogram count_histogram(std::span<const std::size_t> predicted_counts,
                               std::span<const std::size_t> support_counts, std::size_t way) {
  require(predicted_counts.size() == support_counts.size(),
          "predicted counts and support counts are not aligned");
  CountHistogram h;
  h.bins.assign(2 * way + 1, 0);
  const auto top = static_cast<long long>(2 * way);
  for (std::size_t i = 0; i < predicted_counts.size(); ++i) {
    require(support_counts[i] >= 1, "support samples carry at least one label");
    const long long diff =
        static_cast<long long>(predicted_counts[i]) - static_cast<long long>(support_counts[i]);
    ++h.bins[static_cast<std::size_t>(std::clamp(diff, 0LL, top))];
  }
  return h;
}

Vote vote_label_count(const CountHistogram& histogram, const Tensor& pair_probs,
                      std::span<const std::size_t> support_counts, std::size_t way) {
  require(way >= 1, "way must be positive");
  require(histogram.bins.size() == 2 * way + 1, "histogram does not match way");
  require(histogram.total() > 0, "empty histogram");
  require(pair_probs.rows() == support_counts.size() && pair_probs.cols() == 2 * way,
          "pair probabilities do not match support set");

  std::size_t best = 0;
  for (std::size_t i = 1; i <= way; ++i) best = std::max(best, histogram.bins[i]);
  Vote vote;
  if (best == 0) {
    vote.count = 1;
    vote.fallback = true;
    return vote;
  }
  std::vector<std::size_t> tied;
  for (std::size_t i = 1; i <= way; ++i)
    if (histogram.bins[i] == best) tied.push_back(i);
  if (tied.size() == 1) {
    vote.count = tied.front();
    return vote;
  }
  vote.tie_broken = true;
  double best_mass = -1.0;
  for (std::size_t count : tied) {
    double mass = 0.0;
    for (std::size_t r = 0; r < support_counts.size(); ++r) {
      const std::size_t combined = count + support_counts[r];
      if (combined >= 1 && combined <= 2 * way) mass += pair_probs(r, combined - 1);
    }
    if (mass > best_mass) {
      best_mass = mass;
      vote.count = count;
    }
  }
  return vote;
}

}  // namespace mlfsl::nlc
