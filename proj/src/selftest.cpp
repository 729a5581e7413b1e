// SPDX-License-Identifier: Apache-2.0
#include "mlfsl/selftest.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <iomanip>
#include <ostream>
#include <random>
#include <sstream>

#include "mlfsl/embedding.hpp"
#include "mlfsl/errors.hpp"
#include "mlfsl/evaluation.hpp"
#include "mlfsl/heads.hpp"
#include "mlfsl/kernels.hpp"
#include "mlfsl/nlc.hpp"
#include "mlfsl/rng.hpp"

namespace mlfsl::selftest {
namespace {

constexpr std::size_t kWay = 3;
constexpr std::size_t kSupport = 5;
constexpr std::size_t kQuery = 2;
constexpr std::size_t kFeatureDim = 4;
constexpr std::size_t kEmbeddingDim = 3;

struct ToyEpisode {
  Tensor features;        // support rows then query rows
  Tensor support_labels;  // [kSupport x kWay]
  Tensor query_labels;    // [kQuery x kWay]
};

ToyEpisode random_episode(Rng& rng) {
  std::normal_distribution<double> normal(0.0, 1.0);
  std::bernoulli_distribution extra(0.3);
  std::uniform_int_distribution<std::size_t> pick(0, kWay - 1);
  ToyEpisode ep{Tensor(kSupport + kQuery, kFeatureDim), Tensor(kSupport, kWay),
                Tensor(kQuery, kWay)};
  for (double& v : ep.features.data()) v = normal(rng);
  for (std::size_t i = 0; i < kSupport; ++i) {
    ep.support_labels(i, i < kWay ? i : pick(rng)) = 1.0;
    for (std::size_t k = 0; k < kWay; ++k)
      if (extra(rng)) ep.support_labels(i, k) = 1.0;
  }
  for (std::size_t q = 0; q < kQuery; ++q) {
    ep.query_labels(q, pick(rng)) = 1.0;
    for (std::size_t k = 0; k < kWay; ++k)
      if (extra(rng)) ep.query_labels(q, k) = 1.0;
  }
  return ep;
}

Mlp::Bound bound_from(std::span<const ad::Var> vars, std::size_t first, std::size_t layers) {
  Mlp::Bound b;
  for (std::size_t l = 0; l < layers; ++l) {
    b.weights.push_back(vars[first + 2 * l]);
    b.biases.push_back(vars[first + 2 * l + 1]);
  }
  return b;
}

void append_params(const Mlp& net, std::vector<Tensor>& out) {
  for (const auto& layer : net.layers()) {
    out.push_back(layer.weight);
    out.push_back(layer.bias);
  }
}

std::vector<std::size_t> row_counts(const Tensor& labels) {
  std::vector<std::size_t> out;
  for (std::size_t r = 0; r < labels.rows(); ++r) {
    std::size_t c = 0;
    for (double v : labels.row_span(r)) c += v != 0.0 ? 1 : 0;
    out.push_back(c);
  }
  return out;
}

}  // namespace

std::string loss_name(LossUnderTest loss) {
  switch (loss) {
    case LossUnderTest::kProto: return "prototypical";
    case LossUnderTest::kRelationBce: return "relation-bce";
    case LossUnderTest::kRelationMse: return "relation-mse";
    case LossUnderTest::kLabelPropagation: return "label-propagation";
    case LossUnderTest::kJointNlc: return "joint-nlc";
  }
  return "unknown";
}

double loss_gradient_error(LossUnderTest loss, std::uint64_t seed,
                           const GradientCheckOptions& options) {
  Rng rng(derive_seed(seed, 0x6c));
  const ToyEpisode ep = random_episode(rng);
  const Mlp embedding({kFeatureDim, 6, kEmbeddingDim}, rng);
  const Mlp relation({2 * kEmbeddingDim, 5, 1}, rng);
  const Mlp count(nlc::count_net_widths(kEmbeddingDim, kWay, 6), rng);

  std::vector<Tensor> params;
  append_params(embedding, params);
  const std::size_t head_first = params.size();
  if (loss == LossUnderTest::kRelationBce || loss == LossUnderTest::kRelationMse)
    append_params(relation, params);
  if (loss == LossUnderTest::kJointNlc) append_params(count, params);

  heads::HeadOptions head;
  switch (loss) {
    case LossUnderTest::kProto:
    case LossUnderTest::kJointNlc: head.kind = heads::HeadKind::kPrototypical; break;
    case LossUnderTest::kRelationBce: head.kind = heads::HeadKind::kRelation; break;
    case LossUnderTest::kRelationMse:
      head.kind = heads::HeadKind::kRelation;
      head.relation_loss = heads::RelationLoss::kMse;
      break;
    case LossUnderTest::kLabelPropagation: head.kind = heads::HeadKind::kLabelPropagation; break;
  }

  auto f = [&](ad::Tape& tape, std::span<const ad::Var> vars) {
    const Mlp::Bound emb = bound_from(vars, 0, 2);
    ad::Var e = embed(emb, tape.constant(ep.features));
    Mlp::Bound rel;
    if (head.kind == heads::HeadKind::kRelation) rel = bound_from(vars, head_first, 2);
    heads::HeadOutput out =
        heads::run_head(head, &rel, e, kSupport, ep.support_labels, ep.query_labels);
    if (loss != LossUnderTest::kJointNlc) return out.loss;
    std::vector<std::size_t> s_idx(kSupport), q_idx(kQuery);
    for (std::size_t i = 0; i < kSupport; ++i) s_idx[i] = i;
    for (std::size_t q = 0; q < kQuery; ++q) q_idx[q] = kSupport + q;
    ad::Var s = ad::gather_rows(e, s_idx);
    ad::Var q = ad::gather_rows(e, q_idx);
    ad::Var logits = nlc::pair_logits(bound_from(vars, head_first, 2), s, q, nlc::context_vector(s));
    const auto targets =
        nlc::combined_counts(row_counts(ep.support_labels), row_counts(ep.query_labels));
    return nlc::joint_loss(out.loss, nlc::count_loss(logits, targets, kWay), nlc::kDefaultLambda);
  };
  return check_gradients(f, params, options);
}

PropagationCheck propagation_gap(std::uint64_t seed, std::size_t max_nodes, double alpha,
                                 std::size_t max_iterations) {
  Rng rng(derive_seed(seed, 0x9a));
  std::uniform_int_distribution<std::size_t> node_count(4, max_nodes);
  std::uniform_int_distribution<std::size_t> way_dist(2, 5);
  std::normal_distribution<double> normal(0.0, 1.0);
  const std::size_t nodes = node_count(rng);
  const std::size_t way = way_dist(rng);
  const std::size_t support = std::max<std::size_t>(way, nodes / 2);

  Tensor emb(nodes, 4);
  for (double& v : emb.data()) v = normal(rng);
  Tensor labels(support, way);
  std::uniform_int_distribution<std::size_t> cls(0, way - 1);
  for (std::size_t i = 0; i < support; ++i) labels(i, i < way ? i : cls(rng)) = 1.0;

  ad::Tape tape;
  const std::size_t k = heads::effective_neighbors(heads::kDefaultNeighbors, nodes);
  const Tensor s = heads::normalize_graph(heads::build_graph(tape.constant(emb), 1.0, k)).value();
  const Tensor phi = heads::support_label_matrix(labels, nodes - support);
  const Tensor closed = heads::propagate(phi, tape.constant(s), alpha).value();

  // F <- alpha F S + Phi_X has Phi_X (I - alpha S)^{-1} as its fixed point.
  Tensor f = phi;
  std::size_t it = 0;
  for (; it < max_iterations; ++it) {
    Tensor next = matmul(f, s);
    double change = 0.0;
    for (std::size_t i = 0; i < next.size(); ++i) {
      next[i] = alpha * next[i] + phi[i];
      change = std::max(change, std::abs(next[i] - f[i]));
    }
    f = std::move(next);
    if (change < 1e-13) break;
  }
  return {max_abs_diff(closed, f), it, nodes};
}

double brute_force_average_precision(const std::vector<double>& scores,
                                     const std::vector<std::uint8_t>& truth) {
  const std::size_t n = scores.size();
  auto rank_of = [&](std::size_t i) {
    std::size_t ahead = 0;
    for (std::size_t j = 0; j < n; ++j)
      if (scores[j] > scores[i] || (scores[j] == scores[i] && j < i)) ++ahead;
    return ahead + 1;
  };
  std::vector<std::size_t> rank(n);
  for (std::size_t i = 0; i < n; ++i) rank[i] = rank_of(i);
  double acc = 0.0;
  std::size_t positives = 0;
  for (std::size_t r = 1; r <= n; ++r) {
    // The prefix of length r ends at a positive: add its precision.
    std::size_t last = n;
    std::size_t hits = 0;
    for (std::size_t i = 0; i < n; ++i) {
      if (rank[i] == r) last = i;
      if (rank[i] <= r && truth[i]) ++hits;
    }
    if (!truth[last]) continue;
    ++positives;
    acc += static_cast<double>(hits) / static_cast<double>(r);
  }
  return acc / static_cast<double>(positives);
}

std::vector<CheckResult> run(const Options& options) {
  std::vector<CheckResult> results;
  auto add = [&](std::string name, bool ok, std::string detail) {
    results.push_back({std::move(name), ok, std::move(detail)});
  };

  for (LossUnderTest loss : {LossUnderTest::kProto, LossUnderTest::kRelationBce,
                             LossUnderTest::kRelationMse, LossUnderTest::kLabelPropagation,
                             LossUnderTest::kJointNlc}) {
    GradientCheckOptions gc;
    if (loss == LossUnderTest::kProto && options.flip_proto_gradient) gc.analytic_factor = -1.0;
    double worst = 0.0;
    for (std::uint64_t seed = 0; seed < 5; ++seed)
      worst = std::max(worst, loss_gradient_error(loss, seed, gc));
    std::ostringstream d;
    d << "max rel err " << std::scientific << std::setprecision(2) << worst << " (< 1e-4)";
    add("gradient " + loss_name(loss), worst < 1e-4, d.str());
  }

  {
    double worst = 0.0;
    for (std::uint64_t seed = 0; seed < 10; ++seed)
      worst = std::max(worst, propagation_gap(seed).max_abs_error);
    std::ostringstream d;
    d << "max |closed - iterative| " << std::scientific << std::setprecision(2) << worst;
    add("propagation closed form", worst < 1e-8, d.str());
  }

  {
    Rng rng(77);
    std::uniform_int_distribution<std::size_t> way_dist(2, 10);
    bool ok = true;
    for (int trial = 0; trial < 100 && ok; ++trial) {
      const std::size_t way = way_dist(rng);
      std::uniform_int_distribution<std::size_t> cnt(1, way);
      std::uniform_int_distribution<std::size_t> support_n(1, 12);
      const std::size_t truth = cnt(rng);
      std::vector<std::size_t> b(support_n(rng)), m;
      Tensor probs(b.size(), 2 * way);
      for (std::size_t i = 0; i < b.size(); ++i) {
        b[i] = cnt(rng);
        m.push_back(b[i] + truth);
        probs(i, m.back() - 1) = 1.0;
      }
      const auto vote = nlc::vote_label_count(nlc::count_histogram(m, b, way), probs, b, way);
      ok = vote.count == truth && !vote.fallback;
    }
    add("label-count voting oracle", ok, "perfect pair predictor recovers the count");
  }

  {
    Rng rng(99);
    std::uniform_int_distribution<std::size_t> len(1, 12);
    std::uniform_int_distribution<int> level(0, 4);
    bool ok = true;
    for (int trial = 0; trial < 1000 && ok; ++trial) {
      const std::size_t n = len(rng);
      std::vector<double> scores(n);
      std::vector<std::uint8_t> truth(n);
      for (double& s : scores) s = level(rng) * 0.25;
      for (auto& t : truth) t = level(rng) < 2 ? 1 : 0;
      truth[n - 1] = 1;
      ok = eval::average_precision(scores, truth) == brute_force_average_precision(scores, truth);
    }
    add("average precision oracle", ok, "1000 random draws, exact equality");
  }

  if (const kernels::KernelTable* simd = kernels::avx2_kernels(); simd && kernels::cpu_has_avx2()) {
    const auto& ref = kernels::scalar_kernels();
    Rng rng(5);
    std::normal_distribution<double> normal(0.0, 1.0);
    double worst = 0.0;
    for (std::size_t n : {1u, 3u, 4u, 7u, 8u, 17u, 64u, 129u}) {
      std::vector<double> a(n), b(n);
      for (double& v : a) v = normal(rng);
      for (double& v : b) v = normal(rng);
      worst = std::max(worst, std::abs(ref.dot(a.data(), b.data(), n) - simd->dot(a.data(), b.data(), n)));
      worst = std::max(worst, std::abs(ref.sq_dist(a.data(), b.data(), n) -
                                       simd->sq_dist(a.data(), b.data(), n)));
    }
    std::ostringstream d;
    d << "max |scalar - avx2| " << std::scientific << std::setprecision(2) << worst;
    add("simd kernels match scalar", worst < 1e-12, d.str());
  }
  return results;
}

bool all_passed(const std::vector<CheckResult>& results) {
  return std::all_of(results.begin(), results.end(), [](const CheckResult& r) { return r.passed; });
}

void print(const std::vector<CheckResult>& results, std::ostream& out) {
  for (const auto& r : results)
    out << (r.passed ? "[PASS] " : "[FAIL] ") << r.name << ": " << r.detail << '\n';
}

}  // namespace mlfsl::selftest
