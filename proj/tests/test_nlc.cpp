// SPDX-License-Identifier: Apache-2.0
#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <vector>

#include "doctest.h"
#include "mlfsl/embedding.hpp"
#include "mlfsl/errors.hpp"
#include "mlfsl/nlc.hpp"
#include "mlfsl/rng.hpp"
#include "mlfsl/selftest.hpp"

using namespace mlfsl;
using namespace mlfsl::nlc;

namespace {

// Probability rows that put all mass on one combined count (1-based).
Tensor one_hot_rows(const std::vector<std::size_t>& counts, std::size_t way) {
  Tensor p(counts.size(), 2 * way);
  for (std::size_t i = 0; i < counts.size(); ++i) p(i, counts[i] - 1) = 1.0;
  return p;
}

}  // namespace

TEST_CASE("context vector is the support mean") {
  ad::Tape tape;
  CHECK(context_vector(tape.constant(Tensor::row({3, -1}))).value().values() == std::vector<double>{3, -1});
  CHECK(context_vector(tape.constant(Tensor::from_rows({{1, 0}, {0, 1}}))).value().values() ==
        std::vector<double>{0.5, 0.5});
  const Tensor a = context_vector(tape.constant(Tensor::from_rows({{1, 2}, {3, 5}, {-4, 0.5}}))).value();
  const Tensor b = context_vector(tape.constant(Tensor::from_rows({{-4, 0.5}, {1, 2}, {3, 5}}))).value();
  CHECK(max_abs_diff(a, b) < 1e-15);
}

TEST_CASE("count network shape and pair ordering") {
  CHECK(count_net_widths(32, 5) == std::vector<std::size_t>{96, 64, 10});
  Rng rng(1);
  const std::size_t n = 3, way = 4;
  const Mlp net(count_net_widths(n, way, 8), rng);
  ad::Tape tape;
  std::normal_distribution<double> normal(0.0, 1.0);
  Tensor s(5, n), q(2, n);
  for (double& v : s.data()) v = normal(rng);
  for (double& v : q.data()) v = normal(rng);
  const Mlp::Bound b = net.bind(tape, false);
  const ad::Var sv = tape.constant(s), qv = tape.constant(q);
  const ad::Var z = context_vector(sv);
  const Tensor logits = pair_logits(b, sv, qv, z).value();
  CHECK(logits.rows() == 10);
  CHECK(logits.cols() == 2 * way);
  // Row q * Ns + i is the pair (support i, query q).
  Tensor pair(1, 3 * n);
  for (std::size_t d = 0; d < n; ++d) {
    pair(0, d) = s(3, d);
    pair(0, n + d) = q(1, d);
    pair(0, 2 * n + d) = z.value()(0, d);
  }
  const Tensor direct = Mlp::forward(b, tape.constant(pair)).value();
  for (std::size_t c = 0; c < 2 * way; ++c)
    CHECK(logits(1 * 5 + 3, c) == doctest::Approx(direct(0, c)).epsilon(1e-14));
}

TEST_CASE("zero count network gives uniform logits and the lowest count") {
  const Mlp net = Mlp::zeros(count_net_widths(2, 3, 4));
  ad::Tape tape;
  const ad::Var s = tape.constant(Tensor::from_rows({{1, 2}, {3, 4}}));
  const Tensor logits = pair_logits(net.bind(tape, false), s, tape.constant(Tensor::row({0, 1})), context_vector(s)).value();
  for (double v : logits.data()) CHECK(v == 0.0);
  CHECK(argmax_counts(logits) == std::vector<std::size_t>{1, 1});
  const Tensor p = pair_probabilities(logits);
  for (double v : p.data()) CHECK(v == doctest::Approx(1.0 / 6.0).epsilon(1e-15));
}

TEST_CASE("combined counts add label-set sizes") {
  const std::size_t sup[] = {2, 1};
  const std::size_t qry[] = {3, 1};
  CHECK(combined_counts(sup, qry) == std::vector<std::size_t>{5, 4, 3, 2});
}

TEST_CASE("count loss") {
  ad::Tape tape;
  const std::size_t way = 2;
  Tensor logits(2, 2 * way);
  logits(0, 1) = 200.0;  // count 2
  logits(1, 3) = 200.0;  // count 4
  const std::size_t targets[] = {2, 4};
  CHECK(count_loss(tape.constant(logits), targets, way).value().item() < 1e-12);
  const std::size_t too_low[] = {1, 4};
  const std::size_t too_high[] = {2, 5};
  CHECK_THROWS_AS(count_loss(tape.constant(logits), too_low, way), ContractViolation);
  CHECK_THROWS_AS(count_loss(tape.constant(logits), too_high, way), ContractViolation);
  // Uniform logits: each pair costs log(2C).
  const std::size_t uniform_targets[] = {3, 3};
  CHECK(count_loss(tape.constant(Tensor(2, 4)), uniform_targets, way).value().item() ==
        doctest::Approx(2.0 * std::log(4.0)).epsilon(1e-14));
}

TEST_CASE("joint loss weights the count loss by lambda") {
  CHECK(kDefaultLambda == 0.01);
  ad::Tape tape;
  const double v = joint_loss(tape.constant(Tensor::scalar(2.0)), tape.constant(Tensor::scalar(30.0)), kDefaultLambda)
                       .value()
                       .item();
  CHECK(v == doctest::Approx(2.3).epsilon(1e-15));
}

TEST_CASE("joint loss gradient") {
  for (std::uint64_t seed = 0; seed < 6; ++seed)
    CHECK(selftest::loss_gradient_error(selftest::LossUnderTest::kJointNlc, seed) < 1e-4);
}

TEST_CASE("histogram examples") {
  const std::size_t m[] = {3, 5};
  const std::size_t b[] = {1, 2};
  const CountHistogram h = count_histogram(m, b, 3);
  CHECK(h.bins.size() == 7);
  CHECK(h.bins[2] == 1);
  CHECK(h.bins[3] == 1);
  CHECK(h.total() == 2);

  const std::size_t m2[] = {4, 5, 6, 4};
  const std::size_t b2[] = {1, 2, 3, 1};
  CHECK(count_histogram(m2, b2, 3).bins[3] == 4);

  const std::size_t m3[] = {1, 2};
  const std::size_t b3[] = {3, 2};
  const CountHistogram clamped = count_histogram(m3, b3, 2);
  CHECK(clamped.bins[0] == 2);
  CHECK(clamped.total() == 2);
}

TEST_CASE("one outlier among agreeing estimates is outvoted") {
  // Five support samples: one pair predicts a query count of 2, four predict 3.
  const std::vector<std::size_t> b{1, 2, 1, 1, 2};
  const std::vector<std::size_t> m{3, 5, 4, 4, 5};
  const std::size_t way = 5;
  const Vote v = vote_label_count(count_histogram(m, b, way), one_hot_rows(m, way), b, way);
  CHECK(v.count == 3);
  CHECK_FALSE(v.fallback);
  CHECK_FALSE(v.tie_broken);
}

TEST_CASE("a single voter decides") {
  const std::vector<std::size_t> b{1}, m{3};
  const Vote v = vote_label_count(count_histogram(m, b, 3), one_hot_rows(m, 3), b, 3);
  CHECK(v.count == 2);
}

TEST_CASE("ties are broken by summed probability mass") {
  // h(1) = h(2) = 2. Mass on (count + B_i) summed by hand below.
  const std::size_t way = 3;
  const std::vector<std::size_t> b{1, 1, 2, 1};
  const std::vector<std::size_t> m{2, 2, 4, 3};
  Tensor p(4, 2 * way);
  const double rows[4][6] = {{0.0, 0.6, 0.3, 0.1, 0.0, 0.0},
                             {0.0, 0.5, 0.4, 0.1, 0.0, 0.0},
                             {0.0, 0.0, 0.3, 0.4, 0.3, 0.0},
                             {0.0, 0.1, 0.6, 0.3, 0.0, 0.0}};
  for (std::size_t i = 0; i < 4; ++i)
    for (std::size_t c = 0; c < 6; ++c) p(i, c) = rows[i][c];
  auto mass = [&](std::size_t count) {
    double s = 0.0;
    for (std::size_t i = 0; i < 4; ++i) s += p(i, count + b[i] - 1);
    return s;
  };
  REQUIRE(mass(2) > mass(1));
  const CountHistogram h = count_histogram(m, b, way);
  REQUIRE(h.bins[1] == 2);
  REQUIRE(h.bins[2] == 2);
  const Vote v = vote_label_count(h, p, b, way);
  CHECK(v.count == 2);
  CHECK(v.tie_broken);
}

TEST_CASE("no vote in range falls back to one with a flag") {
  const std::vector<std::size_t> b{2, 3}, m{2, 3};
  const Vote v = vote_label_count(count_histogram(m, b, 3), one_hot_rows(m, 3), b, 3);
  CHECK(v.count == 1);
  CHECK(v.fallback);
}

TEST_CASE("voting is permutation invariant and stays in range") {
  Rng rng(3);
  std::uniform_int_distribution<std::size_t> way_dist(2, 6);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t way = way_dist(rng);
    std::uniform_int_distribution<std::size_t> cnt(1, way);
    std::uniform_int_distribution<std::size_t> logit_cnt(1, 2 * way);
    const std::size_t ns = 1 + trial % 9;
    std::vector<std::size_t> b(ns), m(ns);
    Tensor p(ns, 2 * way);
    for (std::size_t i = 0; i < ns; ++i) {
      b[i] = cnt(rng);
      m[i] = logit_cnt(rng);
      double total = 0.0;
      for (std::size_t c = 0; c < 2 * way; ++c) total += p(i, c) = u(rng);
      for (std::size_t c = 0; c < 2 * way; ++c) p(i, c) /= total;
    }
    const Vote v = vote_label_count(count_histogram(m, b, way), p, b, way);
    CHECK(v.count >= 1);
    CHECK(v.count <= way);
    CHECK(count_histogram(m, b, way).total() == ns);

    std::vector<std::size_t> perm(ns);
    std::iota(perm.begin(), perm.end(), 0);
    std::shuffle(perm.begin(), perm.end(), rng);
    std::vector<std::size_t> b2(ns), m2(ns);
    Tensor p2(ns, 2 * way);
    for (std::size_t i = 0; i < ns; ++i) {
      b2[i] = b[perm[i]];
      m2[i] = m[perm[i]];
      for (std::size_t c = 0; c < 2 * way; ++c) p2(i, c) = p(perm[i], c);
    }
    const Vote v2 = vote_label_count(count_histogram(m2, b2, way), p2, b2, way);
    CHECK(v2.count == v.count);
    CHECK(v2.fallback == v.fallback);
  }
}

TEST_CASE("a perfect pair predictor recovers the true count on 100 episodes") {
  Rng rng(9);
  std::uniform_int_distribution<std::size_t> way_dist(2, 10);
  for (int e = 0; e < 100; ++e) {
    const std::size_t way = way_dist(rng);
    std::uniform_int_distribution<std::size_t> cnt(1, way);
    const std::size_t truth = cnt(rng);
    std::vector<std::size_t> b(1 + e % 15), m;
    for (auto& x : b) {
      x = cnt(rng);
      m.push_back(x + truth);
    }
    const Vote v = vote_label_count(count_histogram(m, b, way), one_hot_rows(m, way), b, way);
    CHECK(v.count == truth);
  }
}
