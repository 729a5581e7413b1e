// SPDX-License-Identifier: Apache-2.0
// Acceptance suite: one PASS/FAIL line per criterion, nonzero exit on any FAIL.
#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <numeric>
#include <random>
#include <string>
#include <vector>

#include "mlfsl/config.hpp"
#include "mlfsl/episodes.hpp"
#include "mlfsl/errors.hpp"
#include "mlfsl/evaluation.hpp"
#include "mlfsl/nlc.hpp"
#include "mlfsl/rng.hpp"
#include "mlfsl/selftest.hpp"
#include "mlfsl/trainer.hpp"

using namespace mlfsl;

namespace {

struct Outcome {
  bool passed = false;
  std::string detail;
};

std::string fmt(const char* f, double a) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, a);
  return buf;
}

// Easy synthetic task: centers of norm 1 with noise 0.1, ten classes split
// five for training and five for testing, label sets of size 1 or 2.
RunConfig easy_task(const std::string& head, std::uint64_t seed) {
  RunConfig c;
  c.head = head;
  c.way = 3;
  c.shot = 2;
  c.episodes = 5000;
  c.eval_episodes = 1000;
  c.seed = seed;
  c.train_fraction = 0.5;
  c.val_fraction = 0.0;
  c.synth.num_classes = 10;
  c.synth.feature_dim = 8;
  c.synth.max_labels = 2;
  c.synth.separation = 1.0;
  c.synth.noise = 0.1;
  if (head == "lpn") c.sigma = 20.0;
  return c;
}

Outcome gradient_fidelity() {
  using selftest::LossUnderTest;
  double worst = 0.0;
  std::string per;
  for (LossUnderTest loss : {LossUnderTest::kProto, LossUnderTest::kRelationBce,
                             LossUnderTest::kRelationMse, LossUnderTest::kLabelPropagation,
                             LossUnderTest::kJointNlc}) {
    double w = 0.0;
    for (std::uint64_t seed = 100; seed < 120; ++seed)
      w = std::max(w, selftest::loss_gradient_error(loss, seed));
    per += " " + selftest::loss_name(loss) + "=" + fmt("%.2e", w);
    worst = std::max(worst, w);
  }
  return {worst < 1e-4, "max rel err " + fmt("%.2e", worst) + " < 1e-4 over 20 episodes;" + per};
}

Outcome propagation_equivalence() {
  double worst = 0.0;
  std::size_t largest = 0;
  for (std::uint64_t seed = 1000; seed < 1050; ++seed) {
    const auto r = selftest::propagation_gap(seed, 60, 0.99);
    worst = std::max(worst, r.max_abs_error);
    largest = std::max(largest, r.nodes);
  }
  return {worst < 1e-8, "max |closed - iterative| " + fmt("%.2e", worst) +
                            " < 1e-8 on 50 graphs (largest " + std::to_string(largest) + " nodes)"};
}

Outcome voting_oracle() {
  Rng rng(derive_seed(31, 0x3));
  std::size_t hits = 0;
  for (int trial = 0; trial < 100; ++trial) {
    std::uniform_int_distribution<std::size_t> way_dist(2, 10);
    const std::size_t way = way_dist(rng);
    std::uniform_int_distribution<std::size_t> count(1, way);
    std::uniform_int_distribution<std::size_t> support(1, 15);
    const std::size_t truth = count(rng);
    std::vector<std::size_t> b(support(rng)), m;
    Tensor probs(b.size(), 2 * way);
    for (std::size_t i = 0; i < b.size(); ++i) {
      b[i] = count(rng);
      m.push_back(b[i] + truth);
      probs(i, m.back() - 1) = 1.0;
    }
    const auto v = nlc::vote_label_count(nlc::count_histogram(m, b, way), probs, b, way);
    hits += (v.count == truth && !v.fallback) ? 1 : 0;
  }

  // Four supports imply a query count of 3, one dissenter implies 2.
  const std::vector<std::size_t> b{1, 2, 1, 1, 2};
  const std::vector<std::size_t> m{3, 5, 4, 4, 5};
  Tensor probs(b.size(), 10);
  for (std::size_t i = 0; i < b.size(); ++i) probs(i, m[i] - 1) = 1.0;
  const auto dissent = nlc::vote_label_count(nlc::count_histogram(m, b, 5), probs, b, 5);

  return {hits == 100 && dissent.count == 3,
          std::to_string(hits) + "/100 recovered; dissent case votes " + std::to_string(dissent.count)};
}

Outcome ap_oracle() {
  Rng rng(derive_seed(41, 0x4));
  std::uniform_int_distribution<std::size_t> len(1, 20);
  std::uniform_int_distribution<int> level(0, 5);
  std::size_t equal = 0;
  for (int trial = 0; trial < 1000; ++trial) {
    const std::size_t n = len(rng);
    std::vector<double> scores(n);
    std::vector<std::uint8_t> truth(n);
    for (double& s : scores) s = level(rng) * 0.2;
    for (auto& t : truth) t = level(rng) < 2 ? 1 : 0;
    truth[std::uniform_int_distribution<std::size_t>(0, n - 1)(rng)] = 1;
    equal += eval::average_precision(scores, truth) ==
                     selftest::brute_force_average_precision(scores, truth)
                 ? 1
                 : 0;
  }
  return {equal == 1000, std::to_string(equal) + "/1000 exactly equal"};
}

struct RandomBaseline {
  double mean = 0.0;
  eval::Interval ci;
};

// Per-episode random-ranking mAP over the same query truths, then a bootstrap
// interval of the mean over episodes.
RandomBaseline random_baseline(const EvaluationRun& run) {
  Rng rng(derive_seed(51, 0x5));
  std::vector<double> per_episode;
  for (const auto& ep : run.episodes) {
    std::vector<LabelVector> truths;
    for (const auto& q : ep.queries) truths.push_back(q.truth);
    per_episode.push_back(eval::random_baseline_map(truths, 200, rng));
  }
  RandomBaseline out;
  out.mean = std::accumulate(per_episode.begin(), per_episode.end(), 0.0) /
             static_cast<double>(per_episode.size());
  out.ci = eval::bootstrap_ci(per_episode, 1000, 0.95, rng);
  return out;
}

Outcome learning_signal(const std::string& head) {
  const auto start = std::chrono::steady_clock::now();
  const RunConfig c = easy_task(head, 1);
  const auto trained = train(c);
  const auto run = evaluate(c, trained.model);
  const double secs =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  const RandomBaseline base = random_baseline(run);
  const double map = run.metrics.map;
  const bool ok = map >= 0.80 && map >= base.ci.hi + 0.10 && secs < 300.0;
  return {ok, head + " test mAP " + fmt("%.4f", map) + " (need >= 0.80 and >= " +
                  fmt("%.4f", base.ci.hi + 0.10) + "); random " + fmt("%.4f", base.mean) + " [" +
                  fmt("%.4f", base.ci.lo) + ", " + fmt("%.4f", base.ci.hi) + "]; " +
                  fmt("%.1f", secs) + " s < 300 s"};
}

Outcome nlc_benefit() {
  double lc_sum = 0.0, majority_sum = 0.0;
  std::string per;
  for (std::uint64_t seed : {1, 2, 3}) {
    RunConfig c = easy_task("proto", seed);
    c.nlc = true;
    c.lambda = 0.01;
    const auto trained = train(c);
    const auto run = evaluate(c, trained.model);
    std::vector<std::size_t> truth;
    for (const auto& ep : run.episodes)
      for (const auto& q : ep.queries) truth.push_back(q.truth.count());
    const double majority = eval::majority_count_baseline(truth);
    const double lc = run.metrics.lc.value_or(0.0);
    lc_sum += lc;
    majority_sum += majority;
    per += " seed" + std::to_string(seed) + " lc=" + fmt("%.3f", lc) + "/maj=" + fmt("%.3f", majority);
  }
  const double gap = (lc_sum - majority_sum) / 3.0;
  return {gap >= 0.10, "mean LC - majority " + fmt("%+.4f", gap) + " (need >= 0.10);" + per};
}

// Plain forward pass, independent of the tape.
std::vector<double> embed_plain(const Mlp& net, std::vector<double> x) {
  const auto& layers = net.layers();
  for (std::size_t l = 0; l < layers.size(); ++l) {
    const Tensor& w = layers[l].weight;
    std::vector<double> y(w.cols());
    for (std::size_t j = 0; j < w.cols(); ++j) {
      double s = layers[l].bias(0, j);
      for (std::size_t i = 0; i < w.rows(); ++i) s += x[i] * w(i, j);
      y[j] = (l + 1 < layers.size()) ? std::max(0.0, s) : s;
    }
    x = std::move(y);
  }
  return x;
}

Outcome single_label_degeneracy() {
  RunConfig c = easy_task("proto", 7);
  c.synth.max_labels = 1;
  c.synth.noise = 0.3;
  c.way = 5;
  c.shot = 3;
  c.queries = 1;
  c.episodes = 300;
  c.synth.num_classes = 20;
  const auto trained = train(c);
  const Dataset data = load_dataset(c);
  const DatasetSplit split = make_split(c, data);

  Rng rng(derive_seed(71, 0x7));
  std::size_t agree = 0, nearest_correct = 0;
  for (int trial = 0; trial < 100; ++trial) {
    const Episode ep = sample_episode(split.test, {c.way, c.shot, 1}, rng);
    const auto scores = predict(trained.model, ep).scores.at(0);
    const std::size_t head_pick =
        static_cast<std::size_t>(std::max_element(scores.begin(), scores.end()) - scores.begin());

    std::vector<std::vector<double>> centers(c.way);
    std::vector<std::size_t> members(c.way, 0);
    for (const auto& s : ep.support) {
      const auto e = embed_plain(trained.model.embedding, s.features);
      for (std::size_t k = 0; k < c.way; ++k) {
        if (!s.labels[k]) continue;
        if (centers[k].empty()) centers[k].assign(e.size(), 0.0);
        for (std::size_t d = 0; d < e.size(); ++d) centers[k][d] += e[d];
        ++members[k];
      }
    }
    const auto qe = embed_plain(trained.model.embedding, ep.query[0].features);
    std::size_t nearest = 0;
    double best = INFINITY;
    for (std::size_t k = 0; k < c.way; ++k) {
      double d2 = 0.0;
      for (std::size_t d = 0; d < qe.size(); ++d) {
        const double diff = qe[d] - centers[k][d] / static_cast<double>(members[k]);
        d2 += diff * diff;
      }
      if (d2 < best) {
        best = d2;
        nearest = k;
      }
    }
    agree += head_pick == nearest ? 1 : 0;
    nearest_correct += ep.query[0].labels[nearest] ? 1 : 0;
  }
  return {agree == 100, std::to_string(agree) + "/100 queries agree (nearest-prototype accuracy " +
                            std::to_string(nearest_correct) + "/100)"};
}

Outcome determinism() {
  bool ok = true;
  std::string per;
  for (const char* head : {"proto", "relation", "lpn"}) {
    RunConfig c = easy_task(head, 11);
    c.episodes = 300;
    c.eval_episodes = 200;
    c.nlc = true;
    auto once = [&] {
      const auto trained = train(c);
      return std::make_pair(checkpoint_json(trained.model).dump(),
                            eval::to_json(evaluate(c, trained.model).metrics).dump());
    };
    const auto a = once();
    const auto b = once();
    const bool same = a == b;
    ok = ok && same;
    per += std::string(" ") + head + (same ? "=identical" : "=DIFFERENT");
  }
  return {ok, "checkpoint and metrics JSON compared byte for byte:" + per};
}

Outcome episode_protocol() {
  synth::SynthConfig s;
  s.num_classes = 20;
  s.feature_dim = 8;
  s.samples_per_class = 60;
  s.max_labels = 3;
  s.cooccurrence = 1.0;
  s.seed = 9;
  const Dataset data = synth::generate(s);
  Rng rng(derive_seed(91, 0x9));
  std::size_t covered = 0, below = 0, smallest = SIZE_MAX;
  for (int trial = 0; trial < 1000; ++trial) {
    const Episode ep = sample_episode(data, {10, 5, default_query_count(10)}, rng);
    std::vector<std::size_t> per_class(10, 0);
    for (const auto& x : ep.support)
      for (std::size_t k = 0; k < 10; ++k) per_class[k] += x.labels[k] ? 1 : 0;
    covered += std::all_of(per_class.begin(), per_class.end(), [](std::size_t n) { return n >= 5; })
                   ? 1
                   : 0;
    below += ep.support.size() < 50 ? 1 : 0;
    smallest = std::min(smallest, ep.support.size());
  }
  return {covered == 1000 && below > 0,
          std::to_string(covered) + "/1000 covered; " + std::to_string(below) +
              " episodes with |support| < 50 (smallest " + std::to_string(smallest) + ")"};
}

}  // namespace

int main() {
  struct Criterion {
    const char* name;
    std::function<Outcome()> run;
    double budget_s;  // 0: no runtime limit
  };
  const std::vector<Criterion> criteria{
      {"gradient fidelity", gradient_fidelity, 30.0},
      {"propagation equivalence", propagation_equivalence, 10.0},
      {"voting oracle", voting_oracle, 0.0},
      {"average precision oracle", ap_oracle, 0.0},
      {"learning signal", [] {
         Outcome all{true, ""};
         for (const char* head : {"proto", "relation", "lpn"}) {
           const Outcome o = learning_signal(head);
           all.passed = all.passed && o.passed;
           all.detail += (all.detail.empty() ? "" : " | ") + o.detail;
         }
         return all;
       }, 0.0},
      {"NLC label-count benefit", nlc_benefit, 0.0},
      {"single-label degeneracy", single_label_degeneracy, 0.0},
      {"determinism", determinism, 0.0},
      {"episode protocol", episode_protocol, 0.0},
  };

  int failures = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    const auto start = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = criteria[i].run();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    const double secs =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    if (criteria[i].budget_s > 0.0 && secs >= criteria[i].budget_s) {
      o.passed = false;
      o.detail += "; over the " + fmt("%.0f", criteria[i].budget_s) + " s budget";
    }
    failures += o.passed ? 0 : 1;
    std::printf("%s %zu %s: %s [%.2f s]\n", o.passed ? "PASS" : "FAIL", i + 1, criteria[i].name,
                o.detail.c_str(), secs);
    std::fflush(stdout);
  }
  std::printf("%d/%zu criteria passed\n", static_cast<int>(criteria.size()) - failures, criteria.size());
  return failures == 0 ? 0 : 1;
}
