// SPDX-License-Identifier: Apache-2.0
#include "mlfsl/evaluation.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>
#include <sstream>
#include <iomanip>

#include "mlfsl/errors.hpp"

namespace mlfsl::eval {
namespace {

std::vector<std::size_t> ranking(std::span<const double> scores) {
  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
  return order;
}

double mean(std::span<const double> v) {
  return std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
}

}  // namespace

double average_precision(std::span<const double> scores, std::span<const std::uint8_t> truth) {
  require(scores.size() == truth.size(), "scores and truth differ in length");
  const auto positives = static_cast<std::size_t>(std::count(truth.begin(), truth.end(), 1));
  require(positives > 0, "average precision needs at least one positive");
  const auto order = ranking(scores);
  double acc = 0.0;
  std::size_t hits = 0;
  for (std::size_t rank = 0; rank < order.size(); ++rank) {
    if (truth[order[rank]] == 1) {
      ++hits;
      acc += static_cast<double>(hits) / static_cast<double>(rank + 1);
    }
  }
  return acc / static_cast<double>(positives);
}

double map_over_episodes(std::span<const EpisodeResult> results) {
  double acc = 0.0;
  std::size_t n = 0;
  for (const auto& ep : results)
    for (const auto& q : ep.queries) {
      acc += average_precision(q.scores, q.truth.values);
      ++n;
    }
  require(n > 0, "mAP needs at least one query");
  return acc / static_cast<double>(n);
}

std::optional<double> macro_map_over_episodes(std::span<const EpisodeResult> results) {
  double acc = 0.0;
  std::size_t n = 0;
  for (const auto& ep : results) {
    if (ep.queries.empty()) continue;
    const std::size_t way = ep.queries.front().scores.size();
    for (std::size_t k = 0; k < way; ++k) {
      std::vector<double> scores;
      std::vector<std::uint8_t> truth;
      for (const auto& q : ep.queries) {
        scores.push_back(q.scores[k]);
        truth.push_back(q.truth.values[k]);
      }
      if (std::count(truth.begin(), truth.end(), 1) == 0) continue;
      acc += average_precision(scores, truth);
      ++n;
    }
  }
  if (n == 0) return std::nullopt;
  return acc / static_cast<double>(n);
}

double lc_accuracy(std::span<const std::size_t> predicted, std::span<const std::size_t> truth) {
  require(!predicted.empty(), "label-count accuracy of an empty list");
  require(predicted.size() == truth.size(), "predicted and true counts are not aligned");
  std::size_t hits = 0;
  for (std::size_t i = 0; i < predicted.size(); ++i) hits += predicted[i] == truth[i] ? 1 : 0;
  return static_cast<double>(hits) / static_cast<double>(predicted.size());
}

bool hard_decision_correct(std::span<const double> scores, std::size_t count,
                           std::span<const std::uint8_t> truth) {
  require(scores.size() == truth.size(), "scores and truth differ in length");
  require(count >= 1 && count <= scores.size(), "label count outside 1..way");
  const auto order = ranking(scores);
  std::vector<std::uint8_t> predicted(scores.size(), 0);
  for (std::size_t r = 0; r < count; ++r) predicted[order[r]] = 1;
  return std::equal(predicted.begin(), predicted.end(), truth.begin());
}

double hard_decision_accuracy(std::span<const QueryResult> queries) {
  require(!queries.empty(), "hard-decision accuracy of an empty list");
  std::size_t hits = 0;
  for (const auto& q : queries) {
    require(q.predicted_count.has_value(), "hard decisions need a predicted label count");
    hits += hard_decision_correct(q.scores, *q.predicted_count, q.truth.values) ? 1 : 0;
  }
  return static_cast<double>(hits) / static_cast<double>(queries.size());
}

Interval bootstrap_ci(std::span<const double> values, std::size_t resamples, double level,
                      Rng& rng) {
  require(!values.empty(), "bootstrap of an empty sample");
  require(resamples > 0, "bootstrap needs resamples");
  require(level > 0.0 && level < 1.0, "confidence level must lie in (0, 1)");
  std::uniform_int_distribution<std::size_t> pick(0, values.size() - 1);
  std::vector<double> means(resamples);
  for (double& m : means) {
    double acc = 0.0;
    for (std::size_t i = 0; i < values.size(); ++i) acc += values[pick(rng)];
    m = acc / static_cast<double>(values.size());
  }
  std::sort(means.begin(), means.end());
  const double tail = (1.0 - level) / 2.0;
  auto at = [&](double q) {
    const auto idx = static_cast<std::size_t>(std::floor(q * static_cast<double>(resamples - 1) + 0.5));
    return means[std::min(idx, resamples - 1)];
  };
  return {at(tail), at(1.0 - tail)};
}

double random_baseline_map(std::span<const LabelVector> truths, std::size_t trials, Rng& rng) {
  require(!truths.empty() && trials > 0, "random baseline needs truths and trials");
  std::uniform_real_distribution<double> u(0.0, 1.0);
  double acc = 0.0;
  std::vector<double> scores;
  for (const LabelVector& truth : truths) {
    scores.resize(truth.size());
    for (std::size_t t = 0; t < trials; ++t) {
      for (double& s : scores) s = u(rng);
      acc += average_precision(scores, truth.values);
    }
  }
  return acc / static_cast<double>(trials * truths.size());
}

double majority_count_baseline(std::span<const std::size_t> true_counts) {
  require(!true_counts.empty(), "majority baseline of an empty list");
  std::map<std::size_t, std::size_t> freq;
  for (std::size_t c : true_counts) ++freq[c];
  std::size_t best = 0;
  for (const auto& [count, n] : freq) best = std::max(best, n);
  return static_cast<double>(best) / static_cast<double>(true_counts.size());
}

Metrics summarize(std::span<const EpisodeResult> results, std::uint64_t seed,
                  std::size_t resamples) {
  require(!results.empty(), "no episodes to summarize");
  Metrics m;
  m.episodes = results.size();
  std::vector<double> ep_ap, ep_lc, ep_hard;
  bool counted = true;
  for (const auto& ep : results) {
    require(!ep.queries.empty(), "episode without queries");
    std::vector<double> aps;
    std::vector<std::size_t> pred, truth;
    for (const auto& q : ep.queries) {
      aps.push_back(average_precision(q.scores, q.truth.values));
      if (q.predicted_count) {
        pred.push_back(*q.predicted_count);
        truth.push_back(q.truth.count());
      } else {
        counted = false;
      }
    }
    m.queries += ep.queries.size();
    ep_ap.push_back(mean(aps));
    if (counted) {
      ep_lc.push_back(lc_accuracy(pred, truth));
      ep_hard.push_back(hard_decision_accuracy(ep.queries));
    }
  }
  m.map = map_over_episodes(results);
  m.macro_map = macro_map_over_episodes(results);
  Rng rng(derive_seed(seed, 0xb0075u));
  m.map_ci = bootstrap_ci(ep_ap, resamples, 0.95, rng);
  if (counted) {
    std::vector<std::size_t> pred, truth;
    std::vector<QueryResult> all;
    for (const auto& ep : results)
      for (const auto& q : ep.queries) {
        pred.push_back(*q.predicted_count);
        truth.push_back(q.truth.count());
        all.push_back(q);
      }
    m.lc = lc_accuracy(pred, truth);
    m.hard_acc = hard_decision_accuracy(all);
    m.lc_ci = bootstrap_ci(ep_lc, resamples, 0.95, rng);
    m.hard_acc_ci = bootstrap_ci(ep_hard, resamples, 0.95, rng);
  }
  return m;
}

nlohmann::json to_json(const Metrics& m) {
  using nlohmann::json;
  auto interval = [](const std::optional<Interval>& i) -> json {
    if (!i) return nullptr;
    return json::array({i->lo, i->hi});
  };
  auto value = [](const std::optional<double>& v) -> json {
    if (!v) return nullptr;
    return *v;
  };
  return json{{"map", m.map},
              {"map_ci", json::array({m.map_ci.lo, m.map_ci.hi})},
              {"macro_map", value(m.macro_map)},
              {"lc", value(m.lc)},
              {"lc_ci", interval(m.lc_ci)},
              {"hard_acc", value(m.hard_acc)},
              {"hard_acc_ci", interval(m.hard_acc_ci)},
              {"episodes", m.episodes},
              {"queries", m.queries}};
}

std::string csv_header() {
  return "run,episodes,queries,map,map_lo,map_hi,macro_map,lc,lc_lo,lc_hi,hard_acc,hard_lo,hard_hi";
}

std::string csv_row(const std::string& run_name, const Metrics& m) {
  std::ostringstream out;
  out << std::setprecision(6) << std::fixed;
  auto opt = [&](const std::optional<double>& v) {
    if (v) out << *v;
  };
  out << run_name << ',' << m.episodes << ',' << m.queries << ',' << m.map << ',' << m.map_ci.lo
      << ',' << m.map_ci.hi << ',';
  opt(m.macro_map);
  out << ',';
  opt(m.lc);
  out << ',';
  if (m.lc_ci) out << m.lc_ci->lo;
  out << ',';
  if (m.lc_ci) out << m.lc_ci->hi;
  out << ',';
  opt(m.hard_acc);
  out << ',';
  if (m.hard_acc_ci) out << m.hard_acc_ci->lo;
  out << ',';
  if (m.hard_acc_ci) out << m.hard_acc_ci->hi;
  return out.str();
}

}  // namespace mlfsl::eval
