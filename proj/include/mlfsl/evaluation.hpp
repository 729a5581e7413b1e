// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"
#include "mlfsl/episodes.hpp"
#include "mlfsl/rng.hpp"

namespace mlfsl::eval {

// Classes ranked by descending score, ties to the lower index; AP is the mean
// of precision@rank over the positive classes. Throws ContractViolation when
// `truth` has no positive.
double average_precision(std::span<const double> scores, std::span<const std::uint8_t> truth);

struct QueryResult {
  std::vector<double> scores;
  LabelVector truth;
  std::optional<std::size_t> predicted_count;
};

struct EpisodeResult {
  std::vector<QueryResult> queries;
};

// Mean of per-query AP over every query of every episode.
double map_over_episodes(std::span<const EpisodeResult> results);

// Mean over (episode, class) pairs of the AP obtained by ranking the
// episode's queries on that class; classes without a positive query are
// skipped. Returns nullopt when no pair qualifies.
std::optional<double> macro_map_over_episodes(std::span<const EpisodeResult> results);

// Fraction of exact matches; ContractViolation on empty or misaligned input.
double lc_accuracy(std::span<const std::size_t> predicted, std::span<const std::size_t> truth);

// Top-`count` classes by score (ties to the lower index) must equal the true
// label set exactly.
bool hard_decision_correct(std::span<const double> scores, std::size_t count,
                           std::span<const std::uint8_t> truth);

// Fraction of queries whose top-l set matches the truth, l = predicted count.
double hard_decision_accuracy(std::span<const QueryResult> queries);

struct Interval {
  double lo = 0.0;
  double hi = 0.0;
};

// Percentile bootstrap of the mean of `values` (one value per episode).
Interval bootstrap_ci(std::span<const double> values, std::size_t resamples, double level,
                      Rng& rng);

// Expected mAP when scores are a uniformly random ranking, simulated with
// `trials` random rankings per truth.
double random_baseline_map(std::span<const LabelVector> truths, std::size_t trials, Rng& rng);

// Accuracy of always predicting the most frequent true count.
double majority_count_baseline(std::span<const std::size_t> true_counts);

struct Metrics {
  std::size_t episodes = 0;
  std::size_t queries = 0;
  double map = 0.0;
  Interval map_ci;
  std::optional<double> macro_map;
  std::optional<double> lc;
  std::optional<Interval> lc_ci;
  std::optional<double> hard_acc;
  std::optional<Interval> hard_acc_ci;
};

inline constexpr std::size_t kBootstrapResamples = 1000;

Metrics summarize(std::span<const EpisodeResult> results, std::uint64_t seed,
                  std::size_t resamples = kBootstrapResamples);

// {"map", "map_ci", "macro_map", "lc", "lc_ci", "hard_acc", "hard_acc_ci",
//  "episodes", "queries"}; absent metrics are null.
nlohmann::json to_json(const Metrics& metrics);

std::string csv_header();
std::string csv_row(const std::string& run_name, const Metrics& metrics);

}  // namespace mlfsl::eval
