// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <vector>

#include "mlfsl/episodes.hpp"

namespace mlfsl::synth {

struct SynthConfig {
  std::size_t num_classes = 10;
  std::size_t feature_dim = 16;
  std::size_t samples_per_class = 60;
  std::size_t max_labels = 2;     // label-set size drawn uniformly from 1..max_labels
  double separation = 1.0;        // norm of every class center
  double noise = 0.1;             // per-coordinate Gaussian standard deviation
  double cooccurrence = 0.0;      // 0: independent extra labels, 1: always from the fixed graph
  std::uint64_t seed = 1;
};

// Throws ConfigError on an invalid configuration.
void validate(const SynthConfig& config);

struct SynthTask {
  Dataset dataset;
  // num_classes x feature_dim
  std::vector<std::vector<double>> centers;
  // Symmetric co-occurrence neighbor lists.
  std::vector<std::vector<ClassId>> cooccurrence_graph;
};

// Every class gets samples_per_class samples whose label set contains it.
// Features are the mean of the member classes' centers plus noise.
SynthTask generate_task(const SynthConfig& config);
Dataset generate(const SynthConfig& config);

// JSON Lines: {"id": str, "features": [num...], "labels": [str...]} per line.
Dataset load_jsonl(const std::filesystem::path& path);
Dataset read_jsonl(std::istream& in);
void write_jsonl(const Dataset& dataset, const std::filesystem::path& path);
void write_jsonl(const Dataset& dataset, std::ostream& out);

}  // namespace mlfsl::synth
