// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "mlfsl/rng.hpp"
#include "mlfsl/tensor.hpp"

namespace mlfsl {

using ClassId = std::uint32_t;

// One multi-label datum. Labels are nonempty and duplicate-free.
struct Sample {
  std::string id;
  std::vector<double> features;
  std::vector<ClassId> labels;

  bool has_label(ClassId c) const;
};

// Samples plus the table that maps class ids back to their names. Splits of
// a dataset share the same table, so ids stay comparable across splits.
class Dataset {
 public:
  Dataset() = default;

  ClassId intern(const std::string& name);
  // Appends after validating dimension and label invariants.
  void add(Sample sample);

  const std::vector<Sample>& samples() const { return samples_; }
  const std::vector<std::string>& class_names() const { return class_names_; }
  std::size_t feature_dim() const { return feature_dim_; }
  std::size_t size() const { return samples_.size(); }
  bool empty() const { return samples_.empty(); }

  // Classes actually carried by at least one sample, ascending.
  std::vector<ClassId> present_classes() const;
  // Copy with the same class table but no samples.
  Dataset empty_like() const;

 private:
  std::vector<Sample> samples_;
  std::vector<std::string> class_names_;
  std::unordered_map<std::string, ClassId> class_index_;
  std::size_t feature_dim_ = 0;
};

// Binary membership vector aligned with an episode's label order.
struct LabelVector {
  std::vector<std::uint8_t> values;

  std::size_t size() const { return values.size(); }
  std::size_t count() const;
  bool operator[](std::size_t j) const { return values[j] != 0; }
};

LabelVector encode_labels(const Sample& sample, std::span<const ClassId> label_set);

struct EpisodeSample {
  std::size_t index = 0;  // position in the source dataset
  std::vector<double> features;
  LabelVector labels;     // restricted to the episode label set
};

struct Episode {
  std::vector<ClassId> label_set;
  std::vector<EpisodeSample> support;
  std::vector<EpisodeSample> query;
  std::size_t way = 0;
  std::size_t shot = 0;

  // Rows are feature vectors.
  Tensor support_features() const;
  Tensor query_features() const;
  // Binary [samples x way] label matrices.
  Tensor support_labels() const;
  Tensor query_labels() const;
};

struct EpisodeSpec {
  std::size_t way = 0;
  std::size_t shot = 0;
  std::size_t query_count = 0;
};

// Half the number of sampled labels, at least one.
std::size_t default_query_count(std::size_t way);

Episode sample_episode(const Dataset& dataset, const EpisodeSpec& spec, Rng& rng);

// Throws ContractViolation naming the first broken episode invariant.
void validate_episode(const Episode& episode, const Dataset& dataset);

struct DatasetSplit {
  Dataset train;
  Dataset val;
  Dataset test;
};

// Class-disjoint split. Samples whose labels fall into more than one
// partition are dropped.
DatasetSplit split_dataset(const Dataset& dataset, double train_fraction, double val_fraction,
                           Rng& rng);

}  // namespace mlfsl
