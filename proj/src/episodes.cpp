// SPDX-License-Identifier: Apache-2.0
#include "mlfsl/episodes.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <set>

#include "mlfsl/errors.hpp"

namespace mlfsl {

bool Sample::has_label(ClassId c) const {
  return std::find(labels.begin(), labels.end(), c) != labels.end();
}

ClassId Dataset::intern(const std::string& name) {
  const auto it = class_index_.find(name);
  if (it != class_index_.end()) return it->second;
  const auto id = static_cast<ClassId>(class_names_.size());
  class_names_.push_back(name);
  class_index_.emplace(name, id);
  return id;
}

void Dataset::add(Sample sample) {
  if (sample.labels.empty()) throw DataError("sample '" + sample.id + "' has no labels");
  if (sample.features.empty()) throw DataError("sample '" + sample.id + "' has no features");
  std::vector<ClassId> sorted = sample.labels;
  std::sort(sorted.begin(), sorted.end());
  if (std::adjacent_find(sorted.begin(), sorted.end()) != sorted.end())
    throw DataError("sample '" + sample.id + "' has duplicate labels");
  for (ClassId c : sample.labels)
    if (c >= class_names_.size()) throw DataError("sample '" + sample.id + "' has unknown class id");
  if (samples_.empty() && feature_dim_ == 0) {
    feature_dim_ = sample.features.size();
  } else if (sample.features.size() != feature_dim_) {
    throw DataError("sample '" + sample.id + "' has feature dimension " +
                    std::to_string(sample.features.size()) + ", expected " +
                    std::to_string(feature_dim_));
  }
  samples_.push_back(std::move(sample));
}

std::vector<ClassId> Dataset::present_classes() const {
  std::set<ClassId> seen;
  for (const Sample& s : samples_) seen.insert(s.labels.begin(), s.labels.end());
  return {seen.begin(), seen.end()};
}

Dataset Dataset::empty_like() const {
  Dataset out;
  out.class_names_ = class_names_;
  out.class_index_ = class_index_;
  out.feature_dim_ = feature_dim_;
  return out;
}

std::size_t LabelVector::count() const {
  return static_cast<std::size_t>(std::count(values.begin(), values.end(), std::uint8_t{1}));
}

LabelVector encode_labels(const Sample& sample, std::span<const ClassId> label_set) {
  LabelVector out;
  out.values.resize(label_set.size(), 0);
  for (std::size_t j = 0; j < label_set.size(); ++j)
    if (sample.has_label(label_set[j])) out.values[j] = 1;
  if (out.count() == 0)
    throw EmptyRestriction("sample '" + sample.id + "' carries none of the episode labels");
  return out;
}

namespace {

Tensor stack_features(const std::vector<EpisodeSample>& samples) {
  require(!samples.empty(), "cannot stack an empty sample list");
  const std::size_t dim = samples.front().features.size();
  std::vector<double> data;
  data.reserve(samples.size() * dim);
  for (const auto& s : samples) data.insert(data.end(), s.features.begin(), s.features.end());
  return Tensor(samples.size(), dim, std::move(data));
}

Tensor stack_labels(const std::vector<EpisodeSample>& samples, std::size_t way) {
  require(!samples.empty(), "cannot stack an empty sample list");
  Tensor out(samples.size(), way);
  for (std::size_t i = 0; i < samples.size(); ++i)
    for (std::size_t j = 0; j < way; ++j) out(i, j) = samples[i].labels[j] ? 1.0 : 0.0;
  return out;
}

// First `take` entries of `pool` become a uniform draw without replacement.
void partial_shuffle(std::vector<std::size_t>& pool, std::size_t take, Rng& rng) {
  for (std::size_t i = 0; i < take && i + 1 < pool.size(); ++i) {
    std::uniform_int_distribution<std::size_t> pick(i, pool.size() - 1);
    std::swap(pool[i], pool[pick(rng)]);
  }
}

EpisodeSample make_episode_sample(const Dataset& dataset, std::size_t index,
                                  std::span<const ClassId> label_set) {
  const Sample& s = dataset.samples()[index];
  return EpisodeSample{index, s.features, encode_labels(s, label_set)};
}

}  // namespace

Tensor Episode::support_features() const { return stack_features(support); }
Tensor Episode::query_features() const { return stack_features(query); }
Tensor Episode::support_labels() const { return stack_labels(support, way); }
Tensor Episode::query_labels() const { return stack_labels(query, way); }

std::size_t default_query_count(std::size_t way) { return std::max<std::size_t>(1, way / 2); }

Episode sample_episode(const Dataset& dataset, const EpisodeSpec& spec, Rng& rng) {
  require(spec.way >= 1, "way must be at least 1");
  require(spec.shot >= 1, "shot must be at least 1");
  require(spec.query_count >= 1, "query count must be at least 1");

  const auto& samples = dataset.samples();
  std::vector<std::vector<std::size_t>> members(dataset.class_names().size());
  for (std::size_t i = 0; i < samples.size(); ++i)
    for (ClassId c : samples[i].labels) members[c].push_back(i);

  std::size_t present = 0;
  std::vector<std::size_t> eligible;
  for (std::size_t c = 0; c < members.size(); ++c) {
    if (!members[c].empty()) ++present;
    if (members[c].size() >= spec.shot) eligible.push_back(c);
  }
  if (present < spec.way) {
    throw InsufficientClasses("need " + std::to_string(spec.way) + " classes, dataset has " +
                              std::to_string(present));
  }
  if (eligible.size() < spec.way) {
    throw InsufficientShots("need " + std::to_string(spec.way) + " classes with at least " +
                            std::to_string(spec.shot) + " samples, found " +
                            std::to_string(eligible.size()));
  }

  partial_shuffle(eligible, spec.way, rng);
  Episode ep;
  ep.way = spec.way;
  ep.shot = spec.shot;
  for (std::size_t j = 0; j < spec.way; ++j) ep.label_set.push_back(static_cast<ClassId>(eligible[j]));

  // Classes are visited in the sampled order; a sample already drawn for an
  // earlier class counts toward every class it carries.
  std::vector<std::uint8_t> in_support(samples.size(), 0);
  std::vector<std::size_t> support_idx;
  for (ClassId c : ep.label_set) {
    std::size_t covered = 0;
    for (std::size_t idx : support_idx)
      if (samples[idx].has_label(c)) ++covered;
    if (covered >= spec.shot) continue;
    std::vector<std::size_t> candidates;
    for (std::size_t idx : members[c])
      if (!in_support[idx]) candidates.push_back(idx);
    const std::size_t need = spec.shot - covered;
    require(candidates.size() >= need, "class cannot reach its shot count");
    partial_shuffle(candidates, need, rng);
    for (std::size_t k = 0; k < need; ++k) {
      in_support[candidates[k]] = 1;
      support_idx.push_back(candidates[k]);
    }
  }

  std::vector<std::size_t> residual;
  for (std::size_t i = 0; i < samples.size(); ++i) {
    if (in_support[i]) continue;
    const bool relevant = std::any_of(ep.label_set.begin(), ep.label_set.end(),
                                      [&](ClassId c) { return samples[i].has_label(c); });
    if (relevant) residual.push_back(i);
  }
  if (residual.size() < spec.query_count) {
    throw InsufficientShots("only " + std::to_string(residual.size()) +
                            " residual samples available for " +
                            std::to_string(spec.query_count) + " queries");
  }
  partial_shuffle(residual, spec.query_count, rng);

  for (std::size_t idx : support_idx) ep.support.push_back(make_episode_sample(dataset, idx, ep.label_set));
  for (std::size_t k = 0; k < spec.query_count; ++k)
    ep.query.push_back(make_episode_sample(dataset, residual[k], ep.label_set));
  return ep;
}

void validate_episode(const Episode& episode, const Dataset& dataset) {
  require(episode.label_set.size() == episode.way, "label set size differs from way");
  std::set<ClassId> distinct(episode.label_set.begin(), episode.label_set.end());
  require(distinct.size() == episode.way, "label set has duplicates");
  for (std::size_t j = 0; j < episode.way; ++j) {
    std::size_t covering = 0;
    for (const auto& s : episode.support) covering += s.labels[j] ? 1 : 0;
    require(covering >= episode.shot, "class " + dataset.class_names()[episode.label_set[j]] +
                                          " has fewer than K supports");
  }
  std::set<std::size_t> support_idx;
  for (const auto& s : episode.support) {
    require(support_idx.insert(s.index).second, "support sample repeated");
    require(s.labels.count() >= 1, "support sample with empty restricted labels");
    require(encode_labels(dataset.samples()[s.index], episode.label_set).values == s.labels.values,
            "support labels are not the restriction of the source labels");
  }
  for (const auto& q : episode.query) {
    require(support_idx.count(q.index) == 0, "sample appears in both support and query");
    require(q.labels.count() >= 1, "query sample with empty restricted labels");
    require(q.labels.size() == episode.way, "query label vector has wrong length");
  }
}

DatasetSplit split_dataset(const Dataset& dataset, double train_fraction, double val_fraction,
                           Rng& rng) {
  if (!(train_fraction > 0.0 && train_fraction < 1.0))
    throw ConfigError("train fraction must lie in (0, 1)");
  if (!(val_fraction >= 0.0 && val_fraction < 1.0))
    throw ConfigError("validation fraction must lie in [0, 1)");
  if (train_fraction + val_fraction >= 1.0)
    throw ConfigError("train and validation fractions must sum to less than 1");

  DatasetSplit out{dataset.empty_like(), dataset.empty_like(), dataset.empty_like()};
  const std::size_t n = dataset.class_names().size();
  if (n == 0) return out;

  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  partial_shuffle(order, n, rng);
  const auto n_train = static_cast<std::size_t>(std::floor(n * train_fraction + 1e-9));
  const auto n_val = static_cast<std::size_t>(std::floor(n * val_fraction + 1e-9));

  // 0 = train, 1 = val, 2 = test
  std::vector<int> part(n, 2);
  for (std::size_t k = 0; k < n; ++k) {
    if (k < n_train) part[order[k]] = 0;
    else if (k < n_train + n_val) part[order[k]] = 1;
  }
  Dataset* targets[] = {&out.train, &out.val, &out.test};
  for (const Sample& s : dataset.samples()) {
    const int p = part[s.labels.front()];
    const bool single = std::all_of(s.labels.begin(), s.labels.end(),
                                    [&](ClassId c) { return part[c] == p; });
    if (single) targets[p]->add(s);
  }
  return out;
}

}  // namespace mlfsl
