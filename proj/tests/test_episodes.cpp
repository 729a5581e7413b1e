// SPDX-License-Identifier: Apache-2.0
#include <algorithm>
#include <cmath>
#include <set>
#include <vector>

#include "doctest.h"
#include "mlfsl/data_synth.hpp"
#include "mlfsl/episodes.hpp"
#include "mlfsl/errors.hpp"
#include "mlfsl/rng.hpp"

using namespace mlfsl;

namespace {

void add(Dataset& ds, const std::string& id, std::vector<std::string> labels, double x = 0.0) {
  Sample s;
  s.id = id;
  s.features = {x, 1.0};
  for (const auto& l : labels) s.labels.push_back(ds.intern(l));
  ds.add(std::move(s));
}

Dataset single_label(std::size_t classes, std::size_t per_class) {
  Dataset ds;
  for (std::size_t c = 0; c < classes; ++c)
    for (std::size_t i = 0; i < per_class; ++i)
      add(ds, "c" + std::to_string(c) + "_" + std::to_string(i), {"c" + std::to_string(c)},
          static_cast<double>(i));
  return ds;
}

std::vector<std::size_t> indices(const std::vector<EpisodeSample>& xs) {
  std::vector<std::size_t> out;
  for (const auto& x : xs) out.push_back(x.index);
  return out;
}

Dataset multi_label(std::size_t max_labels, double cooccurrence, std::uint64_t seed) {
  synth::SynthConfig cfg;
  cfg.num_classes = 12;
  cfg.feature_dim = 4;
  cfg.samples_per_class = 20;
  cfg.max_labels = max_labels;
  cfg.cooccurrence = cooccurrence;
  cfg.seed = seed;
  return synth::generate(cfg);
}

}  // namespace

TEST_CASE("encode_labels examples") {
  Dataset ds;
  const ClassId a = ds.intern("a"), b = ds.intern("b"), c = ds.intern("c"), d = ds.intern("d");
  const std::vector<ClassId> set{a, b, c};
  CHECK(encode_labels(Sample{"x", {0}, {a}}, set).values == std::vector<std::uint8_t>{1, 0, 0});
  CHECK(encode_labels(Sample{"x", {0}, {a, c}}, set).values == std::vector<std::uint8_t>{1, 0, 1});
  CHECK_THROWS_AS(encode_labels(Sample{"x", {0}, {d}}, set), EmptyRestriction);
}

TEST_CASE("dataset rejects malformed samples") {
  Dataset ds;
  const ClassId a = ds.intern("a");
  CHECK_THROWS_AS(ds.add(Sample{"e", {1.0}, {}}), DataError);
  CHECK_THROWS_AS(ds.add(Sample{"dup", {1.0}, {a, a}}), DataError);
  ds.add(Sample{"ok", {1.0, 2.0}, {a}});
  CHECK_THROWS_AS(ds.add(Sample{"dim", {1.0}, {a}}), DataError);
  CHECK_THROWS_AS(ds.add(Sample{"unknown", {1.0, 2.0}, {7}}), DataError);
}

TEST_CASE("single-label 3-way 5-shot support has exactly 15 samples") {
  const Dataset ds = single_label(6, 10);
  Rng rng(1);
  for (int i = 0; i < 20; ++i) {
    const Episode ep = sample_episode(ds, {3, 5, 2}, rng);
    CHECK(ep.support.size() == 15);
    validate_episode(ep, ds);
  }
}

TEST_CASE("default query count is half the way") {
  CHECK(default_query_count(10) == 5);
  CHECK(default_query_count(5) == 2);
  CHECK(default_query_count(3) == 1);
  CHECK(default_query_count(1) == 1);
}

TEST_CASE("support supersets enumerated by brute force on a toy dataset") {
  // Sample 0 carries both classes, so K = 1 can be met by one sample.
  Dataset ds;
  add(ds, "s0", {"a", "b"});
  add(ds, "s1", {"a"});
  add(ds, "s2", {"b"});
  add(ds, "s3", {"a"});
  add(ds, "s4", {"b"});
  const std::size_t n = ds.size(), way = 2, shot = 1;

  std::set<std::vector<std::size_t>> valid;
  for (unsigned mask = 1; mask < (1u << n); ++mask) {
    std::vector<std::size_t> subset;
    for (std::size_t i = 0; i < n; ++i)
      if (mask & (1u << i)) subset.push_back(i);
    if (subset.size() > way * shot) continue;
    bool covers = true;
    for (ClassId c = 0; c < 2; ++c) {
      std::size_t k = 0;
      for (std::size_t i : subset) k += ds.samples()[i].has_label(c) ? 1 : 0;
      covers = covers && k >= shot;
    }
    if (covers) valid.insert(subset);
  }

  std::set<std::vector<std::size_t>> seen;
  for (std::uint64_t seed = 0; seed < 400; ++seed) {
    Rng rng(seed);
    const Episode ep = sample_episode(ds, {way, shot, 1}, rng);
    auto s = indices(ep.support);
    std::sort(s.begin(), s.end());
    CHECK(valid.count(s) == 1);
    seen.insert(s);
  }
  CHECK(seen.count({0}) == 1);
  CHECK(seen.size() >= 2);
}

TEST_CASE("same seed gives the same episode") {
  const Dataset ds = multi_label(3, 0.5, 9);
  for (std::uint64_t seed : {1u, 2u, 77u}) {
    Rng r1(seed), r2(seed);
    const Episode a = sample_episode(ds, {5, 2, 3}, r1);
    const Episode b = sample_episode(ds, {5, 2, 3}, r2);
    CHECK(a.label_set == b.label_set);
    CHECK(indices(a.support) == indices(b.support));
    CHECK(indices(a.query) == indices(b.query));
    CHECK(a.support_features().values() == b.support_features().values());
  }
}

TEST_CASE("1000 multi-label episodes keep coverage, disjointness and size bounds") {
  const std::size_t max_labels = 3;
  const Dataset ds = multi_label(max_labels, 0.8, 4);
  Rng rng(17);
  const std::size_t way = 5, shot = 3;
  const auto lower = static_cast<std::size_t>(
      std::ceil(static_cast<double>(way * shot) / static_cast<double>(max_labels)));
  for (int e = 0; e < 1000; ++e) {
    const Episode ep = sample_episode(ds, {way, shot, default_query_count(way)}, rng);
    CHECK_NOTHROW(validate_episode(ep, ds));
    CHECK(ep.support.size() <= way * shot);
    CHECK(ep.support.size() >= lower);
    CHECK(ep.label_set.size() == way);
    for (std::size_t j = 0; j < way; ++j) {
      std::size_t covering = 0;
      for (const auto& s : ep.support) covering += s.labels[j] ? 1 : 0;
      CHECK(covering >= shot);
    }
    const auto support_idx = indices(ep.support);
    const std::set<std::size_t> sup(support_idx.begin(), support_idx.end());
    for (const auto& q : ep.query) {
      CHECK(sup.count(q.index) == 0);
      CHECK(q.labels.count() >= 1);
    }
  }
}

TEST_CASE("restricted labels drop classes outside the episode") {
  const Dataset ds = multi_label(3, 0.0, 5);
  Rng rng(3);
  const Episode ep = sample_episode(ds, {3, 1, 1}, rng);
  const Tensor y = ep.support_labels();
  for (std::size_t i = 0; i < ep.support.size(); ++i) {
    const Sample& src = ds.samples()[ep.support[i].index];
    for (std::size_t j = 0; j < ep.way; ++j) CHECK((y(i, j) == 1.0) == src.has_label(ep.label_set[j]));
  }
}

TEST_CASE("sampling errors") {
  const Dataset ds = single_label(3, 4);
  Rng rng(0);
  CHECK_THROWS_AS(sample_episode(ds, {4, 1, 1}, rng), InsufficientClasses);
  CHECK_THROWS_AS(sample_episode(ds, {3, 5, 1}, rng), InsufficientShots);
  CHECK_THROWS_AS(sample_episode(ds, {3, 4, 1}, rng), InsufficientShots);  // no query left
  CHECK_THROWS_AS(sample_episode(ds, {3, 1, 0}, rng), ContractViolation);
}

TEST_CASE("split of 10 classes at 0.5 / 0.2 is 5 / 2 / 3") {
  const Dataset ds = single_label(10, 3);
  Rng rng(8);
  const DatasetSplit s = split_dataset(ds, 0.5, 0.2, rng);
  CHECK(s.train.present_classes().size() == 5);
  CHECK(s.val.present_classes().size() == 2);
  CHECK(s.test.present_classes().size() == 3);
  CHECK(s.train.size() + s.val.size() + s.test.size() == ds.size());
}

TEST_CASE("cross-split samples are dropped and partitions share no class") {
  const Dataset ds = multi_label(3, 0.3, 12);
  Rng rng(2);
  const DatasetSplit s = split_dataset(ds, 0.5, 0.2, rng);
  const Dataset* parts[] = {&s.train, &s.val, &s.test};
  std::vector<std::set<ClassId>> classes;
  for (const Dataset* p : parts) {
    const auto pc = p->present_classes();
    classes.emplace_back(pc.begin(), pc.end());
  }
  for (std::size_t i = 0; i < 3; ++i)
    for (std::size_t j = i + 1; j < 3; ++j)
      for (ClassId c : classes[i]) CHECK(classes[j].count(c) == 0);
  CHECK(s.train.size() + s.val.size() + s.test.size() < ds.size());

  Dataset toy;
  add(toy, "x", {"a", "b"});
  add(toy, "y", {"a"});
  add(toy, "z", {"b"});
  Rng r(0);
  const DatasetSplit ts = split_dataset(toy, 0.5, 0.0, r);
  CHECK(ts.train.size() + ts.test.size() == 2);
}

TEST_CASE("split edge cases") {
  Rng rng(0);
  const DatasetSplit empty = split_dataset(Dataset{}, 0.5, 0.2, rng);
  CHECK(empty.train.empty());
  CHECK(empty.val.empty());
  CHECK(empty.test.empty());
  const Dataset ds = single_label(4, 2);
  CHECK_THROWS_AS(split_dataset(ds, 0.6, 0.4, rng), ConfigError);
  CHECK_THROWS_AS(split_dataset(ds, 0.0, 0.2, rng), ConfigError);
  CHECK_THROWS_AS(split_dataset(ds, 1.2, 0.0, rng), ConfigError);
}
