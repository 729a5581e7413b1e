// SPDX-License-Identifier: Apache-2.0
#include "mlfsl/data_synth.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <random>
#include <set>
#include <string>

#include "json.hpp"
#include "mlfsl/errors.hpp"
#include "mlfsl/rng.hpp"

namespace mlfsl::synth {

using json = nlohmann::json;

void validate(const SynthConfig& c) {
  if (c.num_classes == 0) throw ConfigError("num_classes must be positive");
  if (c.feature_dim == 0) throw ConfigError("feature_dim must be positive");
  if (c.samples_per_class == 0) throw ConfigError("samples_per_class must be positive");
  if (c.max_labels == 0) throw ConfigError("max_labels must be at least 1");
  if (c.max_labels > c.num_classes) throw ConfigError("max_labels exceeds num_classes");
  if (!(c.separation > 0.0)) throw ConfigError("separation must be positive");
  if (!(c.noise >= 0.0)) throw ConfigError("noise must be non-negative");
  if (!(c.cooccurrence >= 0.0 && c.cooccurrence <= 1.0))
    throw ConfigError("cooccurrence must lie in [0, 1]");
}

namespace {

// Ring lattice over a random class permutation: each class is linked to the
// h nearest classes on either side.
std::vector<std::vector<ClassId>> make_graph(std::size_t n, std::size_t max_labels, Rng& rng) {
  std::vector<ClassId> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = static_cast<ClassId>(i);
  std::shuffle(order.begin(), order.end(), rng);
  const std::size_t half = std::max<std::size_t>(1, max_labels / 2);
  std::vector<std::set<ClassId>> adj(n);
  if (n > 1) {
    for (std::size_t p = 0; p < n; ++p)
      for (std::size_t d = 1; d <= half; ++d) {
        const ClassId a = order[p];
        const ClassId b = order[(p + d) % n];
        if (a == b) continue;
        adj[a].insert(b);
        adj[b].insert(a);
      }
  }
  std::vector<std::vector<ClassId>> out(n);
  for (std::size_t i = 0; i < n; ++i) out[i].assign(adj[i].begin(), adj[i].end());
  return out;
}

}  // namespace

SynthTask generate_task(const SynthConfig& config) {
  validate(config);
  Rng rng(mix_seed(config.seed));
  SynthTask task;
  const std::size_t n = config.num_classes;
  const std::size_t m = config.feature_dim;

  std::normal_distribution<double> unit(0.0, 1.0);
  task.centers.assign(n, std::vector<double>(m));
  for (auto& center : task.centers) {
    double norm = 0.0;
    do {
      norm = 0.0;
      for (double& v : center) {
        v = unit(rng);
        norm += v * v;
      }
    } while (norm == 0.0);
    norm = std::sqrt(norm);
    for (double& v : center) v *= config.separation / norm;
  }
  task.cooccurrence_graph = make_graph(n, config.max_labels, rng);

  for (std::size_t c = 0; c < n; ++c) task.dataset.intern("c" + std::to_string(c));

  std::uniform_int_distribution<std::size_t> label_count(1, config.max_labels);
  std::bernoulli_distribution use_graph(config.cooccurrence);
  std::normal_distribution<double> noise(0.0, 1.0);
  std::size_t serial = 0;
  for (std::size_t c = 0; c < n; ++c) {
    for (std::size_t k = 0; k < config.samples_per_class; ++k) {
      const std::size_t want = label_count(rng);
      std::vector<ClassId> labels{static_cast<ClassId>(c)};
      while (labels.size() < want) {
        auto taken = [&](ClassId x) {
          return std::find(labels.begin(), labels.end(), x) != labels.end();
        };
        std::vector<ClassId> pool;
        if (use_graph(rng)) {
          for (ClassId l : labels)
            for (ClassId nb : task.cooccurrence_graph[l])
              if (!taken(nb) && std::find(pool.begin(), pool.end(), nb) == pool.end())
                pool.push_back(nb);
        }
        if (pool.empty()) {
          for (std::size_t x = 0; x < n; ++x)
            if (!taken(static_cast<ClassId>(x))) pool.push_back(static_cast<ClassId>(x));
        }
        std::uniform_int_distribution<std::size_t> pick(0, pool.size() - 1);
        labels.push_back(pool[pick(rng)]);
      }

      std::vector<double> features(m, 0.0);
      for (ClassId l : labels)
        for (std::size_t d = 0; d < m; ++d) features[d] += task.centers[l][d];
      const double inv = 1.0 / static_cast<double>(labels.size());
      for (double& v : features) v *= inv;
      if (config.noise > 0.0)
        for (double& v : features) v += config.noise * noise(rng);

      task.dataset.add(Sample{"s" + std::to_string(serial++), std::move(features), std::move(labels)});
    }
  }
  return task;
}

Dataset generate(const SynthConfig& config) { return generate_task(config).dataset; }

Dataset read_jsonl(std::istream& in) {
  Dataset out;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    const std::string where = "line " + std::to_string(line_no) + ": ";
    json j;
    try {
      j = json::parse(line);
    } catch (const json::parse_error& e) {
      throw DataError(where + "malformed JSON (" + e.what() + ")");
    }
    if (!j.is_object()) throw DataError(where + "expected a JSON object");
    if (!j.contains("features") || !j["features"].is_array())
      throw DataError(where + "missing \"features\" array");
    if (!j.contains("labels") || !j["labels"].is_array())
      throw DataError(where + "missing \"labels\" array");
    if (j["labels"].empty()) throw DataError(where + "empty \"labels\"");

    Sample s;
    if (!j.contains("id") || !j["id"].is_string()) throw DataError(where + "missing string \"id\"");
    s.id = j["id"].get<std::string>();
    for (const auto& v : j["features"]) {
      if (!v.is_number()) throw DataError(where + "non-numeric feature");
      s.features.push_back(v.get<double>());
    }
    for (const auto& l : j["labels"]) {
      if (!l.is_string()) throw DataError(where + "labels must be strings");
      s.labels.push_back(out.intern(l.get<std::string>()));
    }
    try {
      out.add(std::move(s));
    } catch (const DataError& e) {
      throw DataError(where + e.what());
    }
  }
  return out;
}

Dataset load_jsonl(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open dataset file " + path.string());
  return read_jsonl(in);
}

void write_jsonl(const Dataset& dataset, std::ostream& out) {
  for (const Sample& s : dataset.samples()) {
    json labels = json::array();
    for (ClassId c : s.labels) labels.push_back(dataset.class_names()[c]);
    json j = {{"id", s.id}, {"features", s.features}, {"labels", std::move(labels)}};
    out << j.dump() << '\n';
  }
}

void write_jsonl(const Dataset& dataset, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write dataset file " + path.string());
  write_jsonl(dataset, out);
}

}  // namespace mlfsl::synth
