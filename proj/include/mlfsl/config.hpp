// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <string>

#include "mlfsl/data_synth.hpp"
#include "mlfsl/heads.hpp"

namespace mlfsl {

// Everything a run needs. The text form is one `key = value` per line; the
// keys match the long CLI flag names.
struct RunConfig {
  std::string command = "train";  // train | eval | synth | selftest

  // Dataset: a JSONL file, or the synthetic generator when `data` is empty.
  std::string data;
  synth::SynthConfig synth{};

  std::string head = "proto";
  std::string relation_loss = "bce";  // bce | mse
  std::size_t way = 5;
  std::size_t shot = 1;
  std::size_t queries = 0;  // 0: half the way, at least one

  std::size_t episodes = 10000;
  std::size_t eval_episodes = 1000;
  std::uint64_t seed = 1;
  std::uint64_t split_seed = 7;
  double train_fraction = 0.5;
  double val_fraction = 0.2;
  std::string split = "test";  // split evaluated by `eval`: test | val (train is refused)

  bool nlc = false;
  double lambda = 0.01;
  double alpha = 0.99;
  double sigma = 1.0;
  std::size_t knn = 10;

  std::size_t embedding_dim = 32;
  std::size_t hidden = 64;
  double learning_rate = 1e-3;
  std::size_t halve_every = 10000;

  std::string checkpoint;
  std::string out;       // metrics JSON (eval) or loss CSV (train)
  std::string csv;       // optional metrics CSV row (eval)

  bool operator==(const RunConfig&) const;
};

// Throws ConfigError describing the first invalid field.
void validate(const RunConfig& config);

heads::HeadOptions head_options(const RunConfig& config);
std::size_t query_count(const RunConfig& config);

// Applies one `key = value` setting; ConfigError on unknown keys or bad values.
void apply_setting(RunConfig& config, const std::string& key, const std::string& value);

RunConfig parse_config(std::istream& in);
RunConfig load_config(const std::string& path);
void apply_config_file(RunConfig& config, const std::string& path);
std::string to_config_text(const RunConfig& config);

}  // namespace mlfsl
