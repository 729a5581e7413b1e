// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "json.hpp"
#include "mlfsl/config.hpp"
#include "mlfsl/embedding.hpp"
#include "mlfsl/episodes.hpp"
#include "mlfsl/evaluation.hpp"
#include "mlfsl/heads.hpp"

namespace mlfsl {

// Embedding network plus the head-specific and count networks trained with it.
struct Model {
  heads::HeadOptions head;
  std::size_t way = 0;
  bool nlc = false;
  Mlp embedding;
  Mlp relation;  // empty unless head is relation
  Mlp count;     // empty unless nlc

  // Run metadata recorded in checkpoints.
  std::uint64_t seed = 0;
  std::uint64_t split_seed = 0;
  std::size_t episodes_trained = 0;
  std::vector<std::string> train_classes;

  std::vector<Tensor*> parameters();
};

Model init_model(const RunConfig& config, std::size_t feature_dim);

nlohmann::json checkpoint_json(const Model& model);
Model model_from_checkpoint(const nlohmann::json& j);
void save_checkpoint(const Model& model, const std::filesystem::path& path);
Model load_checkpoint(const std::filesystem::path& path);

struct EpisodeLog {
  std::size_t episode = 0;
  double loss = 0.0;
  double head_loss = 0.0;
  double count_loss = 0.0;
  double learning_rate = 0.0;
};

struct TrainResult {
  Model model;
  std::vector<EpisodeLog> log;
};

// Loads or generates the dataset named by the config.
Dataset load_dataset(const RunConfig& config);
DatasetSplit make_split(const RunConfig& config, const Dataset& dataset);

// Episodic training on `train`. Throws NumericalError naming the episode when
// a loss, gradient or parameter stops being finite.
TrainResult train(const RunConfig& config, const Dataset& train_split);
// Loads the dataset, splits it and trains on the training partition.
TrainResult train(const RunConfig& config);

void write_loss_csv(const std::vector<EpisodeLog>& log, const std::filesystem::path& path);

struct Prediction {
  std::vector<std::vector<double>> scores;  // per query, length way
  std::vector<std::size_t> counts;          // voted label counts, empty without NLC
  std::vector<bool> count_fallback;
};

// Scores (higher is better) for every query of the episode; NLC votes too
// when the model has a count network.
Prediction predict(const Model& model, const Episode& episode);

struct EvaluationRun {
  std::vector<eval::EpisodeResult> episodes;
  eval::Metrics metrics;
};

// Samples eval_episodes episodes from `split` (seeded per episode index).
EvaluationRun evaluate(const RunConfig& config, const Model& model, const Dataset& split);

// Picks the split named by config.split, refuses it if it shares classes with
// the model's training classes, and evaluates.
EvaluationRun evaluate(const RunConfig& config, const Model& model);

}  // namespace mlfsl
