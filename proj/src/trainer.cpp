// SPDX-License-Identifier: Apache-2.0
#include "mlfsl/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <numeric>
#include <optional>
#include <set>

#include "mlfsl/data_synth.hpp"
#include "mlfsl/errors.hpp"
#include "mlfsl/nlc.hpp"

namespace mlfsl {

using nlohmann::json;

namespace {

constexpr std::uint64_t kInitStream = 0x1417;
constexpr std::uint64_t kSplitStream = 0x5417;
constexpr std::uint64_t kEvalStream = 0xe7a1;

struct BoundModel {
  Mlp::Bound embedding;
  Mlp::Bound relation;
  Mlp::Bound count;
};

BoundModel bind(const Model& model, ad::Tape& tape, bool trainable) {
  BoundModel b;
  b.embedding = model.embedding.bind(tape, trainable);
  if (!model.relation.empty()) b.relation = model.relation.bind(tape, trainable);
  if (!model.count.empty()) b.count = model.count.bind(tape, trainable);
  return b;
}

std::vector<ad::Var> bound_parameters(const Model& model, const BoundModel& b) {
  std::vector<ad::Var> out = model.embedding.bound_parameters(b.embedding);
  if (!model.relation.empty()) {
    auto r = model.relation.bound_parameters(b.relation);
    out.insert(out.end(), r.begin(), r.end());
  }
  if (!model.count.empty()) {
    auto c = model.count.bound_parameters(b.count);
    out.insert(out.end(), c.begin(), c.end());
  }
  return out;
}

Tensor stacked_features(const Episode& ep) {
  const std::size_t dim = ep.support.front().features.size();
  std::vector<double> data;
  data.reserve((ep.support.size() + ep.query.size()) * dim);
  for (const auto& s : ep.support) data.insert(data.end(), s.features.begin(), s.features.end());
  for (const auto& q : ep.query) data.insert(data.end(), q.features.begin(), q.features.end());
  return Tensor(ep.support.size() + ep.query.size(), dim, std::move(data));
}

std::vector<std::size_t> label_counts(const std::vector<EpisodeSample>& samples) {
  std::vector<std::size_t> out;
  out.reserve(samples.size());
  for (const auto& s : samples) out.push_back(s.labels.count());
  return out;
}

struct Forward {
  heads::HeadOutput head;
  std::optional<ad::Var> count_logits;
  std::optional<ad::Var> count_loss;
};

Forward forward_episode(const Model& model, const BoundModel& bound, ad::Tape& tape,
                        const Episode& ep, bool with_loss) {
  require(ep.way == model.way, "episode way " + std::to_string(ep.way) +
                                   " differs from the model's " + std::to_string(model.way));
  const std::size_t ns = ep.support.size();
  const std::size_t nq = ep.query.size();
  ad::Var embeddings = embed(bound.embedding, tape.constant(stacked_features(ep)));
  const Tensor support_labels = ep.support_labels();
  const Tensor query_labels = with_loss ? ep.query_labels() : Tensor();

  Forward f;
  f.head = heads::run_head(model.head, model.relation.empty() ? nullptr : &bound.relation,
                           embeddings, ns, support_labels, query_labels);
  if (model.nlc) {
    std::vector<std::size_t> s_idx(ns), q_idx(nq);
    std::iota(s_idx.begin(), s_idx.end(), std::size_t{0});
    std::iota(q_idx.begin(), q_idx.end(), ns);
    ad::Var support = ad::gather_rows(embeddings, s_idx);
    ad::Var query = ad::gather_rows(embeddings, q_idx);
    f.count_logits = nlc::pair_logits(bound.count, support, query, nlc::context_vector(support));
    if (with_loss) {
      const auto targets = nlc::combined_counts(label_counts(ep.support), label_counts(ep.query));
      f.count_loss = nlc::count_loss(*f.count_logits, targets, model.way);
    }
  }
  return f;
}

void check_finite(Model& model, std::size_t episode) {
  for (Tensor* p : model.parameters())
    if (!p->all_finite())
      throw NumericalError("parameters became non-finite at episode " + std::to_string(episode));
}

}  // namespace

std::vector<Tensor*> Model::parameters() {
  std::vector<Tensor*> out = embedding.parameters();
  if (!relation.empty()) {
    auto r = relation.parameters();
    out.insert(out.end(), r.begin(), r.end());
  }
  if (!count.empty()) {
    auto c = count.parameters();
    out.insert(out.end(), c.begin(), c.end());
  }
  return out;
}

Model init_model(const RunConfig& config, std::size_t feature_dim) {
  validate(config);
  require(feature_dim > 0, "feature dimension must be positive");
  Rng rng(derive_seed(config.seed, kInitStream));
  Model m;
  m.head = head_options(config);
  m.way = config.way;
  m.nlc = config.nlc;
  m.seed = config.seed;
  m.split_seed = config.split_seed;
  const std::size_t n = config.embedding_dim;
  m.embedding = Mlp({feature_dim, config.hidden, config.hidden, n}, rng);
  if (m.head.kind == heads::HeadKind::kRelation) m.relation = Mlp({2 * n, 64, 8, 1}, rng);
  if (m.nlc) m.count = Mlp(nlc::count_net_widths(n, config.way, config.hidden), rng);
  return m;
}

json checkpoint_json(const Model& m) {
  json j;
  j["format"] = "mlfsl-checkpoint";
  j["version"] = 1;
  j["head"] = std::string(heads::head_name(m.head.kind));
  j["relation_loss"] = m.head.relation_loss == heads::RelationLoss::kMse ? "mse" : "bce";
  j["alpha"] = m.head.alpha;
  j["sigma"] = m.head.sigma;
  j["knn"] = m.head.k_nn;
  j["way"] = m.way;
  j["nlc"] = m.nlc;
  j["seed"] = m.seed;
  j["split_seed"] = m.split_seed;
  j["episodes"] = m.episodes_trained;
  j["train_classes"] = m.train_classes;
  j["embedding"] = m.embedding.to_json();
  j["relation"] = m.relation.empty() ? json(nullptr) : m.relation.to_json();
  j["count"] = m.count.empty() ? json(nullptr) : m.count.to_json();
  return j;
}

Model model_from_checkpoint(const json& j) {
  try {
    if (j.at("format") != "mlfsl-checkpoint") throw DataError("not an mlfsl checkpoint");
    Model m;
    m.head.kind = heads::parse_head_kind(j.at("head").get<std::string>());
    m.head.relation_loss = j.at("relation_loss") == "mse" ? heads::RelationLoss::kMse
                                                          : heads::RelationLoss::kBce;
    m.head.alpha = j.at("alpha").get<double>();
    m.head.sigma = j.at("sigma").get<double>();
    m.head.k_nn = j.at("knn").get<std::size_t>();
    m.way = j.at("way").get<std::size_t>();
    m.nlc = j.at("nlc").get<bool>();
    m.seed = j.at("seed").get<std::uint64_t>();
    m.split_seed = j.at("split_seed").get<std::uint64_t>();
    m.episodes_trained = j.at("episodes").get<std::size_t>();
    m.train_classes = j.at("train_classes").get<std::vector<std::string>>();
    m.embedding = Mlp::from_json(j.at("embedding"));
    if (!j.at("relation").is_null()) m.relation = Mlp::from_json(j.at("relation"));
    if (!j.at("count").is_null()) m.count = Mlp::from_json(j.at("count"));
    if (m.head.kind == heads::HeadKind::kRelation && m.relation.empty())
      throw DataError("relation checkpoint without a relation module");
    if (m.nlc && m.count.empty()) throw DataError("NLC checkpoint without a count network");
    return m;
  } catch (const json::exception& e) {
    throw DataError(std::string("malformed checkpoint: ") + e.what());
  }
}

void save_checkpoint(const Model& model, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write checkpoint " + path.string());
  out << checkpoint_json(model).dump(1) << '\n';
}

Model load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open checkpoint " + path.string());
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    throw DataError("malformed checkpoint " + path.string() + ": " + e.what());
  }
  return model_from_checkpoint(j);
}

Dataset load_dataset(const RunConfig& config) {
  if (!config.data.empty()) return synth::load_jsonl(config.data);
  return synth::generate(config.synth);
}

DatasetSplit make_split(const RunConfig& config, const Dataset& dataset) {
  Rng rng(derive_seed(config.split_seed, kSplitStream));
  return split_dataset(dataset, config.train_fraction, config.val_fraction, rng);
}

TrainResult train(const RunConfig& config, const Dataset& train_split) {
  validate(config);
  if (train_split.empty()) throw DataError("training split is empty");
  TrainResult result;
  Model& model = result.model;
  model = init_model(config, train_split.feature_dim());
  for (ClassId c : train_split.present_classes())
    model.train_classes.push_back(train_split.class_names()[c]);

  Adam adam(AdamOptions{config.learning_rate, 0.9, 0.999, 1e-8, config.halve_every});
  const EpisodeSpec spec{config.way, config.shot, query_count(config)};
  std::vector<Tensor*> params = model.parameters();
  result.log.reserve(config.episodes);

  for (std::size_t e = 0; e < config.episodes; ++e) {
    Rng rng(derive_seed(config.seed, e));
    const Episode ep = sample_episode(train_split, spec, rng);

    ad::Tape tape;
    const BoundModel bound = bind(model, tape, true);
    Forward f;
    try {
      f = forward_episode(model, bound, tape, ep, true);
    } catch (const NumericalError& err) {
      throw NumericalError("episode " + std::to_string(e) + ": " + err.what());
    }
    ad::Var loss = f.head.loss;
    EpisodeLog row;
    row.episode = e;
    row.head_loss = f.head.loss.value().item();
    if (f.count_loss) {
      row.count_loss = f.count_loss->value().item();
      loss = nlc::joint_loss(f.head.loss, *f.count_loss, config.lambda);
    }
    row.loss = loss.value().item();
    row.learning_rate = adam.effective_learning_rate(e);

    tape.backward(loss);
    std::vector<Tensor> grads;
    grads.reserve(params.size());
    for (const ad::Var& v : bound_parameters(model, bound)) grads.push_back(tape.grad(v));
    adam.step(params, grads, e);
    check_finite(model, e);
    result.log.push_back(row);
  }
  model.episodes_trained = config.episodes;
  return result;
}

TrainResult train(const RunConfig& config) {
  validate(config);
  const Dataset dataset = load_dataset(config);
  const DatasetSplit split = make_split(config, dataset);
  return train(config, split.train);
}

void write_loss_csv(const std::vector<EpisodeLog>& log, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write loss log " + path.string());
  out << "episode,loss,head_loss,count_loss,learning_rate\n";
  out << std::setprecision(10);
  for (const auto& r : log)
    out << r.episode << ',' << r.loss << ',' << r.head_loss << ',' << r.count_loss << ','
        << r.learning_rate << '\n';
}

Prediction predict(const Model& model, const Episode& episode) {
  ad::Tape tape;
  const BoundModel bound = bind(model, tape, false);
  const Forward f = forward_episode(model, bound, tape, episode, false);
  Prediction p;
  const Tensor& scores = f.head.scores.value();
  for (std::size_t q = 0; q < scores.rows(); ++q)
    p.scores.emplace_back(scores.row_span(q).begin(), scores.row_span(q).end());
  if (f.count_logits) {
    const Tensor& logits = f.count_logits->value();
    const std::size_t ns = episode.support.size();
    const auto support_counts = label_counts(episode.support);
    const auto predicted = nlc::argmax_counts(logits);
    const Tensor probs = nlc::pair_probabilities(logits);
    for (std::size_t q = 0; q < episode.query.size(); ++q) {
      const std::span<const std::size_t> m(predicted.data() + q * ns, ns);
      std::vector<double> rows(probs.values().begin() + static_cast<std::ptrdiff_t>(q * ns * probs.cols()),
                               probs.values().begin() + static_cast<std::ptrdiff_t>((q + 1) * ns * probs.cols()));
      const Tensor query_probs(ns, probs.cols(), std::move(rows));
      const auto hist = nlc::count_histogram(m, support_counts, model.way);
      const auto vote = nlc::vote_label_count(hist, query_probs, support_counts, model.way);
      p.counts.push_back(vote.count);
      p.count_fallback.push_back(vote.fallback);
    }
  }
  return p;
}

EvaluationRun evaluate(const RunConfig& config, const Model& model, const Dataset& split) {
  validate(config);
  if (heads::parse_head_kind(config.head) != model.head.kind)
    throw ConfigError("checkpoint head '" + std::string(heads::head_name(model.head.kind)) +
                      "' does not match requested head '" + config.head + "'");
  if (config.way != model.way) throw ConfigError("checkpoint was trained for a different way");
  const EpisodeSpec spec{config.way, config.shot, query_count(config)};
  EvaluationRun run;
  run.episodes.reserve(config.eval_episodes);
  for (std::size_t e = 0; e < config.eval_episodes; ++e) {
    Rng rng(derive_seed(derive_seed(config.seed, kEvalStream), e));
    const Episode ep = sample_episode(split, spec, rng);
    const Prediction p = predict(model, ep);
    eval::EpisodeResult r;
    for (std::size_t q = 0; q < ep.query.size(); ++q) {
      eval::QueryResult qr;
      qr.scores = p.scores[q];
      qr.truth = ep.query[q].labels;
      if (!p.counts.empty()) qr.predicted_count = p.counts[q];
      r.queries.push_back(std::move(qr));
    }
    run.episodes.push_back(std::move(r));
  }
  run.metrics = eval::summarize(run.episodes, config.seed);
  return run;
}

EvaluationRun evaluate(const RunConfig& config, const Model& model) {
  validate(config);
  const Dataset dataset = load_dataset(config);
  if (dataset.feature_dim() != model.embedding.input_dim())
    throw DataError("dataset has " + std::to_string(dataset.feature_dim()) +
                    " features but the checkpoint expects " +
                    std::to_string(model.embedding.input_dim()) +
                    "; evaluate with the data options used for training");
  RunConfig split_config = config;
  split_config.split_seed = model.split_seed;
  const DatasetSplit split = make_split(split_config, dataset);
  const Dataset& target = config.split == "val"     ? split.val
                          : config.split == "train" ? split.train
                                                    : split.test;

  const std::set<std::string> trained(model.train_classes.begin(), model.train_classes.end());
  for (ClassId c : target.present_classes()) {
    if (trained.count(target.class_names()[c]) != 0)
      throw DataError("split leakage: class '" + target.class_names()[c] +
                      "' was used for training");
  }
  return evaluate(config, model, target);
}

}  // namespace mlfsl
