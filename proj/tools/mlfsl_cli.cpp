// SPDX-License-Identifier: Apache-2.0
// mlfsl: train, evaluate and check multi-label few-shot models.
#include <cstdio>
#include <fstream>
#include <iostream>
#include <map>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "mlfsl/config.hpp"
#include "mlfsl/data_synth.hpp"
#include "mlfsl/errors.hpp"
#include "mlfsl/evaluation.hpp"
#include "mlfsl/heads.hpp"
#include "mlfsl/selftest.hpp"
#include "mlfsl/trainer.hpp"

namespace {

using namespace mlfsl;

constexpr int kExitConfig = 1;
constexpr int kExitData = 2;
constexpr int kExitNumerical = 3;
constexpr int kExitChecksFailed = 4;

const std::vector<std::pair<std::string, std::string>> kValueFlags = {
    {"data", "JSONL dataset; synthetic data when omitted"},
    {"head", "proto | relation | lpn"},
    {"relation-loss", "bce | mse"},
    {"way", "classes per episode"},
    {"shot", "support samples per class"},
    {"queries", "queries per episode (0: way / 2, at least 1)"},
    {"episodes", "training episodes"},
    {"eval-episodes", "evaluation episodes"},
    {"seed", "run seed"},
    {"split-seed", "seed of the class split"},
    {"train-fraction", "share of classes used for training"},
    {"val-fraction", "share of classes used for validation"},
    {"split", "split evaluated by eval: test | val"},
    {"lambda", "weight of the label-count loss"},
    {"alpha", "propagation coefficient in (0, 1)"},
    {"sigma", "graph bandwidth"},
    {"knn", "graph neighbours"},
    {"embedding-dim", "embedding size"},
    {"hidden", "hidden width"},
    {"learning-rate", "Adam step size"},
    {"halve-every", "episodes between learning-rate halvings"},
    {"checkpoint", "model checkpoint path"},
    {"out", "output path (loss CSV, metrics JSON or JSONL)"},
    {"csv", "append a metrics CSV row here (eval)"},
    {"synth-classes", "synthetic classes"},
    {"synth-dim", "synthetic feature dimension"},
    {"synth-per-class", "synthetic samples per primary class"},
    {"synth-max-labels", "largest synthetic label set"},
    {"synth-separation", "distance of class centres from the origin"},
    {"synth-noise", "feature noise standard deviation"},
    {"synth-cooccurrence", "probability of drawing extra labels from the co-occurrence graph"},
    {"synth-seed", "generator seed"},
};

struct Invocation {
  std::string config_file;
  std::map<std::string, std::string> values;
  bool nlc = false;
  bool inject = false;
};

void add_run_options(CLI::App* app, Invocation& inv) {
  app->add_option("--config", inv.config_file, "key = value config file")->check(CLI::ExistingFile);
  for (const auto& [key, help] : kValueFlags) app->add_option("--" + key, inv.values[key], help);
  app->add_flag("--nlc", inv.nlc, "train and use the label-count network");
}

RunConfig build_config(const CLI::App* app, const Invocation& inv, const std::string& command) {
  RunConfig config;
  if (!inv.config_file.empty()) apply_config_file(config, inv.config_file);
  config.command = command;
  for (const auto& [key, help] : kValueFlags)
    if (app->count("--" + key) > 0) apply_setting(config, key, inv.values.at(key));
  if (inv.nlc) config.nlc = true;
  return config;
}

void write_text(const std::string& path, const std::string& text) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write " + path);
  out << text;
}

int run_train(RunConfig config) {
  if (config.checkpoint.empty()) throw ConfigError("train needs --checkpoint");
  validate(config);
  const TrainResult result = train(config);
  save_checkpoint(result.model, config.checkpoint);
  if (!config.out.empty()) write_loss_csv(result.log, config.out);
  if (!result.log.empty()) {
    const auto& last = result.log.back();
    std::printf("trained %zu episodes, final loss %.6g\n", result.log.size(), last.loss);
  } else {
    std::printf("no training episodes; wrote the initial model\n");
  }
  return 0;
}

int run_eval(const CLI::App* app, RunConfig config) {
  if (config.checkpoint.empty()) throw ConfigError("eval needs --checkpoint");
  const Model model = load_checkpoint(config.checkpoint);
  if (app->count("--head") == 0) config.head = std::string(heads::head_name(model.head.kind));
  if (app->count("--way") == 0) config.way = model.way;
  if (!config.nlc) config.nlc = model.nlc;
  validate(config);
  const EvaluationRun run = evaluate(config, model);
  const std::string text = eval::to_json(run.metrics).dump(2) + "\n";
  if (config.out.empty()) {
    std::cout << text;
  } else {
    write_text(config.out, text);
  }
  if (!config.csv.empty()) {
    const bool fresh = !std::ifstream(config.csv).good();
    std::ofstream csv(config.csv, std::ios::app);
    if (!csv) throw DataError("cannot write " + config.csv);
    if (fresh) csv << eval::csv_header() << '\n';
    csv << eval::csv_row(config.checkpoint, run.metrics) << '\n';
  }
  return 0;
}

int run_synth(RunConfig config) {
  synth::validate(config.synth);
  const Dataset ds = synth::generate(config.synth);
  if (config.out.empty()) {
    synth::write_jsonl(ds, std::cout);
  } else {
    synth::write_jsonl(ds, config.out);
  }
  return 0;
}

int run_selftest(bool inject) {
  selftest::Options options;
  options.flip_proto_gradient = inject;
  const auto results = selftest::run(options);
  selftest::print(results, std::cout);
  const bool ok = selftest::all_passed(results);
  std::cout << (ok ? "selftest passed\n" : "selftest FAILED\n");
  return ok ? 0 : kExitChecksFailed;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Multi-label few-shot learning"};
  app.require_subcommand(1);
  Invocation train_inv, eval_inv, synth_inv, self_inv;
  CLI::App* train_cmd = app.add_subcommand("train", "episodic training, writes a checkpoint");
  CLI::App* eval_cmd = app.add_subcommand("eval", "evaluate a checkpoint on held-out classes");
  CLI::App* synth_cmd = app.add_subcommand("synth", "write a synthetic dataset as JSONL");
  CLI::App* self_cmd = app.add_subcommand("selftest", "gradient and oracle checks");
  add_run_options(train_cmd, train_inv);
  add_run_options(eval_cmd, eval_inv);
  add_run_options(synth_cmd, synth_inv);
  self_cmd->add_flag("--inject", self_inv.inject, "corrupt one gradient; the checks must fail");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kExitConfig;
  }

  try {
    if (*train_cmd) return run_train(build_config(train_cmd, train_inv, "train"));
    if (*eval_cmd) return run_eval(eval_cmd, build_config(eval_cmd, eval_inv, "eval"));
    if (*synth_cmd) return run_synth(build_config(synth_cmd, synth_inv, "synth"));
    return run_selftest(self_inv.inject);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return kExitConfig;
  } catch (const ContractViolation& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return kExitConfig;
  } catch (const DataError& e) {
    std::cerr << "data error: " << e.what() << '\n';
    return kExitData;
  } catch (const NumericalError& e) {
    std::cerr << "numerical failure: " << e.what() << '\n';
    return kExitNumerical;
  }
}
