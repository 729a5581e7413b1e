// SPDX-License-Identifier: Apache-2.0
#include "mlfsl/config.hpp"

#include <charconv>
#include <cstdio>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>

#include "mlfsl/errors.hpp"

namespace mlfsl {
namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

template <class T>
T parse_integer(const std::string& key, const std::string& v) {
  T out{};
  const auto res = std::from_chars(v.data(), v.data() + v.size(), out);
  if (res.ec != std::errc{} || res.ptr != v.data() + v.size())
    throw ConfigError("'" + key + "' expects a non-negative integer, got '" + v + "'");
  return out;
}

double parse_real(const std::string& key, const std::string& v) {
  try {
    std::size_t used = 0;
    const double d = std::stod(v, &used);
    if (used != v.size()) throw std::invalid_argument(v);
    return d;
  } catch (const std::exception&) {
    throw ConfigError("'" + key + "' expects a number, got '" + v + "'");
  }
}

bool parse_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1" || v == "on" || v == "yes") return true;
  if (v == "false" || v == "0" || v == "off" || v == "no") return false;
  throw ConfigError("'" + key + "' expects true/false, got '" + v + "'");
}

std::string format_real(double d) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", d);
  return buf;
}

struct Field {
  std::function<void(RunConfig&, const std::string&, const std::string&)> set;
  std::function<std::string(const RunConfig&)> get;
};

template <class T>
Field size_field(T RunConfig::*member) {
  return {[member](RunConfig& c, const std::string& k, const std::string& v) {
            c.*member = parse_integer<T>(k, v);
          },
          [member](const RunConfig& c) { return std::to_string(c.*member); }};
}

Field real_field(double RunConfig::*member) {
  return {[member](RunConfig& c, const std::string& k, const std::string& v) {
            c.*member = parse_real(k, v);
          },
          [member](const RunConfig& c) { return format_real(c.*member); }};
}

Field string_field(std::string RunConfig::*member) {
  return {[member](RunConfig& c, const std::string&, const std::string& v) { c.*member = v; },
          [member](const RunConfig& c) { return c.*member; }};
}

template <class T>
Field synth_size_field(T synth::SynthConfig::*member) {
  return {[member](RunConfig& c, const std::string& k, const std::string& v) {
            c.synth.*member = parse_integer<T>(k, v);
          },
          [member](const RunConfig& c) { return std::to_string(c.synth.*member); }};
}

Field synth_real_field(double synth::SynthConfig::*member) {
  return {[member](RunConfig& c, const std::string& k, const std::string& v) {
            c.synth.*member = parse_real(k, v);
          },
          [member](const RunConfig& c) { return format_real(c.synth.*member); }};
}

const std::map<std::string, Field>& fields() {
  static const std::map<std::string, Field> table = {
      {"command", string_field(&RunConfig::command)},
      {"data", string_field(&RunConfig::data)},
      {"synth-classes", synth_size_field(&synth::SynthConfig::num_classes)},
      {"synth-dim", synth_size_field(&synth::SynthConfig::feature_dim)},
      {"synth-per-class", synth_size_field(&synth::SynthConfig::samples_per_class)},
      {"synth-max-labels", synth_size_field(&synth::SynthConfig::max_labels)},
      {"synth-separation", synth_real_field(&synth::SynthConfig::separation)},
      {"synth-noise", synth_real_field(&synth::SynthConfig::noise)},
      {"synth-cooccurrence", synth_real_field(&synth::SynthConfig::cooccurrence)},
      {"synth-seed", synth_size_field(&synth::SynthConfig::seed)},
      {"head", string_field(&RunConfig::head)},
      {"relation-loss", string_field(&RunConfig::relation_loss)},
      {"way", size_field(&RunConfig::way)},
      {"shot", size_field(&RunConfig::shot)},
      {"queries", size_field(&RunConfig::queries)},
      {"episodes", size_field(&RunConfig::episodes)},
      {"eval-episodes", size_field(&RunConfig::eval_episodes)},
      {"seed", size_field(&RunConfig::seed)},
      {"split-seed", size_field(&RunConfig::split_seed)},
      {"train-fraction", real_field(&RunConfig::train_fraction)},
      {"val-fraction", real_field(&RunConfig::val_fraction)},
      {"split", string_field(&RunConfig::split)},
      {"nlc", {[](RunConfig& c, const std::string& k, const std::string& v) {
                 c.nlc = parse_bool(k, v);
               },
               [](const RunConfig& c) { return std::string(c.nlc ? "true" : "false"); }}},
      {"lambda", real_field(&RunConfig::lambda)},
      {"alpha", real_field(&RunConfig::alpha)},
      {"sigma", real_field(&RunConfig::sigma)},
      {"knn", size_field(&RunConfig::knn)},
      {"embedding-dim", size_field(&RunConfig::embedding_dim)},
      {"hidden", size_field(&RunConfig::hidden)},
      {"learning-rate", real_field(&RunConfig::learning_rate)},
      {"halve-every", size_field(&RunConfig::halve_every)},
      {"checkpoint", string_field(&RunConfig::checkpoint)},
      {"out", string_field(&RunConfig::out)},
      {"csv", string_field(&RunConfig::csv)},
  };
  return table;
}

}  // namespace

bool RunConfig::operator==(const RunConfig& other) const {
  return to_config_text(*this) == to_config_text(other);
}

void validate(const RunConfig& c) {
  if (c.command != "train" && c.command != "eval" && c.command != "synth" &&
      c.command != "selftest")
    throw ConfigError("unknown command '" + c.command + "'");
  heads::parse_head_kind(c.head);
  if (c.relation_loss != "bce" && c.relation_loss != "mse")
    throw ConfigError("relation-loss must be bce or mse");
  if (c.way < 2) throw ConfigError("way must be at least 2");
  if (c.shot < 1) throw ConfigError("shot must be at least 1");
  if (!(c.lambda >= 0.0)) throw ConfigError("lambda must be non-negative");
  if (!(c.alpha >= 0.0 && c.alpha < 1.0)) throw ConfigError("alpha must lie in [0, 1)");
  if (!(c.sigma > 0.0)) throw ConfigError("sigma must be positive");
  if (c.knn < 1) throw ConfigError("knn must be at least 1");
  if (c.embedding_dim < 1 || c.hidden < 1) throw ConfigError("network widths must be positive");
  if (!(c.learning_rate > 0.0)) throw ConfigError("learning-rate must be positive");
  if (c.halve_every < 1) throw ConfigError("halve-every must be positive");
  if (c.split != "test" && c.split != "val" && c.split != "train")
    throw ConfigError("split must be test, val or train");
  if (c.eval_episodes < 1) throw ConfigError("eval-episodes must be positive");
  if (!(c.train_fraction > 0.0 && c.train_fraction < 1.0))
    throw ConfigError("train-fraction must lie in (0, 1)");
  if (!(c.val_fraction >= 0.0 && c.val_fraction < 1.0))
    throw ConfigError("val-fraction must lie in [0, 1)");
  if (c.train_fraction + c.val_fraction >= 1.0)
    throw ConfigError("train-fraction + val-fraction must be below 1");
  if (c.data.empty()) synth::validate(c.synth);
}

heads::HeadOptions head_options(const RunConfig& c) {
  heads::HeadOptions o;
  o.kind = heads::parse_head_kind(c.head);
  o.relation_loss = c.relation_loss == "mse" ? heads::RelationLoss::kMse : heads::RelationLoss::kBce;
  o.alpha = c.alpha;
  o.sigma = c.sigma;
  o.k_nn = c.knn;
  return o;
}

std::size_t query_count(const RunConfig& c) {
  return c.queries > 0 ? c.queries : default_query_count(c.way);
}

void apply_setting(RunConfig& config, const std::string& key, const std::string& value) {
  const auto it = fields().find(key);
  if (it == fields().end()) throw ConfigError("unknown config key '" + key + "'");
  it->second.set(config, key, value);
}

namespace {

void apply_stream(RunConfig& config, std::istream& in, const std::string& where) {
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw ConfigError(where + ":" + std::to_string(line_no) + ": expected key = value");
    apply_setting(config, trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
  }
}

}  // namespace

void apply_config_file(RunConfig& config, const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file " + path);
  apply_stream(config, in, path);
}

RunConfig parse_config(std::istream& in) {
  RunConfig config;
  apply_stream(config, in, "config");
  return config;
}

RunConfig load_config(const std::string& path) {
  RunConfig config;
  apply_config_file(config, path);
  return config;
}

std::string to_config_text(const RunConfig& config) {
  std::ostringstream out;
  for (const auto& [key, field] : fields()) out << key << " = " << field.get(config) << '\n';
  return out.str();
}

}  // namespace mlfsl
