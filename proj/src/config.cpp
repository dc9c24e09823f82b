// SPDX-License-Identifier: Apache-2.0
#include "meg/config.hpp"

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>
#include <sstream>

#include "meg/parse.hpp"

namespace meg {

using text::format_double;
using text::parse_bool;
using text::parse_double;
using text::parse_int;

namespace {

const char* bool_text(bool b) { return b ? "true" : "false"; }

}  // namespace

KeyValues RunSettings::to_map() const {
  return {{"name", name},
          {"checkpoint_every", std::to_string(checkpoint_every)},
          {"eval_every", std::to_string(eval_every)}};
}

bool RunSettings::set(const std::string& key, const std::string& value) {
  if (key == "name") name = value;
  else if (key == "checkpoint_every") checkpoint_every = parse_int(key, value);
  else if (key == "eval_every") eval_every = parse_int(key, value);
  else return false;
  return true;
}

KeyValues DataConfig::to_map() const {
  return {{"kind", kind},
          {"family", family},
          {"count", std::to_string(count)},
          {"seed", std::to_string(seed)},
          {"path", path},
          {"test_path", test_path},
          {"stacks", std::to_string(stacks)},
          {"train_count", std::to_string(train_count)},
          {"eval_count", std::to_string(eval_count)},
          {"archive", archive},
          {"heldout_digit", std::to_string(heldout_digit)},
          {"convention", convention},
          {"train_fraction", format_double(train_fraction)},
          {"train_on_inliers", bool_text(train_on_inliers)}};
}

bool DataConfig::set(const std::string& key, const std::string& value) {
  if (key == "kind") {
    if (value != "synthetic2d" && value != "stackedmnist" && value != "kdd99" && value != "mnist-heldout")
      throw ConfigError("data.kind must be synthetic2d, stackedmnist, kdd99 or mnist-heldout, got '" + value + "'");
    kind = value;
  } else if (key == "family") family = value;
  else if (key == "count") count = parse_int(key, value);
  else if (key == "seed") seed = static_cast<std::uint64_t>(parse_int(key, value));
  else if (key == "path") path = value;
  else if (key == "test_path") test_path = value;
  else if (key == "stacks") stacks = static_cast<int>(parse_int(key, value));
  else if (key == "train_count") train_count = parse_int(key, value);
  else if (key == "eval_count") eval_count = parse_int(key, value);
  else if (key == "archive") archive = value;
  else if (key == "heldout_digit") heldout_digit = static_cast<int>(parse_int(key, value));
  else if (key == "convention") {
    if (value != "normal-is-anomaly" && value != "attack-is-anomaly")
      throw ConfigError("data.convention must be normal-is-anomaly or attack-is-anomaly, got '" + value + "'");
    convention = value;
  } else if (key == "train_fraction") train_fraction = parse_double(key, value);
  else if (key == "train_on_inliers") train_on_inliers = parse_bool(key, value);
  else return false;
  return true;
}

KeyValues SampleConfig::to_map() const {
  return {{"step_size", format_double(mala.step_size)},
          {"chain_length", std::to_string(mala.chain_length)},
          {"burn_in", std::to_string(mala.burn_in)},
          {"space", to_string(mala.space)},
          {"include_prior", bool_text(mala.include_prior)},
          {"count", std::to_string(count)},
          {"seed", std::to_string(seed)}};
}

bool SampleConfig::set(const std::string& key, const std::string& value) {
  if (key == "step_size") mala.step_size = parse_double(key, value);
  else if (key == "chain_length") mala.chain_length = parse_int(key, value);
  else if (key == "burn_in") mala.burn_in = parse_int(key, value);
  else if (key == "space") mala.space = parse_space(value);
  else if (key == "include_prior") mala.include_prior = parse_bool(key, value);
  else if (key == "count") count = parse_int(key, value);
  else if (key == "seed") seed = static_cast<std::uint64_t>(parse_int(key, value));
  else return false;
  return true;
}

KeyValues DensityConfig::to_map() const {
  return {{"x_min", format_double(grid.x_min)},
          {"x_max", format_double(grid.x_max)},
          {"y_min", format_double(grid.y_min)},
          {"y_max", format_double(grid.y_max)},
          {"nx", std::to_string(grid.nx)},
          {"ny", std::to_string(grid.ny)},
          {"estimator", estimator},
          {"is_centers", std::to_string(is_centers)},
          {"is_draws", std::to_string(is_draws)},
          {"bandwidth", format_double(bandwidth)},
          {"seed", std::to_string(seed)}};
}

bool DensityConfig::set(const std::string& key, const std::string& value) {
  if (key == "x_min") grid.x_min = parse_double(key, value);
  else if (key == "x_max") grid.x_max = parse_double(key, value);
  else if (key == "y_min") grid.y_min = parse_double(key, value);
  else if (key == "y_max") grid.y_max = parse_double(key, value);
  else if (key == "nx") grid.nx = parse_int(key, value);
  else if (key == "ny") grid.ny = parse_int(key, value);
  else if (key == "estimator") {
    if (value != "riemann" && value != "importance")
      throw ConfigError("density.estimator must be riemann or importance, got '" + value + "'");
    estimator = value;
  } else if (key == "is_centers") is_centers = parse_int(key, value);
  else if (key == "is_draws") is_draws = parse_int(key, value);
  else if (key == "bandwidth") bandwidth = parse_double(key, value);
  else if (key == "seed") seed = static_cast<std::uint64_t>(parse_int(key, value));
  else return false;
  return true;
}

KeyValues ModesConfig::to_map() const {
  return {{"count", std::to_string(count)},
          {"cutoff", format_double(cutoff)},
          {"sigma", format_double(sigma)},
          {"classifier", classifier},
          {"seed", std::to_string(seed)}};
}

bool ModesConfig::set(const std::string& key, const std::string& value) {
  if (key == "count") count = parse_int(key, value);
  else if (key == "cutoff") cutoff = parse_double(key, value);
  else if (key == "sigma") sigma = parse_double(key, value);
  else if (key == "classifier") classifier = value;
  else if (key == "seed") seed = static_cast<std::uint64_t>(parse_int(key, value));
  else return false;
  return true;
}

KeyValues AnomalyConfig::to_map() const {
  return {{"contamination", format_double(contamination)}, {"average_last", std::to_string(average_last)}};
}

bool AnomalyConfig::set(const std::string& key, const std::string& value) {
  if (key == "contamination") contamination = parse_double(key, value);
  else if (key == "average_last") average_last = parse_int(key, value);
  else return false;
  return true;
}

void ExperimentConfig::set(const std::string& section, const std::string& key, const std::string& value) {
  bool known = false;
  if (section == "run") known = run.set(key, value);
  else if (section == "data") known = data.set(key, value);
  else if (section == "model") known = model.set(key, value);
  else if (section == "train") known = train.set(key, value);
  else if (section == "sample") known = sample.set(key, value);
  else if (section == "density") known = density.set(key, value);
  else if (section == "modes") known = modes.set(key, value);
  else if (section == "anomaly") known = anomaly.set(key, value);
  else throw ConfigError("unknown config section '" + section + "'");
  if (!known) throw ConfigError("unknown config key '" + section + "." + key + "'");
}

void ExperimentConfig::apply_override(const std::string& assignment) {
  const auto eq = assignment.find('=');
  const auto dot = assignment.find('.');
  if (eq == std::string::npos || dot == std::string::npos || dot > eq || dot == 0 || dot + 1 == eq) {
    throw ConfigError("override must look like section.key=value, got '" + assignment + "'");
  }
  set(assignment.substr(0, dot), assignment.substr(dot + 1, eq - dot - 1), assignment.substr(eq + 1));
}

void ExperimentConfig::validate() const {
  train.validate();
  sample.mala.validate();
  density.grid.validate();
  if (run.checkpoint_every < 1) throw ConfigError("run.checkpoint_every must be >= 1");
  if (run.eval_every < 0) throw ConfigError("run.eval_every must be >= 0");
  if (data.count < 1) throw ConfigError("data.count must be >= 1");
  if (data.stacks < 1 || data.stacks > 6) throw ConfigError("data.stacks must be in [1, 6]");
  if (data.heldout_digit < 0 || data.heldout_digit > 9) throw ConfigError("data.heldout_digit must be in [0, 9]");
  if (!(data.train_fraction > 0 && data.train_fraction < 1)) throw ConfigError("data.train_fraction must be in (0, 1)");
  if (sample.count < 1) throw ConfigError("sample.count must be >= 1");
  if (modes.count < 1) throw ConfigError("modes.count must be >= 1");
  if (!(modes.cutoff > 0)) throw ConfigError("modes.cutoff must be > 0");
  if (modes.sigma < 0) throw ConfigError("modes.sigma must be >= 0");
  if (anomaly.contamination < 0 || anomaly.contamination >= 1)
    throw ConfigError("anomaly.contamination must be in [0, 1)");
  if (anomaly.average_last < 1) throw ConfigError("anomaly.average_last must be >= 1");
  if (density.estimator == "importance" && (density.is_centers < 1 || density.is_draws < 1 || !(density.bandwidth > 0)))
    throw ConfigError("importance estimator needs is_centers, is_draws >= 1 and bandwidth > 0");
}

ExperimentConfig ExperimentConfig::load(const std::filesystem::path& path, const std::vector<std::string>& overrides) {
  ExperimentConfig cfg;
  if (!path.empty()) {
    if (!std::filesystem::exists(path)) throw ConfigError("config file not found: '" + path.string() + "'");
    boost::property_tree::ptree tree;
    try {
      boost::property_tree::ini_parser::read_ini(path.string(), tree);
    } catch (const boost::property_tree::ini_parser_error& e) {
      throw ConfigError(std::string("config parse error: ") + e.what());
    }
    for (const auto& [section, body] : tree) {
      if (body.empty() && !body.data().empty())
        throw ConfigError("config key '" + section + "' is outside any section");
      if (!cfg.effective().count(section)) throw ConfigError("unknown config section '" + section + "'");
      for (const auto& [key, value] : body) cfg.set(section, key, value.data());
    }
  }
  for (const auto& o : overrides) cfg.apply_override(o);
  cfg.validate();
  return cfg;
}

std::map<std::string, KeyValues> ExperimentConfig::effective() const {
  return {{"run", run.to_map()},         {"data", data.to_map()},       {"model", model.to_map()},
          {"train", train.to_map()},     {"sample", sample.to_map()},   {"density", density.to_map()},
          {"modes", modes.to_map()},     {"anomaly", anomaly.to_map()}};
}

std::string ExperimentConfig::dump() const {
  std::ostringstream out;
  bool first = true;
  for (const auto& [section, kv] : effective()) {
    if (!first) out << "\n";
    first = false;
    out << "[" << section << "]\n";
    for (const auto& [k, v] : kv) out << k << " = " << v << "\n";
  }
  return out.str();
}

}  // namespace meg
