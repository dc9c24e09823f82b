// SPDX-License-Identifier: Apache-2.0
//
// Experiment configuration: flat `key = value` entries grouped in sections
//
//   [run] [data] [model] [train] [sample] [density] [modes] [anomaly]
//
// Command-line overrides (`section.key=value`) take precedence over the file,
// which takes precedence over built-in defaults. Unknown keys are errors.

#pragma once

#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "meg/density.hpp"
#include "meg/sampler.hpp"
#include "meg/trainer.hpp"

namespace meg {

using KeyValues = std::map<std::string, std::string>;

struct RunSettings {
  std::string name = "run";
  std::int64_t checkpoint_every = 1000;
  /// Evaluation hook cadence in iterations for anomaly presets (0 = off).
  std::int64_t eval_every = 0;

  KeyValues to_map() const;
  bool set(const std::string& key, const std::string& value);
};

struct DataConfig {
  /// synthetic2d | stackedmnist | kdd99 | mnist-heldout
  std::string kind = "synthetic2d";
  std::string family = "25gaussians";
  Index count = 100000;
  std::uint64_t seed = 0;
  /// Raw source: digits (.csv or IDX directory) or KDD99 records.
  std::string path;
  /// Held-out digit test source (IDX directory uses its t10k files when empty).
  std::string test_path;
  int stacks = 3;
  Index train_count = 10000;
  Index eval_count = 20000;
  /// Where built datasets are persisted (default: <run dir>/dataset).
  std::string archive;
  int heldout_digit = 1;
  std::string convention = "normal-is-anomaly";
  double train_fraction = 0.5;
  bool train_on_inliers = true;

  KeyValues to_map() const;
  bool set(const std::string& key, const std::string& value);
};

struct SampleConfig {
  MALAConfig mala;
  Index count = 64;
  std::uint64_t seed = 0;

  KeyValues to_map() const;
  bool set(const std::string& key, const std::string& value);
};

struct DensityConfig {
  GridSpec grid;
  std::string estimator = "riemann";  // riemann | importance
  Index is_centers = 2000;
  Index is_draws = 20000;
  double bandwidth = 0.05;
  std::uint64_t seed = 0;

  KeyValues to_map() const;
  bool set(const std::string& key, const std::string& value);
};

struct ModesConfig {
  Index count = 10000;
  double cutoff = 3;
  /// Component width for nearest-mode assignment; 0 takes the dataset's own.
  double sigma = 0;
  std::string classifier;
  std::uint64_t seed = 0;

  KeyValues to_map() const;
  bool set(const std::string& key, const std::string& value);
};

struct AnomalyConfig {
  /// Fraction flagged as anomalous; 0 uses the test split's positive rate.
  double contamination = 0.2;
  /// Number of trailing evaluations averaged in the rolling report.
  Index average_last = 10;

  KeyValues to_map() const;
  bool set(const std::string& key, const std::string& value);
};

struct ExperimentConfig {
  RunSettings run;
  DataConfig data;
  ModelConfig model;
  TrainingConfig train;
  SampleConfig sample;
  DensityConfig density;
  ModesConfig modes;
  AnomalyConfig anomaly;

  /// Built-in defaults, then `path` (if not empty), then `overrides`.
  static ExperimentConfig load(const std::filesystem::path& path, const std::vector<std::string>& overrides = {});

  void set(const std::string& section, const std::string& key, const std::string& value);
  /// "section.key=value"
  void apply_override(const std::string& assignment);
  void validate() const;

  /// Every effective value, by section.
  std::map<std::string, KeyValues> effective() const;
  /// The effective config in file syntax; loading it reproduces this config.
  std::string dump() const;
};

}  // namespace meg
