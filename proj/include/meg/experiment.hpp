// SPDX-License-Identifier: Apache-2.0
//
// Workflows shared by the command-line tool and the acceptance harness:
// dataset assembly from a config, training, and the evaluation reports.

#pragma once

#include <filesystem>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"

#include "meg/anomaly.hpp"
#include "meg/compare.hpp"
#include "meg/config.hpp"
#include "meg/data.hpp"
#include "meg/density.hpp"
#include "meg/modes.hpp"
#include "meg/trainer.hpp"

namespace meg {

using Json = nlohmann::ordered_json;

/// Anomaly test split: features with binary labels (1 = anomaly).
struct LabeledSet {
  Mat<float> features;
  std::vector<int> labels;
};

struct ExperimentData {
  /// Materialized training rows; null for stacked digits, which are produced on demand.
  std::shared_ptr<const Mat<float>> train;
  std::shared_ptr<const RowSource> train_rows;
  std::optional<LabeledSet> test;
  std::optional<Synthetic2DSpec> synthetic;
  /// Stacked-digit builds keep their source images for materializing samples.
  std::optional<StackedMNIST> stacked;
  std::optional<DigitSet> digits;
  nn::Shape shape;
  /// Content hash of the persisted dataset archive.
  std::string archive_hash;
};

/// Builds (or, when `archive_dir` already holds a matching archive, reloads)
/// the dataset described by `cfg.data` and persists it under `archive_dir`.
ExperimentData load_experiment_data(const ExperimentConfig& cfg, const std::filesystem::path& archive_dir);

/// Nearest-mode reference for a synthetic Gaussian mixture.
std::optional<ModeReference> mode_reference(const ExperimentData& data, const ModesConfig& cfg);

/// Trains per `cfg` into `out_dir`. For anomaly datasets with run.eval_every
/// set, scores the test split on that cadence and appends to evaluations.csv.
RunResult train_experiment(const ExperimentConfig& cfg, const ExperimentData& data, const std::filesystem::path& out_dir,
                           bool resume, std::optional<std::int64_t> stop_after = std::nullopt,
                           const std::function<void(const std::string&)>& log = {});

/// Checks that a checkpoint fits the configured dimensions for evaluation.
void require_eval_compatible(const Checkpoint& ckpt, const ExperimentConfig& cfg, Index data_dim);

/// Density grid, local maxima and (for Gaussian mixtures) their distance to
/// the nearest true center. Files are written under `out_dir` when not empty.
Json density_report(const Checkpoint& ckpt, const ExperimentConfig& cfg, const ExperimentData& data,
                    const std::filesystem::path& out_dir);

/// Mode histogram of `cfg.modes.count` generator samples, against the
/// uniform reference. 2-D mixtures use nearest-mode assignment; stacked
/// digits use the classifier at cfg.modes.classifier.
Json modes_report(const Checkpoint& ckpt, const ExperimentConfig& cfg, const ExperimentData& data);

/// Anomaly report for one checkpoint on the test split.
Json anomaly_report(const Checkpoint& ckpt, const ExperimentConfig& cfg, const ExperimentData& data);

/// Mean of the trailing `last` rows of an evaluations.csv, if present.
std::optional<Json> rolling_anomaly_average(const std::filesystem::path& evaluations_csv, Index last);

struct SampleOutput {
  Json report;
  /// Data-space samples (count x D) and their latent positions (latent runs).
  Mat<double> samples, positions;
};

/// MALA from prior draws in the configured space.
SampleOutput sample_report(const Checkpoint& ckpt, const ExperimentConfig& cfg, const ExperimentData& data);

/// Latent versus visible chains from matched starts.
ChainComparison comparison(const Checkpoint& ckpt, const ExperimentConfig& cfg, const ExperimentData& data);
Json comparison_json(const ChainComparison& c);

/// Writes `samples` as CSV (2-D) or as a PPM image grid (images).
void write_sample_grid(const Mat<double>& samples, const nn::Shape& shape, const std::filesystem::path& stem);

}  // namespace meg
