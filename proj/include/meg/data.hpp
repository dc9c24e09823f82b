// SPDX-License-Identifier: Apache-2.0
//
// Datasets: synthetic 2-D mixtures, stacked digit images and tabular
// intrusion records, plus the on-disk archive format shared by all of them.

#pragma once

#include <cstdint>
#include <filesystem>
#include <istream>
#include <map>
#include <string>
#include <vector>

#include "json.hpp"
#include "meg/autodiff.hpp"
#include "meg/rng.hpp"

namespace meg {

// ---------------------------------------------------------------------------
// Archives

/// A directory holding one sealed array file per name and `manifest.json`
/// with the build spec, seed, row counts and a hash over the array files.
struct DatasetArchive {
  nlohmann::ordered_json spec;
  std::uint64_t seed = 0;
  std::map<std::string, Mat<float>> arrays;
};

/// Returns the content hash recorded in the manifest.
std::string write_archive(const std::filesystem::path& dir, const DatasetArchive& archive);
/// Verifies every array checksum and the manifest hash.
DatasetArchive read_archive(const std::filesystem::path& dir);
std::string archive_hash(const std::filesystem::path& dir);
nlohmann::ordered_json read_manifest(const std::filesystem::path& dir);

// ---------------------------------------------------------------------------
// Synthetic 2-D data

enum class Synthetic2DFamily { EightGaussians, TwentyFiveGaussians, SwissRoll };

struct Synthetic2DSpec {
  Synthetic2DFamily family = Synthetic2DFamily::EightGaussians;
  Mat<double> centers;  // empty for the swiss roll
  double sigma = 0.02;
  double scale = 1.0;

  /// "8gaussians", "25gaussians" or "swissroll".
  static Synthetic2DSpec named(const std::string& name);
  std::string name() const;
  Index mode_count() const { return centers.rows(); }
};

/// n i.i.d. draws. Gaussian families pick a component uniformly; its index is
/// written to `components` when given.
Mat<double> synthetic2d(const Synthetic2DSpec& spec, Index n, Rng& rng, std::vector<Index>* components = nullptr);

// ---------------------------------------------------------------------------
// Digit images

struct DigitSet {
  Mat<float> images;  // N x (height * width), values in [0, 1]
  std::vector<int> labels;
  Index height = 28, width = 28;
  Index size() const { return images.rows(); }
};

/// IDX image/label file pair as distributed for MNIST.
DigitSet load_mnist_idx(const std::filesystem::path& images, const std::filesystem::path& labels);
/// Rows of 784 pixel values in [0, 255] followed by the label.
DigitSet load_digits_csv(const std::filesystem::path& path);
/// Dispatches on the path: a .csv file, or a directory containing
/// train-images-idx3-ubyte / train-labels-idx1-ubyte (optionally t10k-*).
DigitSet load_digits(const std::filesystem::path& path, bool test_split = false);
std::vector<Index> rows_with_label(const DigitSet& set, int label, bool keep);

// ---------------------------------------------------------------------------
// Stacked digits

struct StackedMNISTSpec {
  int stacks = 3;
  Index train_count = 10000;
  Index eval_count = 20000;
  void validate() const;
  Index mode_capacity() const;
};

/// Stacked images are stored as source-image indices; pixels are produced on
/// demand by `materialize`.
struct StackedMNIST {
  StackedMNISTSpec spec;
  std::uint64_t seed = 0;
  Mat<std::int32_t> train_index, eval_index;  // N x stacks
  std::vector<Index> train_modes, eval_modes;
};

/// Each channel draws a digit label uniformly from 0-9, then a source image of
/// that label uniformly. Mode id = sum_c label_c * 10^(stacks - 1 - c).
StackedMNIST build_stacked_mnist(const StackedMNISTSpec& spec, const DigitSet& source, std::uint64_t seed);
Index stacked_mode_id(const std::vector<int>& labels);
std::vector<int> stacked_labels(Index mode, int stacks);
/// Rows [begin, begin + count) of a split as H x W x stacks images.
Mat<float> materialize(const Mat<std::int32_t>& index, const DigitSet& source, Index begin, Index count);

std::string write_stacked_mnist(const std::filesystem::path& dir, const StackedMNIST& ds,
                                const std::string& source_hash);
StackedMNIST read_stacked_mnist(const std::filesystem::path& dir);
/// Rebuilds from the manifest's spec and seed and compares content hashes.
bool verify_stacked_rebuild(const std::filesystem::path& dir, const DigitSet& source);

// ---------------------------------------------------------------------------
// Tabular data

enum class ColumnKind { Numeric, Categorical, Label };

struct ColumnDescriptor {
  std::string name;
  ColumnKind kind = ColumnKind::Numeric;
  /// Categorical vocabulary in encoding order.
  std::vector<std::string> categories;
  /// Offset and width of the column's features in the encoded matrix.
  Index offset = 0, width = 1;
};

struct TabularDataset {
  Mat<float> features;
  std::vector<int> labels;  // 1 = anomaly
  std::vector<ColumnDescriptor> schema;
  Index rows() const { return features.rows(); }
};

struct MinMax {
  Vec<double> lo, hi;
  static MinMax fit(const Mat<double>& x);
  /// (x - lo) / (hi - lo) clipped to [0, 1]; constant columns map to x - lo.
  Mat<double> apply(const Mat<double>& x) const;
};

struct IngestionReport {
  Index rows_read = 0;
  Index malformed = 0;
  std::vector<Index> malformed_lines;  // 1-based, first 20
};

enum class AnomalyConvention { NormalIsAnomaly, AttackIsAnomaly };

struct TabularOptions {
  AnomalyConvention convention = AnomalyConvention::NormalIsAnomaly;
  std::string normal_label = "normal";
  double train_fraction = 0.5;
  std::uint64_t seed = 0;
  /// Keep only label-0 rows in the training split.
  bool train_on_inliers = true;
  double max_malformed_fraction = 1e-3;
};

struct TabularSplit {
  TabularDataset train, test;
  /// Source row ids of the two halves; disjoint and together exhaustive.
  std::vector<Index> train_rows, test_rows;
  /// Source rows behind `train` (train_rows minus anomalies when
  /// train_on_inliers is set).
  std::vector<Index> fit_rows;
  IngestionReport report;
};

/// Column layout of the KDD Cup 1999 records: 41 features, then the label.
std::vector<ColumnDescriptor> kdd99_schema();

/// Parses comma-separated records against `schema` (vocabularies are filled
/// from the data, sorted), one-hot encodes categoricals, splits, fits min-max
/// on the training split and applies it to both.
TabularSplit ingest_tabular(std::istream& in, std::vector<ColumnDescriptor> schema, const TabularOptions& options);
TabularSplit load_kdd99(const std::filesystem::path& path, const TabularOptions& options);

}  // namespace meg
