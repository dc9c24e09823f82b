// SPDX-License-Identifier: Apache-2.0
//
// Mode coverage: histograms of discrete mode ids and their empirical KL
// divergence from a reference histogram.

#pragma once

#include <cstdint>
#include <memory>
#include <vector>

#include "meg/autodiff.hpp"
#include "meg/errors.hpp"

namespace meg {

struct ModeHistogram {
  std::vector<std::int64_t> counts;
  std::int64_t total = 0;

  static ModeHistogram empty(Index capacity);
  /// Uniform reference: `per_mode` counts in each of `capacity` modes.
  static ModeHistogram uniform(Index capacity, std::int64_t per_mode = 1);

  Index capacity() const { return static_cast<Index>(counts.size()); }
  Index captured_modes() const;
  void add(Index mode);
  /// Associative and commutative.
  void merge(const ModeHistogram& other);
};

/// Maps each sample row to a mode id in [0, capacity()).
class ModeClassifier {
 public:
  virtual ~ModeClassifier() = default;
  virtual Index capacity() const = 0;
  virtual std::vector<Index> classify(const Mat<float>& samples) const = 0;
};

ModeHistogram histogram_from_ids(const std::vector<Index>& ids, Index capacity);
ModeHistogram mode_histogram(const ModeClassifier& classifier, const Mat<float>& samples, Index capacity);

struct ModeAssignment {
  std::vector<Index> mode;
  std::vector<bool> in_mode;
  double in_mode_fraction() const;
  /// Histogram over in-mode samples only.
  ModeHistogram in_mode_histogram(Index capacity) const;
};

/// Nearest center per sample (lowest index wins ties); in-mode iff the
/// distance is at most cutoff * sigma.
ModeAssignment nearest_mode_assign(const Mat<double>& samples, const Mat<double>& centers, double sigma,
                                   double cutoff);

struct KLResult {
  double value = 0;
  bool infinite = false;
};

/// KL(gen || ref) in nats over normalized histograms.
KLResult empirical_kl(const ModeHistogram& gen, const ModeHistogram& ref);

}  // namespace meg
