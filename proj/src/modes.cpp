// SPDX-License-Identifier: Apache-2.0
#include "meg/modes.hpp"

#include <cmath>
#include <limits>
#include <string>

namespace meg {

ModeHistogram ModeHistogram::empty(Index capacity) {
  if (capacity < 1) throw ConfigError("mode histogram capacity must be >= 1");
  ModeHistogram h;
  h.counts.assign(static_cast<std::size_t>(capacity), 0);
  return h;
}

ModeHistogram ModeHistogram::uniform(Index capacity, std::int64_t per_mode) {
  ModeHistogram h = empty(capacity);
  for (auto& c : h.counts) c = per_mode;
  h.total = per_mode * capacity;
  return h;
}

Index ModeHistogram::captured_modes() const {
  Index n = 0;
  for (auto c : counts) n += c > 0;
  return n;
}

void ModeHistogram::add(Index mode) {
  if (mode < 0 || mode >= capacity()) {
    throw ProtocolError("mode id " + std::to_string(mode) + " outside [0, " + std::to_string(capacity()) + ")");
  }
  counts[static_cast<std::size_t>(mode)]++;
  total++;
}

void ModeHistogram::merge(const ModeHistogram& other) {
  if (other.capacity() != capacity()) throw ProtocolError("cannot merge histograms of different capacity");
  for (std::size_t i = 0; i < counts.size(); ++i) counts[i] += other.counts[i];
  total += other.total;
}

ModeHistogram histogram_from_ids(const std::vector<Index>& ids, Index capacity) {
  ModeHistogram h = ModeHistogram::empty(capacity);
  for (Index id : ids) h.add(id);
  return h;
}

ModeHistogram mode_histogram(const ModeClassifier& classifier, const Mat<float>& samples, Index capacity) {
  if (classifier.capacity() != capacity) {
    throw ProtocolError("classifier capacity " + std::to_string(classifier.capacity()) + " != histogram capacity " +
                        std::to_string(capacity));
  }
  const auto ids = classifier.classify(samples);
  if (static_cast<Index>(ids.size()) != samples.rows()) throw ProtocolError("classifier returned wrong id count");
  return histogram_from_ids(ids, capacity);
}

double ModeAssignment::in_mode_fraction() const {
  if (in_mode.empty()) return 0.0;
  std::size_t n = 0;
  for (bool b : in_mode) n += b;
  return static_cast<double>(n) / static_cast<double>(in_mode.size());
}

ModeHistogram ModeAssignment::in_mode_histogram(Index capacity) const {
  ModeHistogram h = ModeHistogram::empty(capacity);
  for (std::size_t i = 0; i < mode.size(); ++i)
    if (in_mode[i]) h.add(mode[i]);
  return h;
}

ModeAssignment nearest_mode_assign(const Mat<double>& samples, const Mat<double>& centers, double sigma,
                                   double cutoff) {
  if (centers.rows() == 0) throw ConfigError("nearest_mode_assign: no centers");
  if (!(sigma > 0)) throw ConfigError("nearest_mode_assign: sigma must be > 0");
  if (samples.cols() != centers.cols()) throw ConfigError("nearest_mode_assign: dimension mismatch");
  ModeAssignment out;
  out.mode.resize(static_cast<std::size_t>(samples.rows()));
  out.in_mode.resize(static_cast<std::size_t>(samples.rows()));
  const double radius2 = (cutoff * sigma) * (cutoff * sigma);
  for (Index i = 0; i < samples.rows(); ++i) {
    Index best = 0;
    double best_d = std::numeric_limits<double>::infinity();
    for (Index c = 0; c < centers.rows(); ++c) {
      const double d = (samples.row(i) - centers.row(c)).squaredNorm();
      if (d < best_d) {
        best_d = d;
        best = c;
      }
    }
    out.mode[static_cast<std::size_t>(i)] = best;
    out.in_mode[static_cast<std::size_t>(i)] = best_d <= radius2;
  }
  return out;
}

KLResult empirical_kl(const ModeHistogram& gen, const ModeHistogram& ref) {
  if (gen.capacity() != ref.capacity()) {
    throw ProtocolError("empirical_kl: capacities differ (" + std::to_string(gen.capacity()) + " vs " +
                        std::to_string(ref.capacity()) + ")");
  }
  if (gen.total <= 0 || ref.total <= 0) throw ProtocolError("empirical_kl: empty histogram");
  KLResult r;
  const double gt = static_cast<double>(gen.total), rt = static_cast<double>(ref.total);
  for (std::size_t i = 0; i < gen.counts.size(); ++i) {
    if (gen.counts[i] == 0) continue;
    if (ref.counts[i] == 0) {
      r.infinite = true;
      r.value = std::numeric_limits<double>::infinity();
      return r;
    }
    const double p = static_cast<double>(gen.counts[i]) / gt, q = static_cast<double>(ref.counts[i]) / rt;
    r.value += p * std::log(p / q);
  }
  // Rounding can leave a tiny negative value for equal distributions.
  if (r.value < 0 && r.value > -1e-12) r.value = 0;
  return r;
}

}  // namespace meg
