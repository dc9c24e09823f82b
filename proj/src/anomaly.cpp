// SPDX-License-Identifier: Apache-2.0
#include "meg/anomaly.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace meg {

void AnomalyScoreSet::validate() const {
  for (double s : scores)
    if (!(s >= 0)) throw ProtocolError("anomaly scores must be finite and nonnegative");
  if (labels) {
    if (labels->size() != scores.size()) throw ProtocolError("labels do not align with scores");
    for (int l : *labels)
      if (l != 0 && l != 1) throw ProtocolError("labels must be 0 or 1");
  }
}

namespace {

std::vector<std::size_t> descending_order(const std::vector<double>& scores) {
  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
  return order;
}

}  // namespace

PRF1Report evaluate_prf1_at_rate(const AnomalyScoreSet& s, double contamination) {
  if (!s.labels) throw ProtocolError("evaluate_prf1_at_rate: labels are required");
  if (!(contamination > 0 && contamination < 1)) throw ConfigError("contamination rate must lie in (0, 1)");
  s.validate();
  const std::size_t n = s.scores.size();
  if (n == 0) throw ProtocolError("evaluate_prf1_at_rate: no scores");
  const auto order = descending_order(s.scores);
  const auto k = std::min(n, static_cast<std::size_t>(std::ceil(contamination * static_cast<double>(n) - 1e-9)));
  PRF1Report r;
  r.contamination_rate = contamination;
  r.predicted_positive = static_cast<Index>(k);
  std::size_t tp = 0, positives = 0;
  for (std::size_t i = 0; i < n; ++i) positives += (*s.labels)[i];
  for (std::size_t i = 0; i < k; ++i) tp += (*s.labels)[order[i]];
  const double lowest_flagged = s.scores[order[k - 1]];
  r.threshold = k < n ? 0.5 * (lowest_flagged + s.scores[order[k]]) : lowest_flagged;
  r.precision = static_cast<double>(tp) / static_cast<double>(k);
  if (positives == 0) {
    r.recall_undefined = true;
    r.recall = 0;
  } else {
    r.recall = static_cast<double>(tp) / static_cast<double>(positives);
  }
  r.f1 = r.precision + r.recall > 0 ? 2 * r.precision * r.recall / (r.precision + r.recall) : 0.0;
  return r;
}

double auprc(const AnomalyScoreSet& s) {
  if (!s.labels) throw ProtocolError("auprc: labels are required");
  s.validate();
  std::size_t positives = 0;
  for (int l : *s.labels) positives += l;
  if (positives == 0) throw ProtocolError("auprc: no positive labels");
  const auto order = descending_order(s.scores);
  double area = 0, prev_recall = 0;
  std::size_t tp = 0, seen = 0;
  for (std::size_t i = 0; i < order.size();) {
    // Group equal scores into one threshold.
    std::size_t j = i;
    while (j < order.size() && s.scores[order[j]] == s.scores[order[i]]) {
      tp += (*s.labels)[order[j]];
      ++j;
    }
    seen = j;
    const double recall = static_cast<double>(tp) / static_cast<double>(positives);
    const double precision = static_cast<double>(tp) / static_cast<double>(seen);
    area += (recall - prev_recall) * precision;
    prev_recall = recall;
    i = j;
  }
  return area;
}

}  // namespace meg
