// SPDX-License-Identifier: Apache-2.0
//
// Anomaly scoring with the squared norm of the energy's input gradient.

#pragma once

#include <cstdint>
#include <optional>
#include <vector>

#include "meg/models.hpp"

namespace meg {

struct AnomalyScoreSet {
  std::vector<double> scores;
  std::optional<std::vector<int>> labels;  // 1 = anomaly
  /// Rows of the input whose gradient was not finite; they are left out of
  /// `scores` and `labels`.
  std::vector<Index> excluded;

  void validate() const;
};

template <typename S>
AnomalyScoreSet score_samples(const EnergyFunction<S>& E, const SampleBatch<S>& x,
                              const std::vector<int>* labels = nullptr, Index chunk = 4096) {
  if (x.dim() != E.input_dim()) throw ConfigError("score_samples: sample dimension mismatch");
  if (labels && static_cast<Index>(labels->size()) != x.rows()) {
    throw ConfigError("score_samples: label count does not match sample count");
  }
  AnomalyScoreSet out;
  if (labels) out.labels.emplace();
  const auto p = nn::bind(E.params(), false);
  for (Index start = 0; start < x.rows(); start += chunk) {
    const Index n = std::min(chunk, x.rows() - start);
    auto xv = ad::Var<S>::variable(x.values.middleRows(start, n));
    auto e = E.apply(xv, p);
    const Mat<S> g = ad::grad(ad::sum(e), {xv})[0].value();
    for (Index i = 0; i < n; ++i) {
      const double s = static_cast<double>(g.row(i).template cast<double>().squaredNorm());
      if (!std::isfinite(s) || !std::isfinite(static_cast<double>(e.value()(i, 0)))) {
        out.excluded.push_back(start + i);
        continue;
      }
      out.scores.push_back(s);
      if (labels) out.labels->push_back((*labels)[static_cast<std::size_t>(start + i)]);
    }
  }
  return out;
}

struct PRF1Report {
  double precision = 0, recall = 0, f1 = 0;
  double threshold = 0;
  double contamination_rate = 0;
  Index predicted_positive = 0;
  /// Set when there are no positive labels, so recall is undefined (reported as 0).
  bool recall_undefined = false;
};

/// Predicts the top ceil(rate * N) scores as anomalous. Ties at the boundary
/// are broken by sample order.
PRF1Report evaluate_prf1_at_rate(const AnomalyScoreSet& s, double contamination);

/// Step-wise area under the precision-recall curve, one step per distinct
/// score value.
double auprc(const AnomalyScoreSet& s);

}  // namespace meg
