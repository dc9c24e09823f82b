// SPDX-License-Identifier: Apache-2.0
//
// Central finite-difference checks for reverse-mode gradients.

#pragma once

#include <algorithm>
#include <functional>
#include <vector>

#include "meg/autodiff.hpp"

namespace meg {

/// Norm-wise relative error |a - b| / max(|a|, |b|, floor).
inline double relative_error(const Mat<double>& a, const Mat<double>& b, double floor = 1e-8) {
  const double denom = std::max({a.norm(), b.norm(), floor});
  return (a - b).norm() / denom;
}

/// Central differences of a scalar function of several tensors.
inline std::vector<Mat<double>> numeric_gradient(const std::function<double(const std::vector<Mat<double>>&)>& f,
                                                 std::vector<Mat<double>> at, double step = 1e-4) {
  std::vector<Mat<double>> out;
  for (auto& m : at) {
    Mat<double> g(m.rows(), m.cols());
    for (Index i = 0; i < m.size(); ++i) {
      const double saved = m.data()[i];
      m.data()[i] = saved + step;
      const double up = f(at);
      m.data()[i] = saved - step;
      const double down = f(at);
      m.data()[i] = saved;
      g.data()[i] = (up - down) / (2 * step);
    }
    out.push_back(std::move(g));
  }
  return out;
}

/// Builds the graph of `f` on fresh leaves, backpropagates, and compares with
/// central differences. Returns the largest per-tensor relative error.
/// `f` that differentiates internally (gradient penalties) needs
/// `record_numeric` so its finite-difference evaluations still build graphs.
inline double gradient_check(const std::function<ad::Var<double>(const std::vector<ad::Var<double>>&)>& f,
                             const std::vector<Mat<double>>& at, double step = 1e-4, bool record_numeric = false) {
  std::vector<ad::Var<double>> leaves;
  for (const auto& m : at) leaves.push_back(ad::Var<double>::variable(m));
  const auto analytic = ad::grad(f(leaves), leaves);
  const auto numeric = numeric_gradient(
      [&](const std::vector<Mat<double>>& xs) {
        ad::GradMode mode(record_numeric);
        std::vector<ad::Var<double>> c;
        for (const auto& m : xs) c.push_back(ad::Var<double>::constant(m));
        return f(c).item();
      },
      at, step);
  double worst = 0;
  for (std::size_t i = 0; i < at.size(); ++i) worst = std::max(worst, relative_error(analytic[i].value(), numeric[i]));
  return worst;
}

}  // namespace meg
