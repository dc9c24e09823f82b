// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <cstdint>

#include "meg/models.hpp"
#include "meg/nn.hpp"

namespace meg {

struct AdamConfig {
  double learning_rate = 1e-4;
  double beta1 = 0.5;
  double beta2 = 0.9;
  double epsilon = 1e-8;
};

template <typename S>
struct OptimizerState {
  nn::ParameterSet<S> first_moment;
  nn::ParameterSet<S> second_moment;
  std::int64_t step_count = 0;

  static OptimizerState zeros_like(const nn::ParameterSet<S>& params) {
    OptimizerState state;
    for (const auto& p : params) {
      state.first_moment.push_back(Mat<S>::Zero(p.rows(), p.cols()));
      state.second_moment.push_back(Mat<S>::Zero(p.rows(), p.cols()));
    }
    return state;
  }
};

/// One bias-corrected Adam update, in place.
template <typename S>
void adam_step(nn::ParameterSet<S>& params, const nn::ParameterSet<S>& grads, OptimizerState<S>& state,
               const AdamConfig& cfg) {
  if (grads.size() != params.size() || state.first_moment.size() != params.size() ||
      state.second_moment.size() != params.size()) {
    throw ConfigError("adam_step: parameter, gradient and state tensor counts differ");
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (grads[i].rows() != params[i].rows() || grads[i].cols() != params[i].cols() ||
        state.first_moment[i].rows() != params[i].rows() || state.first_moment[i].cols() != params[i].cols()) {
      throw ConfigError("adam_step: shape mismatch in tensor " + std::to_string(i));
    }
    if (!grads[i].allFinite()) throw NumericFault("non-finite gradient in parameter tensor " + std::to_string(i));
  }
  state.step_count += 1;
  const double t = static_cast<double>(state.step_count);
  const S b1 = static_cast<S>(cfg.beta1), b2 = static_cast<S>(cfg.beta2);
  const S correction1 = static_cast<S>(1.0 - std::pow(cfg.beta1, t));
  const S correction2 = static_cast<S>(1.0 - std::pow(cfg.beta2, t));
  const S lr = static_cast<S>(cfg.learning_rate), eps = static_cast<S>(cfg.epsilon);
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto m = state.first_moment[i].array();
    auto v = state.second_moment[i].array();
    const auto g = grads[i].array();
    m = b1 * m + (S(1) - b1) * g;
    v = b2 * v + (S(1) - b2) * g.square();
    params[i].array() -= lr * (m / correction1) / ((v / correction2).sqrt() + eps);
  }
}

}  // namespace meg
