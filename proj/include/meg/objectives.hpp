// SPDX-License-Identifier: Apache-2.0
//
// Losses and estimators. Each loss comes in two forms: a graph builder that
// takes bound parameter variables (used by the trainer and gradient checks)
// and a value form that evaluates it on the networks' current parameters.

#pragma once

#include <cmath>
#include <cstdint>
#include <utility>
#include <vector>

#include "meg/autodiff.hpp"
#include "meg/models.hpp"
#include "meg/rng.hpp"

namespace meg {

struct LossBreakdown {
  double energy_real = 0;  // mean E on data
  double energy_fake = 0;  // mean E on generated samples of the energy step
  double penalty = 0;      // mean squared score norm on data
  double mi_estimate = 0;  // JSD mutual-information estimate
  double loss_E = 0;
  double loss_G = 0;
  double loss_T = 0;
  /// mean E(G(z)) on the generator-step batch; loss_G = generator_energy - mi_estimate.
  double generator_energy = 0;
};

/// Latent batch whose columns were permuted independently.
template <typename S>
struct ShuffledLatentBatch {
  Mat<S> values;
  /// permutations[j][i] is the source row of values(i, j).
  std::vector<std::vector<std::size_t>> permutations;
  Index rows() const { return values.rows(); }
  Index dim() const { return values.cols(); }
};

enum class MiVariant { Softplus, Logistic };

template <typename S>
ShuffledLatentBatch<S> shuffle_marginals(const LatentBatch<S>& z, Rng& rng) {
  if (z.rows() < 2) throw ConfigError("shuffle_marginals: need at least 2 rows, got " + std::to_string(z.rows()));
  ShuffledLatentBatch<S> out{Mat<S>(z.rows(), z.dim()), {}};
  for (Index j = 0; j < z.dim(); ++j) {
    auto perm = rng.permutation(static_cast<std::size_t>(z.rows()));
    for (Index i = 0; i < z.rows(); ++i) out.values(i, j) = z.values(static_cast<Index>(perm[i]), j);
    out.permutations.push_back(std::move(perm));
  }
  return out;
}

/// E_joint[-sp(-T)] - E_marginal[sp(T)] from statistic values (m x 1 each).
template <typename S>
ad::Var<S> mi_jsd_graph(const ad::Var<S>& t_joint, const ad::Var<S>& t_marginal,
                        MiVariant variant = MiVariant::Softplus) {
  if (variant == MiVariant::Softplus) {
    return ad::sub(ad::neg(ad::mean(ad::softplus(ad::neg(t_joint)))), ad::mean(ad::softplus(t_marginal)));
  }
  // log sigma(T_joint) + log(1 - sigma(T_marginal)), the binary cross-entropy form.
  const S eps = std::is_same_v<S, float> ? S(1e-7) : S(1e-15);
  auto log_joint = ad::log(ad::add_scalar(ad::sigmoid(t_joint), eps));
  auto log_marg = ad::log(ad::add_scalar(ad::sigmoid(ad::neg(t_marginal)), eps));
  return ad::add(ad::mean(log_joint), ad::mean(log_marg));
}

template <typename S>
S mi_jsd(const StatisticsNetwork<S>& T, const SampleBatch<S>& x, const LatentBatch<S>& z_joint,
         const ShuffledLatentBatch<S>& z_marg, MiVariant variant = MiVariant::Softplus) {
  if (x.rows() != z_joint.rows() || x.rows() != z_marg.rows()) throw ConfigError("mi_jsd: row counts differ");
  const Vec<S> tj = statistic(T, x, z_joint);
  const Vec<S> tm = statistic(T, x, LatentBatch<S>{z_marg.values});
  ad::GradMode no_grad(false);
  return mi_jsd_graph(ad::Var<S>::constant(tj), ad::Var<S>::constant(tm), variant).item();
}

/// Energy and squared input-gradient norms of a data batch. With
/// `create_graph`, `penalty` can be differentiated w.r.t. the parameters.
template <typename S>
struct PenaltyTerms {
  ad::Var<S> energies;  // m x 1
  ad::Var<S> penalty;   // 1 x 1, mean_i |dE(x_i)/dx_i|^2
};

template <typename S>
PenaltyTerms<S> penalty_graph(const EnergyFunction<S>& E, std::span<const ad::Var<S>> params, const Mat<S>& x,
                              bool create_graph) {
  auto xv = ad::Var<S>::variable(x);
  auto e = E.apply(xv, params);
  require_finite(e.value(), "energy on data");
  auto gx = ad::grad(ad::sum(e), {xv}, create_graph)[0];
  require_finite(gx.value(), "energy gradient on data");
  auto pen = ad::scale(ad::sum(ad::square(gx)), S(1) / static_cast<S>(x.rows()));
  return {e, pen};
}

template <typename S>
S gradient_penalty(const EnergyFunction<S>& E, const SampleBatch<S>& x_real) {
  if (x_real.dim() != E.input_dim()) throw ConfigError("gradient_penalty: sample dimension mismatch");
  const auto p = nn::bind(E.params(), false);
  return penalty_graph(E, std::span<const ad::Var<S>>(p), x_real.values, false).penalty.item();
}

template <typename S>
struct Objective {
  ad::Var<S> loss;
  LossBreakdown parts;
};

/// loss_E = mean E(x_real) - mean E(x_fake) + lambda * penalty(x_real).
template <typename S>
Objective<S> energy_objective(const EnergyFunction<S>& E, std::span<const ad::Var<S>> params,
                              const SampleBatch<S>& x_real, const SampleBatch<S>& x_fake, double lambda) {
  if (lambda < 0) throw ConfigError("energy_loss: penalty coefficient must be >= 0");
  if (x_real.rows() != x_fake.rows()) {
    throw ConfigError("energy_loss: batch sizes differ (" + std::to_string(x_real.rows()) + " vs " +
                      std::to_string(x_fake.rows()) + ")");
  }
  if (x_real.dim() != E.input_dim() || x_fake.dim() != E.input_dim()) {
    throw ConfigError("energy_loss: sample dimension mismatch");
  }
  bool trainable = false;
  for (const auto& p : params) trainable = trainable || p.requires_grad();
  auto terms = penalty_graph(E, params, x_real.values, trainable);
  auto e_fake = E.apply(ad::Var<S>::constant(x_fake.values), params);
  require_finite(e_fake.value(), "energy on generated samples");
  auto mean_real = ad::mean(terms.energies);
  auto mean_fake = ad::mean(e_fake);
  auto loss = ad::add(ad::sub(mean_real, mean_fake), ad::scale(terms.penalty, static_cast<S>(lambda)));
  Objective<S> out{loss, {}};
  out.parts.energy_real = mean_real.item();
  out.parts.energy_fake = mean_fake.item();
  out.parts.penalty = terms.penalty.item();
  out.parts.loss_E = loss.item();
  return out;
}

template <typename S>
std::pair<S, LossBreakdown> energy_loss(const EnergyFunction<S>& E, const SampleBatch<S>& x_real,
                                        const SampleBatch<S>& x_fake, double lambda) {
  const auto p = nn::bind(E.params(), false);
  auto obj = energy_objective(E, std::span<const ad::Var<S>>(p), x_real, x_fake, lambda);
  return {obj.loss.item(), obj.parts};
}

/// Generator and statistics objectives built from one forward pass of G.
template <typename S>
struct AdversarialObjective {
  ad::Var<S> loss_G;  // mean E(G(z)) - mi
  ad::Var<S> loss_T;  // -mi
  LossBreakdown parts;
};

template <typename S>
AdversarialObjective<S> adversarial_objective(const Models<S>& models, const std::vector<ad::Var<S>>& energy_params,
                                              const std::vector<ad::Var<S>>& generator_params,
                                              const std::vector<ad::Var<S>>& statistics_params,
                                              const LatentBatch<S>& z, const ShuffledLatentBatch<S>& z_marg,
                                              MiVariant variant) {
  if (z.rows() != z_marg.rows() || z.dim() != z_marg.dim()) throw ConfigError("generator_loss: latent shapes differ");
  if (z.dim() != models.generator.latent_dim()) throw ConfigError("generator_loss: latent dimension mismatch");
  if (models.generator.output_dim() != models.energy.input_dim()) {
    throw ConfigError("generator_loss: generator output does not match energy input");
  }
  auto x_fake = models.generator.apply(ad::Var<S>::constant(z.values), generator_params);
  require_finite(x_fake.value(), "generator output");
  auto e_fake = models.energy.apply(x_fake, energy_params);
  require_finite(e_fake.value(), "energy on generated samples");
  auto t_joint = models.statistics.apply(x_fake, ad::Var<S>::constant(z.values), statistics_params);
  auto t_marg = models.statistics.apply(x_fake, ad::Var<S>::constant(z_marg.values), statistics_params);
  require_finite(t_joint.value(), "statistic on joint pairs");
  require_finite(t_marg.value(), "statistic on marginal pairs");
  auto mi = mi_jsd_graph(t_joint, t_marg, variant);
  auto mean_e = ad::mean(e_fake);
  AdversarialObjective<S> out{ad::sub(mean_e, mi), ad::neg(mi), {}};
  out.parts.energy_fake = mean_e.item();
  out.parts.generator_energy = mean_e.item();
  out.parts.mi_estimate = mi.item();
  out.parts.loss_G = out.loss_G.item();
  out.parts.loss_T = out.loss_T.item();
  return out;
}

template <typename S>
std::pair<S, LossBreakdown> generator_loss(const EnergyFunction<S>& E, const StatisticsNetwork<S>& T,
                                           const Generator<S>& G, const LatentBatch<S>& z,
                                           const ShuffledLatentBatch<S>& z_marg,
                                           MiVariant variant = MiVariant::Softplus) {
  ad::GradMode no_grad(false);
  Models<S> view{E, G, T};
  auto obj = adversarial_objective(view, nn::bind(E.params(), false), nn::bind(G.params(), false),
                                   nn::bind(T.params(), false), z, z_marg, variant);
  return {obj.loss_G.item(), obj.parts};
}

/// -mi_jsd(T, x_fake, z, z_marg); minimized w.r.t. the statistics parameters.
template <typename S>
S statistics_loss(const StatisticsNetwork<S>& T, const SampleBatch<S>& x_fake, const LatentBatch<S>& z,
                  const ShuffledLatentBatch<S>& z_marg, MiVariant variant = MiVariant::Softplus) {
  return -mi_jsd(T, x_fake, z, z_marg, variant);
}

/// mean_i [ 1/2 |dE/dx|^2 - sum_j d2E/dx_j^2 ] with the Hessian diagonal from
/// central second differences of step h. Diagnostic only.
template <typename S>
S score_matching_diag(const EnergyFunction<S>& E, const SampleBatch<S>& x, S h) {
  constexpr Index kMaxDim = 16;
  if (x.dim() > kMaxDim) {
    throw ScopeError("score_matching_diag is a low-dimensional diagnostic (d <= 16), got d = " +
                     std::to_string(x.dim()));
  }
  if (!(h > 0)) throw ConfigError("score_matching_diag: step must be positive");
  const Mat<S> g = grad_energy_x(E, x);
  const Vec<S> e0 = energy(E, x);
  Vec<S> laplacian = Vec<S>::Zero(x.rows());
  for (Index j = 0; j < x.dim(); ++j) {
    SampleBatch<S> plus = x, minus = x;
    plus.values.col(j).array() += h;
    minus.values.col(j).array() -= h;
    laplacian += ((energy(E, plus) - 2 * e0 + energy(E, minus)) / (h * h));
  }
  const Vec<S> per_row = 0.5 * g.rowwise().squaredNorm() - laplacian;
  return per_row.mean();
}

}  // namespace meg
