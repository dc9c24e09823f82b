// SPDX-License-Identifier: Apache-2.0
//
// Metropolis-adjusted Langevin sampling, either in the latent space of the
// generator (target exp(-E(G(z)))) or directly in data space (exp(-E(x))).
//
// Every chain row owns its own random stream, so results do not depend on
// how many chains are advanced together.

#pragma once

#include <cmath>
#include <functional>
#include <sstream>
#include <string>
#include <vector>

#include "meg/models.hpp"
#include "meg/rng.hpp"

namespace meg {

enum class Space { Latent, Visible };

inline const char* to_string(Space s) { return s == Space::Latent ? "latent" : "visible"; }
inline Space parse_space(const std::string& s) {
  if (s == "latent") return Space::Latent;
  if (s == "visible") return Space::Visible;
  throw ConfigError("space must be 'latent' or 'visible', got '" + s + "'");
}

struct MALAConfig {
  double step_size = 0.01;
  Index chain_length = 200;
  Index burn_in = 100;
  Space space = Space::Latent;
  /// Adds the N(0, I) latent prior term 1/2 |z|^2 to the latent target.
  bool include_prior = false;

  void validate() const {
    if (!(step_size > 0)) throw ConfigError("MALA step size must be > 0");
    if (chain_length < 1) throw ConfigError("chain_length must be >= 1");
    if (burn_in < 0 || burn_in >= chain_length) throw ConfigError("burn_in must satisfy 0 <= burn_in < chain_length");
  }
};

/// Test hooks. `zero_noise` sets the Langevin noise to 0; `force_reject`
/// treats every proposal as rejected.
struct MALAHooks {
  bool zero_noise = false;
  bool force_reject = false;
};

struct ChainState {
  Vec<double> position;
  double current_energy = 0;
  std::int64_t accepted_count = 0;
  std::int64_t proposed_count = 0;
};

/// Energy and gradient of the chain target, evaluated row-wise.
template <typename S>
struct Target {
  std::function<void(const Mat<S>& positions, Vec<S>& energies, Mat<S>& gradients)> evaluate;
  Index dim = 0;
};

template <typename S>
Target<S> latent_target(const EnergyFunction<S>& E, const Generator<S>& G, bool include_prior = false) {
  if (G.output_dim() != E.input_dim()) throw ConfigError("latent target: generator output != energy input");
  Target<S> t;
  t.dim = G.latent_dim();
  t.evaluate = [&E, &G, include_prior](const Mat<S>& z, Vec<S>& energies, Mat<S>& grads) {
    const auto pe = nn::bind(E.params(), false);
    const auto pg = nn::bind(G.params(), false);
    auto zv = ad::Var<S>::variable(z);
    auto e = E.apply(G.apply(zv, pg), pe);
    if (include_prior) e = ad::add(e, ad::scale(ad::sum_cols(ad::square(zv)), S(0.5)));
    energies = e.value().col(0);
    grads = ad::grad(ad::sum(e), {zv})[0].value();
  };
  return t;
}

template <typename S>
Target<S> visible_target(const EnergyFunction<S>& E) {
  Target<S> t;
  t.dim = E.input_dim();
  t.evaluate = [&E](const Mat<S>& x, Vec<S>& energies, Mat<S>& grads) {
    const auto pe = nn::bind(E.params(), false);
    auto xv = ad::Var<S>::variable(x);
    auto e = E.apply(xv, pe);
    energies = e.value().col(0);
    grads = ad::grad(ad::sum(e), {xv})[0].value();
  };
  return t;
}

/// z - alpha * grad + sqrt(2 alpha) * noise
inline Vec<double> mala_propose(const Vec<double>& position, const Vec<double>& gradient, double alpha,
                                const Vec<double>& noise) {
  return position - alpha * gradient + std::sqrt(2 * alpha) * noise;
}

/// log q(to | from) up to a constant.
inline double log_proposal_density(const Vec<double>& to, const Vec<double>& from, const Vec<double>& grad_from,
                                   double alpha) {
  return -(to - from + alpha * grad_from).squaredNorm() / (4 * alpha);
}

/// log of the Metropolis-Hastings ratio for moving z -> z_new.
inline double mala_log_accept(const Vec<double>& z, double energy_z, const Vec<double>& grad_z, const Vec<double>& z_new,
                              double energy_new, const Vec<double>& grad_new, double alpha) {
  return -energy_new + energy_z + log_proposal_density(z, z_new, grad_new, alpha) -
         log_proposal_density(z_new, z, grad_z, alpha);
}

/// min(1, r) computed from log r; never inf or NaN for finite inputs.
inline double mala_accept_prob(double log_r) {
  if (std::isnan(log_r)) return 0.0;
  return log_r >= 0 ? 1.0 : std::exp(log_r);
}

struct MALAResult {
  /// Kept positions, (chain_length - burn_in) per chain, chain-major:
  /// rows [c * kept, (c + 1) * kept) belong to chain c.
  Mat<double> kept;
  Index kept_per_chain = 0;
  Mat<double> initial;
  std::vector<ChainState> chains;
  double acceptance_rate = 0;
  std::string warning;

  /// Row of the last kept position of each chain.
  Mat<double> final_positions() const {
    Mat<double> out(static_cast<Index>(chains.size()), kept.cols());
    for (Index c = 0; c < out.rows(); ++c) out.row(c) = kept.row((c + 1) * kept_per_chain - 1);
    return out;
  }
};

namespace detail {

inline std::string dump_position(const Vec<double>& p) {
  std::ostringstream os;
  os.precision(17);
  os << "(";
  for (Index i = 0; i < p.size(); ++i) os << (i ? ", " : "") << p[i];
  os << ")";
  return os.str();
}

template <typename S>
void evaluate_rows(const Target<S>& target, const Mat<double>& positions, Vec<double>& energies, Mat<double>& grads) {
  Vec<S> e;
  Mat<S> g;
  target.evaluate(positions.template cast<S>(), e, g);
  energies = e.template cast<double>();
  grads = g.template cast<double>();
}

}  // namespace detail

/// Runs one chain per row of `start`. Chain c draws from `rng.split()` taken
/// in row order.
template <typename S>
MALAResult run_chains(const Mat<double>& start, const Target<S>& target, const MALAConfig& cfg, Rng& rng,
                      const MALAHooks& hooks = {}) {
  cfg.validate();
  if (start.cols() != target.dim) {
    throw ConfigError("MALA: start dimension " + std::to_string(start.cols()) + " != target dimension " +
                      std::to_string(target.dim));
  }
  const Index n = start.rows(), k = start.cols();
  if (n < 1) throw ConfigError("MALA: no chains");
  const Index row = first_nonfinite_row(start);
  if (row >= 0) throw NumericFault("MALA: non-finite start position", row);

  std::vector<Rng> streams;
  for (Index c = 0; c < n; ++c) streams.push_back(rng.split());

  MALAResult res;
  res.initial = start;
  res.kept_per_chain = cfg.chain_length - cfg.burn_in;
  res.kept.resize(n * res.kept_per_chain, k);
  res.chains.resize(static_cast<std::size_t>(n));

  Mat<double> pos = start, grads, prop(n, k), prop_grads;
  Vec<double> energies, prop_energies;
  detail::evaluate_rows(target, pos, energies, grads);

  auto check = [](const Mat<double>& p, const Vec<double>& e, const Mat<double>& g, const char* what) {
    for (Index i = 0; i < p.rows(); ++i) {
      if (!std::isfinite(e[i]) || !g.row(i).allFinite()) {
        throw NumericFault(std::string("MALA: non-finite energy or gradient at ") + what + " position " +
                               detail::dump_position(p.row(i).transpose()) + " of chain " + std::to_string(i),
                           i);
      }
    }
  };
  check(pos, energies, grads, "current");

  std::int64_t accepted = 0, proposed = 0;
  Vec<double> noise(k);
  for (Index step = 0; step < cfg.chain_length; ++step) {
    for (Index c = 0; c < n; ++c) {
      for (Index j = 0; j < k; ++j) noise[j] = hooks.zero_noise ? 0.0 : streams[c].normal();
      prop.row(c) = mala_propose(pos.row(c).transpose(), grads.row(c).transpose(), cfg.step_size, noise).transpose();
    }
    detail::evaluate_rows(target, prop, prop_energies, prop_grads);
    check(prop, prop_energies, prop_grads, "proposed");
    for (Index c = 0; c < n; ++c) {
      const double log_r = mala_log_accept(pos.row(c).transpose(), energies[c], grads.row(c).transpose(),
                                           prop.row(c).transpose(), prop_energies[c], prop_grads.row(c).transpose(),
                                           cfg.step_size);
      // u in (0, 1]; accept iff log u <= log r.
      const double log_u = std::log1p(-streams[c].uniform());
      auto& st = res.chains[static_cast<std::size_t>(c)];
      st.proposed_count++;
      ++proposed;
      if (!hooks.force_reject && log_u <= log_r) {
        pos.row(c) = prop.row(c);
        energies[c] = prop_energies[c];
        grads.row(c) = prop_grads.row(c);
        st.accepted_count++;
        ++accepted;
      }
      if (step >= cfg.burn_in) res.kept.row(c * res.kept_per_chain + (step - cfg.burn_in)) = pos.row(c);
    }
  }
  for (Index c = 0; c < n; ++c) {
    res.chains[static_cast<std::size_t>(c)].position = pos.row(c).transpose();
    res.chains[static_cast<std::size_t>(c)].current_energy = energies[c];
  }
  res.acceptance_rate = proposed ? static_cast<double>(accepted) / static_cast<double>(proposed) : 0.0;
  if (accepted == 0) {
    res.warning = "no proposal was accepted; reduce the step size (currently " + std::to_string(cfg.step_size) + ")";
  }
  return res;
}

/// Latent-space MALA. Kept latent positions are mapped through G.
template <typename S>
struct LatentChainResult {
  MALAResult chain;
  SampleBatch<S> samples;
};

template <typename S>
LatentChainResult<S> run_mala(const LatentBatch<S>& z0, const EnergyFunction<S>& E, const Generator<S>& G,
                              const MALAConfig& cfg, Rng& rng, const MALAHooks& hooks = {}) {
  if (z0.dim() != G.latent_dim()) throw ConfigError("run_mala: latent dimension mismatch");
  LatentChainResult<S> out;
  out.chain = run_chains(z0.values.template cast<double>(), latent_target(E, G, cfg.include_prior), cfg, rng, hooks);
  out.samples = generate(G, LatentBatch<S>{out.chain.kept.template cast<S>()});
  return out;
}

template <typename S>
MALAResult run_visible_mala(const SampleBatch<S>& x0, const EnergyFunction<S>& E, const MALAConfig& cfg, Rng& rng,
                            const MALAHooks& hooks = {}) {
  if (x0.dim() != E.input_dim()) throw ConfigError("run_visible_mala: sample dimension mismatch");
  return run_chains(x0.values.template cast<double>(), visible_target(E), cfg, rng, hooks);
}

}  // namespace meg
