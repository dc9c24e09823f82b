// SPDX-License-Identifier: Apache-2.0
//
// Latent-space versus data-space MCMC on the same trained model, from
// matched starting points and identical random streams.

#pragma once

#include <cmath>
#include <optional>
#include <vector>

#include "meg/modes.hpp"
#include "meg/sampler.hpp"

namespace meg {

struct ChainQualityReport {
  Space space = Space::Latent;
  double acceptance_rate = 0;
  /// Mean data-space energy E(x) at the final position of each chain.
  double mean_final_energy = 0;
  std::optional<double> in_mode_fraction;
  std::vector<double> per_chain_in_mode;
  Index chains = 0, kept_per_chain = 0;
  /// Data-space samples at the start and the end of every chain.
  Mat<double> start_samples, end_samples;
  /// All kept data-space samples, chain-major.
  Mat<double> kept_samples;
  std::string warning;
};

struct SignTestResult {
  Index wins = 0, losses = 0, ties = 0;
  /// One-sided P(X >= wins) for X ~ Binomial(wins + losses, 1/2).
  double p_value = 1.0;
};

/// Paired sign test of a > b; ties are dropped.
SignTestResult sign_test(const std::vector<double>& a, const std::vector<double>& b);

struct ModeReference {
  Mat<double> centers;
  double sigma = 0;
  double cutoff = 3;
};

struct ChainComparison {
  ChainQualityReport latent, visible;
  std::optional<SignTestResult> sign;
};

namespace detail {

template <typename S>
void fill_quality(ChainQualityReport& r, const MALAResult& chain, const Mat<double>& kept_x,
                  const EnergyFunction<S>& E, const std::optional<ModeReference>& modes) {
  r.acceptance_rate = chain.acceptance_rate;
  r.chains = static_cast<Index>(chain.chains.size());
  r.kept_per_chain = chain.kept_per_chain;
  r.warning = chain.warning;
  r.kept_samples = kept_x;
  r.end_samples.resize(r.chains, kept_x.cols());
  for (Index c = 0; c < r.chains; ++c) r.end_samples.row(c) = kept_x.row((c + 1) * r.kept_per_chain - 1);
  const Vec<S> e = energy(E, SampleBatch<S>{r.end_samples.template cast<S>()});
  r.mean_final_energy = e.template cast<double>().mean();
  if (modes) {
    const auto a = nearest_mode_assign(kept_x, modes->centers, modes->sigma, modes->cutoff);
    r.in_mode_fraction = a.in_mode_fraction();
    r.per_chain_in_mode.assign(static_cast<std::size_t>(r.chains), 0.0);
    for (Index c = 0; c < r.chains; ++c) {
      Index n = 0;
      for (Index t = 0; t < r.kept_per_chain; ++t) n += a.in_mode[static_cast<std::size_t>(c * r.kept_per_chain + t)];
      r.per_chain_in_mode[static_cast<std::size_t>(c)] =
          static_cast<double>(n) / static_cast<double>(r.kept_per_chain);
    }
  }
}

}  // namespace detail

/// Starts `chains` latent chains at z0 ~ N(0, I) and as many data-space
/// chains at G(z0). Both samplers draw from the same stream seed.
template <typename S>
ChainComparison compare_chains(const EnergyFunction<S>& E, const Generator<S>& G, const MALAConfig& cfg_latent,
                               const MALAConfig& cfg_visible, Index chains, std::uint64_t seed,
                               const std::optional<ModeReference>& modes = std::nullopt) {
  if (cfg_latent.chain_length != cfg_visible.chain_length || cfg_latent.burn_in != cfg_visible.burn_in) {
    throw ConfigError("compare_chains: latent and visible runs must share chain_length and burn_in");
  }
  if (chains < 1) throw ConfigError("compare_chains: need at least one chain");
  MALAConfig lat = cfg_latent, vis = cfg_visible;
  lat.space = Space::Latent;
  vis.space = Space::Visible;

  Rng init = Rng::stream(seed, 0);
  const auto z0 = sample_prior<S>(LatentPrior{G.latent_dim()}, chains, init);
  const SampleBatch<S> x0 = generate(G, z0);

  ChainComparison out;
  out.latent.space = Space::Latent;
  out.visible.space = Space::Visible;
  out.latent.start_samples = x0.values.template cast<double>();
  out.visible.start_samples = out.latent.start_samples;

  Rng latent_rng = Rng::stream(seed, 1);
  const auto latent = run_mala(z0, E, G, lat, latent_rng);
  detail::fill_quality(out.latent, latent.chain, latent.samples.values.template cast<double>(), E, modes);

  Rng visible_rng = Rng::stream(seed, 1);
  const auto visible = run_visible_mala(x0, E, vis, visible_rng);
  detail::fill_quality(out.visible, visible, visible.kept, E, modes);

  if (modes) out.sign = sign_test(out.latent.per_chain_in_mode, out.visible.per_chain_in_mode);
  return out;
}

}  // namespace meg
