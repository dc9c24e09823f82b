// SPDX-License-Identifier: Apache-2.0
//
// Normalized density grids for two-dimensional energies.

#pragma once

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <limits>
#include <string>
#include <vector>

#include "meg/models.hpp"
#include "meg/rng.hpp"

namespace meg {

struct GridSpec {
  double x_min = -4, x_max = 4, y_min = -4, y_max = 4;
  Index nx = 300, ny = 300;

  void validate() const {
    if (!(x_max > x_min) || !(y_max > y_min)) throw ConfigError("density grid: empty bounds");
    if (nx < 1 || ny < 1) throw ConfigError("density grid: resolution must be >= 1");
  }
  double dx() const { return (x_max - x_min) / static_cast<double>(nx); }
  double dy() const { return (y_max - y_min) / static_cast<double>(ny); }
  double cell_area() const { return dx() * dy(); }
  double x_center(Index i) const { return x_min + (static_cast<double>(i) + 0.5) * dx(); }
  double y_center(Index j) const { return y_min + (static_cast<double>(j) + 0.5) * dy(); }
};

struct DensityGrid {
  GridSpec spec;
  Mat<double> energies;       // nx x ny, (i, j) = cell (x_i, y_j)
  double log_partition = 0;
  Mat<double> probabilities;  // density values, sum * cell_area = 1
  std::string estimator = "riemann";
};

namespace detail {

inline double log_sum_exp(const Mat<double>& a) {
  const double m = a.maxCoeff();
  if (!std::isfinite(m)) return m;
  return m + std::log((a.array() - m).exp().sum());
}

template <typename S>
void require_planar(const EnergyFunction<S>& E) {
  if (E.input_dim() != 2) {
    throw ScopeError("density grids are defined for 2-D data only, energy input dimension is " +
                     std::to_string(E.input_dim()));
  }
}

}  // namespace detail

/// Energies at the cell centers.
template <typename S>
Mat<double> grid_energies(const EnergyFunction<S>& E, const GridSpec& spec) {
  detail::require_planar(E);
  spec.validate();
  Mat<double> out(spec.nx, spec.ny);
  // One grid column of y values per x row.
  Mat<S> pts(spec.ny, 2);
  for (Index i = 0; i < spec.nx; ++i) {
    for (Index j = 0; j < spec.ny; ++j) {
      pts(j, 0) = static_cast<S>(spec.x_center(i));
      pts(j, 1) = static_cast<S>(spec.y_center(j));
    }
    out.row(i) = energy(E, SampleBatch<S>{pts}).template cast<double>().transpose();
  }
  return out;
}

/// log Z by a midpoint Riemann sum over the grid.
inline double riemann_log_partition(const Mat<double>& energies, const GridSpec& spec) {
  return detail::log_sum_exp(-energies) + std::log(spec.cell_area());
}

template <typename S>
double estimate_partition(const EnergyFunction<S>& E, const GridSpec& spec) {
  return riemann_log_partition(grid_energies(E, spec), spec);
}

/// log Z by importance sampling. Proposals are drawn from a Gaussian kernel
/// density over generator samples: pick G(z), add N(0, h^2 I).
template <typename S>
double estimate_partition_importance(const EnergyFunction<S>& E, const Generator<S>& G, Index n_centers,
                                     Index n_draws, double bandwidth, Rng& rng) {
  detail::require_planar(E);
  if (n_centers < 1 || n_draws < 1) throw ConfigError("importance sampling: counts must be >= 1");
  if (!(bandwidth > 0)) throw ConfigError("importance sampling: bandwidth must be > 0");
  const auto z = sample_prior<S>(LatentPrior{G.latent_dim()}, n_centers, rng);
  const Mat<double> centers = generate(G, z).values.template cast<double>();
  Mat<double> draws(n_draws, 2);
  for (Index i = 0; i < n_draws; ++i) {
    const Index c = static_cast<Index>(rng.uniform_index(static_cast<std::uint64_t>(n_centers)));
    draws(i, 0) = centers(c, 0) + bandwidth * rng.normal();
    draws(i, 1) = centers(c, 1) + bandwidth * rng.normal();
  }
  const Vec<double> e = energy(E, SampleBatch<S>{draws.template cast<S>()}).template cast<double>();
  const double log_norm = -std::log(2 * M_PI * bandwidth * bandwidth) - std::log(static_cast<double>(n_centers));
  Mat<double> log_w(n_draws, 1);
  Vec<double> kern(n_centers);
  for (Index i = 0; i < n_draws; ++i) {
    for (Index c = 0; c < n_centers; ++c)
      kern[c] = -(draws.row(i) - centers.row(c)).squaredNorm() / (2 * bandwidth * bandwidth);
    const double m = kern.maxCoeff();
    const double log_q = log_norm + m + std::log((kern.array() - m).exp().sum());
    log_w(i, 0) = -e[i] - log_q;
  }
  return detail::log_sum_exp(log_w) - std::log(static_cast<double>(n_draws));
}

/// probabilities = exp(-energies - log Z), renormalized on the grid so that
/// the cell masses sum to one.
inline DensityGrid normalize_grid(Mat<double> energies, const GridSpec& spec, double log_partition,
                                  std::string estimator) {
  DensityGrid g;
  g.spec = spec;
  g.energies = std::move(energies);
  g.log_partition = log_partition;
  g.estimator = std::move(estimator);
  // Normalization is done in log space against the grid's own mass so that
  // overflowing energies cannot produce NaN cells.
  const double log_mass = detail::log_sum_exp(-g.energies) + std::log(spec.cell_area());
  g.probabilities = (-g.energies.array() - log_mass).exp().matrix();
  return g;
}

template <typename S>
DensityGrid density_grid(const EnergyFunction<S>& E, const GridSpec& spec) {
  auto energies = grid_energies(E, spec);
  const double log_z = riemann_log_partition(energies, spec);
  return normalize_grid(std::move(energies), spec, log_z, "riemann");
}

struct GridPeak {
  double x = 0, y = 0;
  double probability = 0;
};

/// Cells not exceeded by any of their 8 neighbours, strongest first. Within a
/// plateau only the first cell in raster order is reported.
std::vector<GridPeak> local_maxima(const DensityGrid& grid, std::size_t limit = 0);

/// Σ p * cell_area.
inline double grid_mass(const DensityGrid& g) { return g.probabilities.sum() * g.spec.cell_area(); }

/// Writes `<stem>.csv` (x,y,energy,probability), `<stem>.json` (bounds,
/// resolution, log Z) and `<stem>.ppm` (heatmap). Returns the written paths.
std::vector<std::filesystem::path> write_density_grid(const DensityGrid& g, const std::filesystem::path& stem);

/// Binary PPM of an nx x ny field, y increasing upwards.
std::string render_heatmap(const Mat<double>& field);

}  // namespace meg
