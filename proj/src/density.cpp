// SPDX-License-Identifier: Apache-2.0
#include "meg/density.hpp"

#include <array>
#include <cstdio>
#include <sstream>

#include "json.hpp"
#include "meg/io.hpp"

namespace meg {

std::vector<GridPeak> local_maxima(const DensityGrid& grid, std::size_t limit) {
  const Mat<double>& p = grid.probabilities;
  std::vector<GridPeak> peaks;
  for (Index i = 0; i < p.rows(); ++i) {
    for (Index j = 0; j < p.cols(); ++j) {
      const double v = p(i, j);
      bool peak = true;
      for (int di = -1; di <= 1 && peak; ++di) {
        for (int dj = -1; dj <= 1 && peak; ++dj) {
          if (di == 0 && dj == 0) continue;
          const Index a = i + di, b = j + dj;
          if (a < 0 || b < 0 || a >= p.rows() || b >= p.cols()) continue;
          const bool earlier = a < i || (a == i && b < j);
          // Strict against earlier neighbours, non-strict against later ones.
          if (earlier ? p(a, b) >= v : p(a, b) > v) peak = false;
        }
      }
      if (peak) peaks.push_back({grid.spec.x_center(i), grid.spec.y_center(j), v});
    }
  }
  std::stable_sort(peaks.begin(), peaks.end(),
                   [](const GridPeak& a, const GridPeak& b) { return a.probability > b.probability; });
  if (limit && peaks.size() > limit) peaks.resize(limit);
  return peaks;
}

std::string render_heatmap(const Mat<double>& field) {
  const Index nx = field.rows(), ny = field.cols();
  const double lo = field.minCoeff(), hi = field.maxCoeff();
  const double span = hi > lo ? hi - lo : 1.0;
  // Piecewise-linear dark blue -> teal -> yellow ramp.
  static constexpr std::array<std::array<double, 3>, 5> kRamp{{
      {0.05, 0.03, 0.25}, {0.23, 0.32, 0.55}, {0.13, 0.57, 0.55}, {0.47, 0.82, 0.32}, {0.99, 0.91, 0.15}}};
  std::ostringstream os;
  os << "P6\n" << nx << " " << ny << "\n255\n";
  for (Index j = ny - 1; j >= 0; --j) {
    for (Index i = 0; i < nx; ++i) {
      const double t = std::clamp((field(i, j) - lo) / span, 0.0, 1.0) * (kRamp.size() - 1);
      const std::size_t k = std::min<std::size_t>(static_cast<std::size_t>(t), kRamp.size() - 2);
      const double f = t - static_cast<double>(k);
      for (int c = 0; c < 3; ++c) {
        const double v = (1 - f) * kRamp[k][c] + f * kRamp[k + 1][c];
        os.put(static_cast<char>(static_cast<unsigned char>(std::lround(255 * v))));
      }
    }
  }
  return os.str();
}

std::vector<std::filesystem::path> write_density_grid(const DensityGrid& g, const std::filesystem::path& stem) {
  std::ostringstream csv;
  csv << "x,y,energy,probability\n";
  char line[160];
  for (Index i = 0; i < g.spec.nx; ++i) {
    for (Index j = 0; j < g.spec.ny; ++j) {
      std::snprintf(line, sizeof line, "%.9g,%.9g,%.9g,%.9g\n", g.spec.x_center(i), g.spec.y_center(j),
                    g.energies(i, j), g.probabilities(i, j));
      csv << line;
    }
  }
  nlohmann::ordered_json meta;
  meta["bounds"] = {g.spec.x_min, g.spec.x_max, g.spec.y_min, g.spec.y_max};
  meta["resolution"] = {g.spec.nx, g.spec.ny};
  meta["cell_area"] = g.spec.cell_area();
  meta["log_partition"] = g.log_partition;
  meta["estimator"] = g.estimator;
  meta["mass"] = grid_mass(g);

  const std::filesystem::path csv_path = stem.string() + ".csv", meta_path = stem.string() + ".json",
                              img_path = stem.string() + ".ppm";
  io::write_file_atomic(csv_path, csv.str());
  io::write_file_atomic(meta_path, meta.dump(2) + "\n");
  io::write_file_atomic(img_path, render_heatmap(g.probabilities));
  return {csv_path, meta_path, img_path};
}

}  // namespace meg
