// SPDX-License-Identifier: Apache-2.0
//
// Small fixed networks with closed-form behaviour, shared by the unit tests.

#pragma once

#include <filesystem>
#include <random>
#include <string>

#include "meg/models.hpp"
#include "meg/rng.hpp"

namespace meg::test {

template <typename S = double>
Mat<S> random_mat(Index r, Index c, Rng& rng, double scale = 1.0) {
  Mat<S> m(r, c);
  for (Index i = 0; i < m.size(); ++i) m.data()[i] = static_cast<S>(scale * rng.normal());
  return m;
}

template <typename S = double>
Mat<S> rows(std::initializer_list<std::initializer_list<double>> values) {
  Mat<S> m(static_cast<Index>(values.size()), static_cast<Index>(values.begin()->size()));
  Index i = 0;
  for (const auto& r : values) {
    Index j = 0;
    for (double v : r) m(i, j++) = static_cast<S>(v);
    ++i;
  }
  return m;
}

/// E(x) = 1/2 |x|^2
template <typename S = double>
EnergyFunction<S> quadratic_energy(Index d) {
  return EnergyFunction<S>(nn::NetworkSpec::parse("halfsq", nn::Shape::flat(d)), {});
}

/// Single dense unit with all parameters set to `value`; the zero map for 0.
template <typename S = double>
EnergyFunction<S> constant_energy(Index d, double bias = 0) {
  auto spec = nn::NetworkSpec::parse("dense:1", nn::Shape::flat(d));
  nn::ParameterSet<S> p{Mat<S>::Zero(d, 1), Mat<S>::Constant(1, 1, static_cast<S>(bias))};
  return EnergyFunction<S>(std::move(spec), std::move(p));
}

template <typename S = double>
EnergyFunction<S> random_energy(Index d, Rng& rng, const std::string& program = "dense:16,tanh,dense:16,softplus,dense:1") {
  return EnergyFunction<S>::init(nn::NetworkSpec::parse(program, nn::Shape::flat(d)), rng);
}

template <typename S = double>
Generator<S> identity_generator(Index k) {
  return Generator<S>(nn::NetworkSpec::parse("", nn::Shape::flat(k)), {});
}

template <typename S = double>
Generator<S> random_generator(Index k, Index d, Rng& rng) {
  return Generator<S>::init(
      nn::NetworkSpec::parse("dense:16,tanh,dense:" + std::to_string(d), nn::Shape::flat(k)), rng);
}

/// Concat head "dense:1" with every parameter equal to `value` on the bias only.
template <typename S = double>
StatisticsNetwork<S> constant_statistic(Index d, Index k, double value = 0) {
  auto enc = nn::NetworkSpec::parse("", nn::Shape::flat(d));
  auto head = nn::NetworkSpec::parse("dense:1", nn::Shape::flat(d + k));
  nn::ParameterSet<S> p{Mat<S>::Zero(d + k, 1), Mat<S>::Constant(1, 1, static_cast<S>(value))};
  return StatisticsNetwork<S>(std::move(enc), std::move(head), Combine::Concat, k, std::move(p));
}

/// T(x, z) = <x, z>
template <typename S = double>
StatisticsNetwork<S> inner_statistic(Index k) {
  auto enc = nn::NetworkSpec::parse("", nn::Shape::flat(k));
  auto head = nn::NetworkSpec::parse("", nn::Shape::flat(2 * k));
  return StatisticsNetwork<S>(std::move(enc), std::move(head), Combine::Inner, k, {});
}

template <typename S = double>
StatisticsNetwork<S> random_statistic(Index d, Index k, Rng& rng) {
  return StatisticsNetwork<S>::init(nn::NetworkSpec::parse("", nn::Shape::flat(d)), "dense:16,tanh,dense:1",
                                    Combine::Concat, k, rng);
}

/// Fresh empty directory under the system temp dir.
inline std::filesystem::path scratch_dir(const std::string& tag) {
  static std::mt19937_64 gen(std::random_device{}());
  auto dir = std::filesystem::temp_directory_path() / ("meg-test-" + tag + "-" + std::to_string(gen()));
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

}  // namespace meg::test
