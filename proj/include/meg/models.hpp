// SPDX-License-Identifier: Apache-2.0
//
// The three networks of the method and the latent prior:
//   EnergyFunction     x -> E(x), an unnormalized negative log density
//   Generator          z -> G(z), the amortized sampler
//   StatisticsNetwork  (x, z) -> T(x, z), the mutual-information critic

#pragma once

#include <span>
#include <string>
#include <utility>

#include "meg/autodiff.hpp"
#include "meg/nn.hpp"
#include "meg/rng.hpp"

namespace meg {

template <typename S>
struct LatentBatch {
  Mat<S> values;  // m x k
  Index rows() const { return values.rows(); }
  Index dim() const { return values.cols(); }
};

template <typename S>
struct SampleBatch {
  Mat<S> values;  // m x d
  Index rows() const { return values.rows(); }
  Index dim() const { return values.cols(); }
};

/// Index of the first row holding a non-finite entry, or -1.
template <typename Derived>
Index first_nonfinite_row(const Eigen::MatrixBase<Derived>& m) {
  for (Index i = 0; i < m.rows(); ++i) {
    if (!m.row(i).allFinite()) return i;
  }
  return -1;
}

template <typename Derived>
void require_finite(const Eigen::MatrixBase<Derived>& m, const std::string& what) {
  const Index row = first_nonfinite_row(m);
  if (row >= 0) throw NumericFault(what + " is not finite", row);
}

namespace detail {
template <typename S>
std::span<const ad::Var<S>> subspan(const std::vector<ad::Var<S>>& v, std::size_t offset, std::size_t count) {
  return std::span<const ad::Var<S>>(v).subspan(offset, count);
}
}  // namespace detail

template <typename S>
class EnergyFunction {
 public:
  EnergyFunction() = default;
  EnergyFunction(nn::NetworkSpec spec, nn::ParameterSet<S> params) : spec_(std::move(spec)), params_(std::move(params)) {
    if (spec_.output_shape().size() != 1) throw ConfigError("energy network must output one scalar per row");
    check_params();
  }
  static EnergyFunction init(nn::NetworkSpec spec, Rng& rng) {
    auto params = nn::init_parameters<S>(spec, rng);
    return EnergyFunction(std::move(spec), std::move(params));
  }

  const nn::NetworkSpec& spec() const { return spec_; }
  Index input_dim() const { return spec_.input.size(); }
  nn::ParameterSet<S>& params() { return params_; }
  const nn::ParameterSet<S>& params() const { return params_; }

  /// m x d -> m x 1
  ad::Var<S> apply(const ad::Var<S>& x, std::span<const ad::Var<S>> p) const { return nn::forward(spec_, x, p); }

  template <typename T>
  EnergyFunction<T> cast() const {
    return EnergyFunction<T>(spec_, nn::cast_parameters<T>(params_));
  }

 private:
  void check_params() const {
    const auto shapes = nn::parameter_shapes(spec_);
    if (shapes.size() != params_.size()) throw ConfigError("energy parameter count mismatch");
    for (std::size_t i = 0; i < shapes.size(); ++i)
      if (params_[i].rows() != shapes[i].first || params_[i].cols() != shapes[i].second)
        throw ConfigError("energy parameter " + std::to_string(i) + " has wrong shape");
  }
  nn::NetworkSpec spec_;
  nn::ParameterSet<S> params_;
};

template <typename S>
class Generator {
 public:
  Generator() = default;
  Generator(nn::NetworkSpec spec, nn::ParameterSet<S> params) : spec_(std::move(spec)), params_(std::move(params)) {
    const auto shapes = nn::parameter_shapes(spec_);
    if (shapes.size() != params_.size()) throw ConfigError("generator parameter count mismatch");
    for (std::size_t i = 0; i < shapes.size(); ++i)
      if (params_[i].rows() != shapes[i].first || params_[i].cols() != shapes[i].second)
        throw ConfigError("generator parameter " + std::to_string(i) + " has wrong shape");
  }
  static Generator init(nn::NetworkSpec spec, Rng& rng) {
    auto params = nn::init_parameters<S>(spec, rng);
    return Generator(std::move(spec), std::move(params));
  }

  const nn::NetworkSpec& spec() const { return spec_; }
  Index latent_dim() const { return spec_.input.size(); }
  Index output_dim() const { return spec_.output_shape().size(); }
  nn::ParameterSet<S>& params() { return params_; }
  const nn::ParameterSet<S>& params() const { return params_; }

  ad::Var<S> apply(const ad::Var<S>& z, std::span<const ad::Var<S>> p) const { return nn::forward(spec_, z, p); }

  template <typename T>
  Generator<T> cast() const {
    return Generator<T>(spec_, nn::cast_parameters<T>(params_));
  }

 private:
  nn::NetworkSpec spec_;
  nn::ParameterSet<S> params_;
};

/// How the encoded sample and the latent are combined.
///   Concat: T = head([enc(x), z])
///   Inner:  T = <enc(x), z>, the head must be empty
enum class Combine { Concat, Inner };

template <typename S>
class StatisticsNetwork {
 public:
  StatisticsNetwork() = default;
  StatisticsNetwork(nn::NetworkSpec encoder, nn::NetworkSpec head, Combine combine, Index latent_dim,
                    nn::ParameterSet<S> params)
      : encoder_(std::move(encoder)), head_(std::move(head)), combine_(combine), latent_dim_(latent_dim),
        params_(std::move(params)) {
    const Index enc_out = encoder_.output_shape().size();
    if (combine_ == Combine::Concat) {
      if (head_.input.size() != enc_out + latent_dim_) throw ConfigError("statistics head input width mismatch");
      if (head_.output_shape().size() != 1) throw ConfigError("statistics network must output one scalar per row");
    } else {
      if (!head_.layers.empty()) throw ConfigError("inner-product statistics network takes no head layers");
      if (enc_out != latent_dim_) throw ConfigError("inner-product statistics network needs enc(x) width == k");
    }
    if (params_.size() != nn::parameter_shapes(encoder_).size() + nn::parameter_shapes(head_).size()) {
      throw ConfigError("statistics parameter count mismatch");
    }
  }

  static StatisticsNetwork init(nn::NetworkSpec encoder, std::string_view head_program, Combine combine,
                                Index latent_dim, Rng& rng) {
    const Index enc_out = encoder.output_shape().size();
    nn::NetworkSpec head = nn::NetworkSpec::parse(
        combine == Combine::Concat ? head_program : std::string_view(), nn::Shape::flat(enc_out + latent_dim));
    auto params = nn::init_parameters<S>(encoder, rng);
    auto head_params = nn::init_parameters<S>(head, rng);
    for (auto& p : head_params) params.push_back(std::move(p));
    return StatisticsNetwork(std::move(encoder), std::move(head), combine, latent_dim, std::move(params));
  }

  const nn::NetworkSpec& encoder() const { return encoder_; }
  const nn::NetworkSpec& head() const { return head_; }
  Combine combine() const { return combine_; }
  Index data_dim() const { return encoder_.input.size(); }
  Index latent_dim() const { return latent_dim_; }
  nn::ParameterSet<S>& params() { return params_; }
  const nn::ParameterSet<S>& params() const { return params_; }

  /// (m x d, m x k) -> m x 1
  ad::Var<S> apply(const ad::Var<S>& x, const ad::Var<S>& z, const std::vector<ad::Var<S>>& p) const {
    if (x.rows() != z.rows()) {
      throw ConfigError("statistic: sample rows " + std::to_string(x.rows()) + " != latent rows " +
                        std::to_string(z.rows()));
    }
    if (z.cols() != latent_dim_) throw ConfigError("statistic: latent width mismatch");
    const std::size_t ne = nn::parameter_shapes(encoder_).size();
    ad::Var<S> h = nn::forward(encoder_, x, detail::subspan(p, 0, ne));
    if (combine_ == Combine::Inner) return ad::sum_cols(ad::mul(h, z));
    return nn::forward(head_, ad::concat_cols(h, z), detail::subspan(p, ne, p.size() - ne));
  }

  template <typename T>
  StatisticsNetwork<T> cast() const {
    return StatisticsNetwork<T>(encoder_, head_, combine_, latent_dim_, nn::cast_parameters<T>(params_));
  }

 private:
  nn::NetworkSpec encoder_;
  nn::NetworkSpec head_;
  Combine combine_ = Combine::Concat;
  Index latent_dim_ = 0;
  nn::ParameterSet<S> params_;
};

/// Standard normal N(0, I_k).
struct LatentPrior {
  Index dim = 1;
};

/// The three networks trained together.
template <typename S>
struct Models {
  EnergyFunction<S> energy;
  Generator<S> generator;
  StatisticsNetwork<S> statistics;

  template <typename T>
  Models<T> cast() const {
    return Models<T>{energy.template cast<T>(), generator.template cast<T>(), statistics.template cast<T>()};
  }
};

// ---------------------------------------------------------------------------
// Evaluation helpers (no parameter gradients)

template <typename S>
Vec<S> energy(const EnergyFunction<S>& E, const SampleBatch<S>& x) {
  if (x.dim() != E.input_dim()) {
    throw ConfigError("energy: sample dimension " + std::to_string(x.dim()) + " != energy input " +
                      std::to_string(E.input_dim()));
  }
  ad::GradMode no_grad(false);
  const auto p = nn::bind(E.params(), false);
  Vec<S> out = E.apply(ad::Var<S>::constant(x.values), p).value().col(0);
  require_finite(out, "energy");
  return out;
}

template <typename S>
SampleBatch<S> generate(const Generator<S>& G, const LatentBatch<S>& z) {
  if (z.dim() != G.latent_dim()) {
    throw ConfigError("generate: latent dimension " + std::to_string(z.dim()) + " != generator input " +
                      std::to_string(G.latent_dim()));
  }
  ad::GradMode no_grad(false);
  const auto p = nn::bind(G.params(), false);
  return SampleBatch<S>{G.apply(ad::Var<S>::constant(z.values), p).value()};
}

template <typename S>
Vec<S> statistic(const StatisticsNetwork<S>& T, const SampleBatch<S>& x, const LatentBatch<S>& z) {
  if (x.dim() != T.data_dim()) throw ConfigError("statistic: sample dimension mismatch");
  ad::GradMode no_grad(false);
  const auto p = nn::bind(T.params(), false);
  Vec<S> out = T.apply(ad::Var<S>::constant(x.values), ad::Var<S>::constant(z.values), p).value().col(0);
  require_finite(out, "statistic");
  return out;
}

template <typename S>
LatentBatch<S> sample_prior(const LatentPrior& prior, Index m, Rng& rng) {
  if (m < 1) throw ConfigError("sample_prior: batch size must be >= 1");
  if (prior.dim < 1) throw ConfigError("sample_prior: latent dimension must be >= 1");
  LatentBatch<S> z{Mat<S>(m, prior.dim)};
  std::normal_distribution<double> normal(0.0, 1.0);
  for (Index i = 0; i < m; ++i)
    for (Index j = 0; j < prior.dim; ++j) z.values(i, j) = static_cast<S>(normal(rng.engine()));
  return z;
}

/// Rows are dE(x_i)/dx_i.
template <typename S>
Mat<S> grad_energy_x(const EnergyFunction<S>& E, const SampleBatch<S>& x) {
  if (x.dim() != E.input_dim()) throw ConfigError("grad_energy_x: sample dimension mismatch");
  const auto p = nn::bind(E.params(), false);
  auto xv = ad::Var<S>::variable(x.values);
  auto e = E.apply(xv, p);
  require_finite(e.value(), "energy");
  Mat<S> g = ad::grad(ad::sum(e), {xv})[0].value();
  require_finite(g, "energy gradient");
  return g;
}

/// Rows are d E(G(z_i)) / d z_i.
template <typename S>
Mat<S> grad_energy_z(const EnergyFunction<S>& E, const Generator<S>& G, const LatentBatch<S>& z) {
  if (z.dim() != G.latent_dim()) throw ConfigError("grad_energy_z: latent dimension mismatch");
  if (G.output_dim() != E.input_dim()) throw ConfigError("grad_energy_z: generator output != energy input");
  const auto pe = nn::bind(E.params(), false);
  const auto pg = nn::bind(G.params(), false);
  auto zv = ad::Var<S>::variable(z.values);
  auto e = E.apply(G.apply(zv, pg), pe);
  require_finite(e.value(), "energy");
  Mat<S> g = ad::grad(ad::sum(e), {zv})[0].value();
  require_finite(g, "latent energy gradient");
  return g;
}

}  // namespace meg
