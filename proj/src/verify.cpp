// SPDX-License-Identifier: Apache-2.0
#include "meg/verify.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>

#include "meg/density.hpp"
#include "meg/gradcheck.hpp"
#include "meg/objectives.hpp"
#include "meg/optim.hpp"
#include "meg/sampler.hpp"
#include "meg/trainer.hpp"

namespace meg {

namespace {

class Recorder {
 public:
  explicit Recorder(std::string name) : start_(std::chrono::steady_clock::now()) { result_.name = std::move(name); }

  void expect(bool ok, const std::string& what, double measured, const std::string& bound) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.6g", measured);
    result_.checks.push_back(std::string(ok ? "ok   " : "FAIL ") + what + ": " + buf + " (" + bound + ")");
    all_ok_ = all_ok_ && ok;
  }

  SuiteResult finish() {
    result_.passed = all_ok_;
    result_.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
    return result_;
  }

 private:
  SuiteResult result_;
  bool all_ok_ = true;
  std::chrono::steady_clock::time_point start_;
};

Mat<double> normal_matrix(Index r, Index c, Rng& rng, double scale = 1.0) {
  Mat<double> m(r, c);
  for (Index i = 0; i < m.size(); ++i) m.data()[i] = scale * rng.normal();
  return m;
}

Index count_parameters(const nn::ParameterSet<double>& p) {
  Index n = 0;
  for (const auto& t : p) n += t.size();
  return n;
}

std::vector<Mat<double>> values(const nn::ParameterSet<double>& p) { return {p.begin(), p.end()}; }

constexpr double kGradTolerance = 1e-4;
constexpr Index kGradBatch = 8;
constexpr Index kMaxParameters = 1000;

struct GradientCase {
  std::string name;
  nn::Shape data_shape;
  std::string energy, generator;
  Index latent_dim;
  std::string encoder, head;
  Combine combine;
  /// Finite-difference step. Piecewise-linear networks get a small one so
  /// that no perturbation crosses a kink.
  double step = 1e-4;
};

void check_case(Recorder& rec, const GradientCase& gc, Rng& rng) {
  Rng init = rng.split();
  auto E = EnergyFunction<double>::init(nn::NetworkSpec::parse(gc.energy, gc.data_shape), init);
  auto G = Generator<double>::init(nn::NetworkSpec::parse(gc.generator, nn::Shape::flat(gc.latent_dim)), init);
  auto T = StatisticsNetwork<double>::init(nn::NetworkSpec::parse(gc.encoder, gc.data_shape), gc.head, gc.combine,
                                           gc.latent_dim, init);
  const Index d = gc.data_shape.size();
  const std::string bound = "< 1e-4";
  for (const auto* params : {&E.params(), &G.params(), &T.params()}) {
    if (count_parameters(*params) > kMaxParameters) {
      rec.expect(false, gc.name + " network size", static_cast<double>(count_parameters(*params)), "<= 1000 parameters");
      return;
    }
  }

  const Mat<double> x_real = normal_matrix(kGradBatch, d, rng, 0.7);
  const Mat<double> x_fake = normal_matrix(kGradBatch, d, rng, 0.7);
  const Mat<double> z = normal_matrix(kGradBatch, gc.latent_dim, rng);
  const auto pE = nn::bind(E.params(), false);
  const auto pG = nn::bind(G.params(), false);
  const auto pT = nn::bind(T.params(), false);

  double err = gradient_check([&](const std::vector<ad::Var<double>>& v) { return ad::sum(E.apply(v[0], pE)); },
                              {x_real}, gc.step);
  rec.expect(err < kGradTolerance, gc.name + " dE/dx", err, bound);

  err = gradient_check(
      [&](const std::vector<ad::Var<double>>& v) { return ad::sum(E.apply(G.apply(v[0], pG), pE)); }, {z},
      gc.step);
  rec.expect(err < kGradTolerance, gc.name + " dE(G(z))/dz", err, bound);

  err = gradient_check(
      [&](const std::vector<ad::Var<double>>& v) {
        return energy_objective(E, std::span<const ad::Var<double>>(v), SampleBatch<double>{x_real},
                                SampleBatch<double>{x_fake}, 0.1)
            .loss;
      },
      values(E.params()), gc.step, true);
  rec.expect(err < kGradTolerance, gc.name + " dloss_E/dtheta (with penalty)", err, bound);

  Rng shuffle = rng.split();
  const auto z_marg = shuffle_marginals(LatentBatch<double>{z}, shuffle);
  const Models<double> models{E, G, T};
  for (const auto variant : {MiVariant::Softplus, MiVariant::Logistic}) {
    const std::string tag = variant == MiVariant::Softplus ? "softplus" : "logistic";
    err = gradient_check(
        [&](const std::vector<ad::Var<double>>& v) {
          return adversarial_objective(models, pE, v, pT, LatentBatch<double>{z}, z_marg, variant).loss_G;
        },
        values(G.params()), gc.step);
    rec.expect(err < kGradTolerance, gc.name + " dloss_G/domega [" + tag + "]", err, bound);
    err = gradient_check(
        [&](const std::vector<ad::Var<double>>& v) {
          return adversarial_objective(models, pE, pG, v, LatentBatch<double>{z}, z_marg, variant).loss_T;
        },
        values(T.params()), gc.step);
    rec.expect(err < kGradTolerance, gc.name + " dloss_T/dpsi [" + tag + "]", err, bound);
  }
}

/// Statistics network trained on (x, z) pairs; returns the estimate on fresh pairs.
double trained_mi(bool dependent, std::uint64_t seed) {
  Rng rng = Rng::stream(seed, dependent ? 21 : 22);
  Rng init = rng.split();
  auto T = StatisticsNetwork<float>::init(nn::NetworkSpec::parse("", nn::Shape::flat(2)),
                                          "dense:64,lrelu,dense:64,lrelu,dense:1", Combine::Concat, 2, init);
  auto state = OptimizerState<float>::zeros_like(T.params());
  const AdamConfig adam{1e-3, 0.9, 0.999, 1e-8};
  auto draw = [&](Index m, Mat<float>& x, Mat<float>& z) {
    z = normal_matrix(m, 2, rng).cast<float>();
    x = dependent ? z : normal_matrix(m, 2, rng).cast<float>();
  };
  Mat<float> x, z;
  for (int step = 0; step < 1500; ++step) {
    draw(256, x, z);
    const auto zm = shuffle_marginals(LatentBatch<float>{z}, rng);
    const auto p = nn::bind(T.params(), true);
    auto tj = T.apply(ad::Var<float>::constant(x), ad::Var<float>::constant(z), p);
    auto tm = T.apply(ad::Var<float>::constant(x), ad::Var<float>::constant(zm.values), p);
    auto loss = ad::neg(mi_jsd_graph(tj, tm));
    const auto grads = ad::grad(loss, p);
    nn::ParameterSet<float> g;
    for (const auto& v : grads) g.push_back(v.value());
    adam_step(T.params(), g, state, adam);
  }
  draw(8192, x, z);
  const auto zm = shuffle_marginals(LatentBatch<float>{z}, rng);
  return mi_jsd(T, SampleBatch<float>{x}, LatentBatch<float>{z}, zm);
}

}  // namespace

SuiteResult verify_gradients(const VerifyOptions& options) {
  Recorder rec("gradients");
  Rng rng = Rng::stream(options.seed, 10);
  const std::vector<GradientCase> cases = {
      {"mlp-tanh", nn::Shape::flat(2), "dense:16,tanh,dense:16,softplus,dense:1", "dense:16,tanh,dense:16,tanh,dense:2",
       2, "", "dense:16,tanh,dense:1", Combine::Concat},
      {"mlp-lrelu", nn::Shape::flat(3), "dense:12,lrelu,dense:12,lrelu,dense:1", "dense:12,relu,dense:3", 2,
       "dense:8,lrelu,dense:2", "", Combine::Inner, 1e-6},
      {"conv", nn::Shape{6, 6, 2}, "conv:4:3:1:1,tanh,conv:4:4:2:1,softplus,dense:1", "dense:8,tanh,dense:72,sigmoid",
       3, "conv:2:4:2:1,tanh", "dense:8,tanh,dense:1", Combine::Concat},
  };
  for (const auto& gc : cases) check_case(rec, gc, rng);
  return rec.finish();
}

SuiteResult verify_mutual_information(const VerifyOptions& options) {
  Recorder rec("mi");
  const double target = -2 * std::log(2.0);
  {
    ad::GradMode no_grad(false);
    const Mat<double> zeros = Mat<double>::Zero(32, 1);
    for (const auto variant : {MiVariant::Softplus, MiVariant::Logistic}) {
      const double v =
          mi_jsd_graph(ad::Var<double>::constant(zeros), ad::Var<double>::constant(zeros), variant).item();
      rec.expect(std::abs(v - target) <= 1e-6,
                 std::string("T = 0 gives -2 ln 2 [") + (variant == MiVariant::Softplus ? "softplus" : "logistic") + "]",
                 v, "|v + 1.386294| <= 1e-6");
    }
  }
  const double indep = trained_mi(false, options.seed);
  rec.expect(std::abs(indep - target) <= 0.15, "trained on independent pairs", indep, "within 0.15 of -1.386294");
  const double dep = trained_mi(true, options.seed);
  rec.expect(dep - indep > 0.3, "dependent minus independent", dep - indep, "> 0.3");
  return rec.finish();
}

SuiteResult verify_mala(const VerifyOptions& options) {
  Recorder rec("mala");
  Rng rng = Rng::stream(options.seed, 30);

  // Hand-evaluated ratio: identity generator, E = z^2 / 2, z = 1 -> 0.8, alpha = 0.1.
  {
    Vec<double> z(1), zn(1), g(1), gn(1);
    z << 1.0;
    zn << 0.8;
    g << 1.0;
    gn << 0.8;
    const double log_r = mala_log_accept(z, 0.5, g, zn, 0.32, gn, 0.1);
    rec.expect(std::abs(log_r - 0.009) < 1e-12, "hand example log r", log_r, "0.009");
  }

  // Identity and reversibility on a random latent target.
  Rng init = rng.split();
  auto E = EnergyFunction<double>::init(nn::NetworkSpec::parse("dense:16,tanh,dense:16,softplus,dense:1",
                                                               nn::Shape::flat(2)), init);
  auto G = Generator<double>::init(nn::NetworkSpec::parse("dense:16,tanh,dense:2", nn::Shape::flat(3)), init);
  const auto target = latent_target(E, G);
  const Mat<double> z = normal_matrix(64, 3, rng);
  Vec<double> e;
  Mat<double> g;
  target.evaluate(z, e, g);
  const double alpha = 0.05;
  Mat<double> zn(z.rows(), z.cols());
  for (Index i = 0; i < z.rows(); ++i)
    zn.row(i) = mala_propose(z.row(i).transpose(), g.row(i).transpose(), alpha, normal_matrix(3, 1, rng)).transpose();
  Vec<double> en;
  Mat<double> gn;
  target.evaluate(zn, en, gn);
  double worst_identity = 0, worst_reverse = 0;
  bool exact_one = true;
  for (Index i = 0; i < z.rows(); ++i) {
    const Vec<double> zi = z.row(i).transpose(), gi = g.row(i).transpose();
    const double self = mala_log_accept(zi, e[i], gi, zi, e[i], gi, alpha);
    worst_identity = std::max(worst_identity, std::abs(self));
    exact_one = exact_one && mala_accept_prob(self) == 1.0;
    const double fwd = mala_log_accept(zi, e[i], gi, zn.row(i).transpose(), en[i], gn.row(i).transpose(), alpha);
    const double back = mala_log_accept(zn.row(i).transpose(), en[i], gn.row(i).transpose(), zi, e[i], gi, alpha);
    worst_reverse = std::max(worst_reverse, std::abs(fwd + back));
  }
  rec.expect(worst_identity == 0.0 && exact_one, "r(z, z) = 1", worst_identity, "exactly 0 in log space");
  rec.expect(worst_reverse <= 1e-8, "log r(z, z') + log r(z', z)", worst_reverse, "<= 1e-8");

  // Gaussian target U(z) = (z - mu)^T A (z - mu) / 2.
  Vec<double> mu(2);
  mu << 1.0, -0.5;
  Mat<double> A(2, 2);
  A << 2.0, 0.6, 0.6, 1.0;
  Target<double> quad;
  quad.dim = 2;
  quad.evaluate = [&](const Mat<double>& p, Vec<double>& en_out, Mat<double>& g_out) {
    const Mat<double> c = p.rowwise() - mu.transpose();
    g_out = c * A;
    en_out = 0.5 * (g_out.array() * c.array()).rowwise().sum().matrix();
  };
  MALAConfig cfg;
  cfg.step_size = 0.2;
  cfg.chain_length = 50000;
  cfg.burn_in = 1000;
  const Index chains = 8;
  Rng chain_rng = rng.split();
  const auto res = run_chains(normal_matrix(chains, 2, rng), quad, cfg, chain_rng);
  const Vec<double> mean = res.kept.colwise().mean().transpose();
  const Mat<double> centered = res.kept.rowwise() - mean.transpose();
  const Mat<double> cov = (centered.transpose() * centered) / static_cast<double>(res.kept.rows() - 1);
  const Mat<double> cov_true = A.inverse();
  const double mean_err = (mean - mu).cwiseAbs().maxCoeff();
  const double cov_err = (cov - cov_true).norm() / cov_true.norm();
  rec.expect(mean_err <= 0.05, "quadratic target mean", mean_err, "max abs error <= 0.05");
  rec.expect(cov_err <= 0.05, "quadratic target covariance", cov_err, "relative error <= 5%");
  rec.expect(res.acceptance_rate > 0 && res.acceptance_rate <= 1, "acceptance rate", res.acceptance_rate, "in (0, 1]");
  return rec.finish();
}

SuiteResult verify_partition(const VerifyOptions&) {
  Recorder rec("partition");
  GridSpec spec;
  spec.x_min = spec.y_min = -8;
  spec.x_max = spec.y_max = 8;
  spec.nx = spec.ny = 400;
  Mat<double> energies(spec.nx, spec.ny);
  for (Index i = 0; i < spec.nx; ++i)
    for (Index j = 0; j < spec.ny; ++j)
      energies(i, j) = 0.5 * (spec.x_center(i) * spec.x_center(i) + spec.y_center(j) * spec.y_center(j));
  const double log_z = riemann_log_partition(energies, spec);
  const double err = std::abs(log_z - std::log(2 * M_PI));
  rec.expect(err <= 1e-3, "standard Gaussian log Z at 400x400", err, "|log Z - log 2 pi| <= 1e-3");
  const auto grid = normalize_grid(energies, spec, log_z, "riemann");
  rec.expect(std::abs(grid_mass(grid) - 1) <= 1e-9, "normalized grid mass", grid_mass(grid), "1 within 1e-9");
  return rec.finish();
}

SuiteResult verify_checkpoint(const VerifyOptions& options) {
  Recorder rec("checkpoint");
  const bool own_scratch = options.scratch.empty();
  std::filesystem::path root = options.scratch;
  if (own_scratch) {
    root = std::filesystem::temp_directory_path() /
           ("meg-check-" + std::to_string(std::chrono::steady_clock::now().time_since_epoch().count()));
  }
  std::filesystem::remove_all(root);

  TrainingConfig cfg;
  cfg.total_iters = 24;
  cfg.batch_size = 16;
  cfg.energy_steps = 2;
  cfg.latent_dim = 2;
  cfg.seed = options.seed + 7;
  ModelConfig model;
  model.energy = "dense:16,lrelu,dense:1";
  model.generator = "dense:16,relu,dense:2";
  model.statistics_head = "dense:16,lrelu,dense:1";
  Rng data_rng = Rng::stream(options.seed, 40);
  auto data = std::make_shared<const Mat<float>>(normal_matrix(100, 2, data_rng).cast<float>());

  RunOptions straight;
  straight.out_dir = root / "straight";
  straight.checkpoint_every = 8;
  const auto a = run_training(cfg, model, data, straight);

  RunOptions interrupted = straight;
  interrupted.out_dir = root / "interrupted";
  interrupted.stop_after = 13;
  run_training(cfg, model, data, interrupted);
  interrupted.stop_after.reset();
  const auto b = run_training(cfg, model, data, interrupted);
  rec.expect(bitwise_equal(a.final_checkpoint, b.final_checkpoint), "resume after interruption", b.final_checkpoint.iteration,
             "bitwise-equal final state");
  rec.expect(io::file_sha256(a.metrics_path) == io::file_sha256(b.metrics_path), "resumed metrics file", 0,
             "identical bytes");

  RunOptions again = straight;
  again.out_dir = root / "again";
  const auto c = run_training(cfg, model, data, again);
  rec.expect(parameter_hash(a.final_checkpoint.models.energy.params()) ==
                 parameter_hash(c.final_checkpoint.models.energy.params()) &&
                 bitwise_equal(a.final_checkpoint, c.final_checkpoint),
             "repeat run under the same seed", 0, "bitwise-equal");

  const auto loaded = load_checkpoint(checkpoint_path(straight.out_dir, cfg.total_iters));
  rec.expect(bitwise_equal(loaded, a.final_checkpoint), "save/load round trip", 0, "bitwise-equal");
  if (own_scratch) std::filesystem::remove_all(root);
  return rec.finish();
}

std::vector<std::string> suite_names() { return {"gradients", "mi", "mala", "partition", "checkpoint"}; }

SuiteResult run_suite(const std::string& name, const VerifyOptions& options) {
  if (name == "gradients") return verify_gradients(options);
  if (name == "mi") return verify_mutual_information(options);
  if (name == "mala") return verify_mala(options);
  if (name == "partition") return verify_partition(options);
  if (name == "checkpoint") return verify_checkpoint(options);
  throw ConfigError("unknown verification suite '" + name + "'");
}

}  // namespace meg
