#include <cmath>

#include "doctest.h"
#include "fixtures.hpp"
#include "meg/gradcheck.hpp"
#include "meg/models.hpp"

using namespace meg;
using namespace meg::test;

// Frozen outputs of fixed-seed networks; regenerate only on a deliberate
// change to initialization or layer numerics.
constexpr double kGoldenEnergy = -0.47633031901797013;
constexpr double kGoldenGenerator[2] = {0.25398049031091208, -0.37282109109824502};
constexpr double kGoldenStatistic = 0.38342171741064385;

TEST_CASE("energy of the zero map and the quadratic head") {
  const auto zero = constant_energy(3, 0.0);
  Rng rng(1);
  const auto x = random_mat(5, 3, rng);
  CHECK(energy(zero, SampleBatch<double>{x}).isZero(0));
  const auto q = quadratic_energy(2);
  CHECK(energy(q, SampleBatch<double>{rows({{3, 4}})})[0] == doctest::Approx(12.5).epsilon(1e-15));
}

TEST_CASE("energy golden value and batch-order invariance") {
  Rng init(7);
  const auto E = random_energy(2, init);
  const Mat<double> x = rows({{0.3, -1.2}, {1.5, 0.25}, {-0.7, 0.9}, {0.0, 0.0}});
  const Vec<double> e = energy(E, SampleBatch<double>{x});
  CHECK(e[0] == doctest::Approx(kGoldenEnergy).epsilon(1e-12));
  const Mat<double> perm = rows({{-0.7, 0.9}, {0.0, 0.0}, {0.3, -1.2}, {1.5, 0.25}});
  const Vec<double> ep = energy(E, SampleBatch<double>{perm});
  CHECK(ep[0] == e[2]);
  CHECK(ep[1] == e[3]);
  CHECK(ep[2] == e[0]);
  CHECK(ep[3] == e[1]);
}

TEST_CASE("generate: identity head, determinism, golden output") {
  Rng rng(2);
  const auto z = random_mat(6, 3, rng);
  CHECK(generate(identity_generator(3), LatentBatch<double>{z}).values == z);

  Rng init(8);
  const auto G = random_generator(2, 2, init);
  const LatentBatch<double> z2{rows({{0.5, -0.25}})};
  const auto a = generate(G, z2).values;
  const auto b = generate(G, z2).values;
  CHECK(a == b);
  CHECK(a(0, 0) == doctest::Approx(kGoldenGenerator[0]).epsilon(1e-12));
  CHECK(a(0, 1) == doctest::Approx(kGoldenGenerator[1]).epsilon(1e-12));
}

TEST_CASE("statistic: zero map, bilinear head, golden value") {
  Rng rng(3);
  const auto x = random_mat(4, 2, rng), z = random_mat(4, 2, rng);
  CHECK(statistic(constant_statistic(2, 2, 0.0), SampleBatch<double>{x}, LatentBatch<double>{z}).isZero(0));
  const auto ones = rows({{1, 1}});
  CHECK(statistic(inner_statistic(2), SampleBatch<double>{ones}, LatentBatch<double>{ones})[0] == 2.0);

  Rng init(9);
  const auto T = random_statistic(2, 2, init);
  const double t = statistic(T, SampleBatch<double>{rows({{0.1, 0.2}})}, LatentBatch<double>{rows({{-0.3, 0.4}})})[0];
  CHECK(t == doctest::Approx(kGoldenStatistic).epsilon(1e-12));
}

TEST_CASE("sample_prior: moments, determinism, stream independence") {
  const LatentPrior prior{2};
  Rng a(5), b(5), c(6);
  const auto za = sample_prior<double>(prior, 100000, a);
  const auto zb = sample_prior<double>(prior, 100000, b);
  const auto zc = sample_prior<double>(prior, 100000, c);
  CHECK(za.values == zb.values);
  CHECK(za.values != zc.values);
  for (Index j = 0; j < 2; ++j) {
    const double mean = za.values.col(j).mean();
    const double var = (za.values.col(j).array() - mean).square().sum() / (za.rows() - 1);
    CHECK(std::abs(mean) < 0.02);
    CHECK(std::abs(var - 1) < 0.03);
  }
}

TEST_CASE("sample_prior passes a chi-squared goodness-of-fit test at level 0.01") {
  // Ten equiprobable bins of the standard normal per dimension.
  const double edges[9] = {-1.2815515655446004, -0.8416212335729142, -0.5244005127080407, -0.2533471031357997, 0.0,
                           0.2533471031357997,  0.5244005127080407,  0.8416212335729142,  1.2815515655446004};
  Rng rng(12);
  const auto z = sample_prior<double>(LatentPrior{2}, 100000, rng);
  for (Index j = 0; j < 2; ++j) {
    std::vector<double> counts(10, 0.0);
    for (Index i = 0; i < z.rows(); ++i) {
      int bin = 0;
      while (bin < 9 && z.values(i, j) > edges[bin]) ++bin;
      counts[static_cast<std::size_t>(bin)] += 1;
    }
    double chi2 = 0;
    for (double c : counts) chi2 += (c - 10000.0) * (c - 10000.0) / 10000.0;
    CHECK(chi2 < 21.666);  // 0.99 quantile, 9 degrees of freedom
  }
}

TEST_CASE("grad_energy_x: constant, analytic and finite-difference cases") {
  Rng rng(4);
  const auto x = random_mat(8, 2, rng);
  CHECK(grad_energy_x(constant_energy(2, 1.5), SampleBatch<double>{x}).isZero(0));
  const auto g = grad_energy_x(quadratic_energy(2), SampleBatch<double>{rows({{3, 4}})});
  CHECK(g(0, 0) == 3.0);
  CHECK(g(0, 1) == 4.0);

  Rng init(10);
  const auto E = random_energy(2, init);
  const auto p = nn::bind(E.params(), false);
  const Mat<double> analytic = grad_energy_x(E, SampleBatch<double>{x});
  const double err = gradient_check([&](const std::vector<ad::Var<double>>& v) { return ad::sum(E.apply(v[0], p)); },
                                    {x}, 1e-4);
  CHECK(err < 1e-4);
  CHECK(analytic.allFinite());
}

TEST_CASE("grad_energy_z: composition through the generator") {
  const auto gz = grad_energy_z(quadratic_energy(2), identity_generator(2), LatentBatch<double>{rows({{1, -2}})});
  CHECK(gz(0, 0) == 1.0);
  CHECK(gz(0, 1) == -2.0);
  Rng rng(5);
  const auto z = random_mat(8, 3, rng);
  CHECK(grad_energy_z(constant_energy(2, -3.0), random_generator(3, 2, rng), LatentBatch<double>{z}).isZero(0));

  Rng init(11);
  const auto E = random_energy(2, init);
  const auto G = random_generator(3, 2, init);
  const auto pe = nn::bind(E.params(), false);
  const auto pg = nn::bind(G.params(), false);
  const double err = gradient_check(
      [&](const std::vector<ad::Var<double>>& v) { return ad::sum(E.apply(G.apply(v[0], pg), pe)); }, {z}, 1e-4);
  CHECK(err < 1e-4);
}

TEST_CASE("network parameter gradients agree with finite differences for every layer kind") {
  Rng rng(13);
  struct Case {
    std::string program;
    nn::Shape input;
  };
  const Case cases[] = {
      {"dense:6,relu,dense:5,lrelu,dense:4,tanh,dense:3,sigmoid,dense:3,softplus,dense:2,swish,dense:1",
       nn::Shape::flat(3)},
      {"conv:3:3:1:1,lrelu,conv:2:4:2:1,tanh,up2,conv:1:3:1:1,dense:1", nn::Shape{4, 4, 2}},
      {"dense:8,reshape:2x2x2,conv:2:3:1:1,softplus,halfsq", nn::Shape::flat(2)},
  };
  for (const auto& c : cases) {
    CAPTURE(c.program);
    const auto spec = nn::NetworkSpec::parse(c.program, c.input);
    const auto params = nn::init_parameters<double>(spec, rng);
    const auto x = random_mat(5, c.input.size(), rng, 0.8);
    const double step = c.program.find("relu") != std::string::npos ? 1e-6 : 1e-4;
    const double err_p = gradient_check(
        [&](const std::vector<ad::Var<double>>& v) {
          return ad::sum(ad::square(nn::forward(spec, ad::Var<double>::constant(x), std::span<const ad::Var<double>>(v))));
        },
        {params.begin(), params.end()}, step);
    CHECK(err_p < 1e-4);
    const auto bound = nn::bind(params, false);
    const double err_x = gradient_check(
        [&](const std::vector<ad::Var<double>>& v) {
          return ad::sum(ad::square(nn::forward(spec, v[0], std::span<const ad::Var<double>>(bound))));
        },
        {x}, step);
    CHECK(err_x < 1e-4);
  }
}
