#include <cmath>

#include "doctest.h"
#include "fixtures.hpp"
#include "meg/compare.hpp"

using namespace meg;
using namespace meg::test;

TEST_CASE("sign test counts and one-sided p-value") {
  const auto r = sign_test({1, 2, 3, 4, 5}, {0, 0, 0, 0, 0});
  CHECK(r.wins == 5);
  CHECK(r.losses == 0);
  CHECK(r.p_value == doctest::Approx(1.0 / 32));
  const auto ties = sign_test({1, 1, 2}, {1, 1, 3});
  CHECK(ties.ties == 2);
  CHECK(ties.losses == 1);
  CHECK(ties.p_value == doctest::Approx(1.0));
  // 7 wins of 10: P(X >= 7) = (120 + 45 + 10 + 1) / 1024.
  std::vector<double> a(10, 1), b(10, 0);
  for (int i = 7; i < 10; ++i) b[static_cast<std::size_t>(i)] = 2;
  CHECK(sign_test(a, b).p_value == doctest::Approx(176.0 / 1024).epsilon(1e-12));
  CHECK_THROWS(sign_test({1}, {1, 2}));
}

TEST_CASE("an untrained model still yields a well-formed comparison") {
  Rng init(1);
  const auto E = random_energy(2, init);
  const auto G = random_generator(2, 2, init);
  MALAConfig cfg;
  cfg.step_size = 0.01;
  cfg.chain_length = 30;
  cfg.burn_in = 10;
  const ModeReference ref{rows({{0, 0}, {1, 1}}), 0.5, 3};
  const auto c = compare_chains(E, G, cfg, cfg, 8, 5, ref);
  for (const auto* r : {&c.latent, &c.visible}) {
    CHECK(std::isfinite(r->acceptance_rate));
    CHECK(std::isfinite(r->mean_final_energy));
    REQUIRE(r->in_mode_fraction);
    CHECK(std::isfinite(*r->in_mode_fraction));
    CHECK(r->chains == 8);
    CHECK(r->kept_per_chain == 20);
    CHECK(r->per_chain_in_mode.size() == 8);
    CHECK(r->kept_samples.allFinite());
  }
  // Matched starts: the visible chains begin where the latent chains do.
  CHECK(c.latent.start_samples == c.visible.start_samples);
  REQUIRE(c.sign);
  CHECK(c.sign->wins + c.sign->losses + c.sign->ties == 8);
}

TEST_CASE("one kept sample per chain when chain_length = burn_in + 1") {
  Rng init(2);
  const auto E = random_energy(2, init);
  const auto G = random_generator(2, 2, init);
  MALAConfig cfg;
  cfg.chain_length = 6;
  cfg.burn_in = 5;
  const auto c = compare_chains(E, G, cfg, cfg, 4, 3);
  CHECK(c.latent.kept_per_chain == 1);
  CHECK(c.visible.kept_samples.rows() == 4);
  CHECK_FALSE(c.latent.in_mode_fraction);
}

TEST_CASE("comparisons are deterministic in the seed and require matched chain lengths") {
  Rng init(3);
  const auto E = random_energy(2, init);
  const auto G = random_generator(2, 2, init);
  MALAConfig cfg;
  cfg.chain_length = 20;
  cfg.burn_in = 5;
  const auto a = compare_chains(E, G, cfg, cfg, 4, 9);
  const auto b = compare_chains(E, G, cfg, cfg, 4, 9);
  CHECK(a.latent.kept_samples == b.latent.kept_samples);
  CHECK(a.visible.kept_samples == b.visible.kept_samples);
  MALAConfig other = cfg;
  other.chain_length = 21;
  CHECK_THROWS_AS(compare_chains(E, G, cfg, other, 4, 9), ConfigError);
}

TEST_CASE("latent chains through an identity generator equal visible chains") {
  // With G = identity the two targets coincide, so matched streams give matched chains.
  MALAConfig cfg;
  cfg.step_size = 0.05;
  cfg.chain_length = 40;
  cfg.burn_in = 0;
  const auto c = compare_chains(quadratic_energy(2), identity_generator(2), cfg, cfg, 3, 11);
  CHECK((c.latent.kept_samples - c.visible.kept_samples).cwiseAbs().maxCoeff() < 1e-12);
}
