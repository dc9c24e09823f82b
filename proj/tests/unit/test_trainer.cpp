#include <cmath>
#include <fstream>
#include <sstream>

#include "doctest.h"
#include "fixtures.hpp"
#include "meg/optim.hpp"
#include "meg/trainer.hpp"

using namespace meg;
using namespace meg::test;

namespace {

ModelConfig tiny_models() {
  ModelConfig m;
  m.energy = "dense:16,lrelu,dense:16,lrelu,dense:1";
  m.generator = "dense:16,relu,dense:16,relu,dense:2";
  m.statistics_head = "dense:16,lrelu,dense:1";
  return m;
}

TrainingConfig tiny_training(std::int64_t iters = 20) {
  TrainingConfig c;
  c.batch_size = 16;
  c.total_iters = iters;
  c.seed = 3;
  c.learning_rate = 1e-3;
  return c;
}

std::shared_ptr<const Mat<float>> blob_data(Index n = 256) {
  Rng rng(99);
  return std::make_shared<const Mat<float>>(random_mat<float>(n, 2, rng));
}

std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace

TEST_CASE("adam first step moves each parameter by the learning rate") {
  nn::ParameterSet<double> w{rows({{1.0, -2.0}, {0.5, 3.0}})};
  const nn::ParameterSet<double> g{rows({{0.3, -4.0}, {1e-2, 7.0}})};
  auto state = OptimizerState<double>::zeros_like(w);
  const AdamConfig cfg{0.01, 0.5, 0.9, 1e-8};
  const Mat<double> before = w[0];
  adam_step(w, g, state, cfg);
  const Mat<double> delta = (w[0] - before).cwiseAbs();
  for (Index i = 0; i < delta.size(); ++i) CHECK(std::abs(delta.data()[i] - 0.01) < 0.01 * 1e-3);
  CHECK(state.step_count == 1);
}

TEST_CASE("adam with zero gradients leaves parameters unchanged") {
  nn::ParameterSet<double> w{rows({{1.0, -2.0}})};
  const nn::ParameterSet<double> g{Mat<double>::Zero(1, 2)};
  auto state = OptimizerState<double>::zeros_like(w);
  for (int i = 0; i < 10; ++i) adam_step(w, g, state, AdamConfig{});
  CHECK(w[0] == rows({{1.0, -2.0}}));
}

TEST_CASE("adam descends a scalar quadratic bowl") {
  nn::ParameterSet<double> w{Mat<double>::Constant(1, 1, 1.0)};
  auto state = OptimizerState<double>::zeros_like(w);
  for (int i = 0; i < 500; ++i) adam_step(w, nn::ParameterSet<double>{w[0]}, state, AdamConfig{0.1, 0.5, 0.9, 1e-8});
  CHECK(std::abs(w[0](0, 0)) < 1e-2);
}

TEST_CASE("one iteration takes energy_steps energy updates, then one generator update") {
  Trainer t(tiny_training(), build_models(tiny_models(), 2, 3), blob_data());
  std::vector<std::string> phases;
  std::vector<std::string> generator_hash_at_energy;
  t.on_update = [&](const char* phase) {
    phases.emplace_back(phase);
    if (std::string(phase) == "energy") generator_hash_at_energy.push_back(parameter_hash(t.models().generator.params()));
  };
  const std::string g0 = parameter_hash(t.models().generator.params());
  const std::string s0 = parameter_hash(t.models().statistics.params());
  t.train_iteration();
  CHECK(phases == std::vector<std::string>{"energy", "energy", "energy", "energy", "energy", "generator"});
  CHECK(t.energy_optimizer().step_count == 5);
  CHECK(t.generator_optimizer().step_count == 1);
  CHECK(t.statistics_optimizer().step_count == 1);
  for (const auto& h : generator_hash_at_energy) CHECK(h == g0);
  CHECK(parameter_hash(t.models().statistics.params()) != s0);
}

TEST_CASE("energy updates never touch the generator and generator updates never touch the energy") {
  Trainer t(tiny_training(), build_models(tiny_models(), 2, 3), blob_data());
  std::string e_hash = parameter_hash(t.models().energy.params());
  std::string g_hash = parameter_hash(t.models().generator.params());
  std::string t_hash = parameter_hash(t.models().statistics.params());
  bool ok = true;
  t.on_update = [&](const char* phase) {
    const auto e = parameter_hash(t.models().energy.params());
    const auto g = parameter_hash(t.models().generator.params());
    const auto s = parameter_hash(t.models().statistics.params());
    if (std::string(phase) == "energy") ok = ok && g == g_hash && s == t_hash;
    else ok = ok && e == e_hash;
    e_hash = e;
    g_hash = g;
    t_hash = s;
  };
  for (int i = 0; i < 3; ++i) t.train_iteration();
  CHECK(ok);
}

TEST_CASE("a zero energy learning rate freezes the energy bitwise") {
  auto cfg = tiny_training();
  cfg.energy_lr = 0.0;
  Trainer t(cfg, build_models(tiny_models(), 2, 3), blob_data());
  const auto before = parameter_hash(t.models().energy.params());
  t.train_iteration();
  CHECK(parameter_hash(t.models().energy.params()) == before);
}

TEST_CASE("the gradient penalty is nonnegative every iteration") {
  Trainer t(tiny_training(), build_models(tiny_models(), 2, 3), blob_data());
  for (int i = 0; i < 10; ++i) {
    const auto b = t.train_iteration();
    CHECK(b.penalty >= 0);
    CHECK(b.loss_E == doctest::Approx(b.energy_real - b.energy_fake + 0.1 * b.penalty).epsilon(1e-4));
  }
}

TEST_CASE("identical seeds produce identical metric streams") {
  Trainer a(tiny_training(), build_models(tiny_models(), 2, 3), blob_data());
  Trainer b(tiny_training(), build_models(tiny_models(), 2, 3), blob_data());
  for (int i = 0; i < 50; ++i) CHECK(metrics_row(i, a.train_iteration()) == metrics_row(i, b.train_iteration()));
}

TEST_CASE("linear learning-rate schedule") {
  auto cfg = tiny_training(100);
  CHECK(cfg.rate_scale(50) == 1.0);
  cfg.lr_schedule = TrainingConfig::Schedule::Linear;
  CHECK(cfg.rate_scale(0) == 1.0);
  CHECK(cfg.rate_scale(50) == doctest::Approx(0.5));
  CHECK(cfg.adam_for(std::nullopt, 75).learning_rate == doctest::Approx(cfg.learning_rate * 0.25));
  CHECK(cfg.adam_for(0.5, 75).learning_rate == doctest::Approx(0.125));
}

TEST_CASE("training config keys round-trip and reject bad values") {
  TrainingConfig c;
  c.energy_lr = 3e-4;
  c.mi_variant = MiVariant::Logistic;
  c.lr_schedule = TrainingConfig::Schedule::Linear;
  TrainingConfig d;
  for (const auto& [k, v] : c.to_map()) CHECK(d.set(k, v));
  CHECK(d.to_map() == c.to_map());
  CHECK_FALSE(d.set("no_such_key", "1"));
  CHECK_THROWS_AS(d.set("batch_size", "many"), ConfigError);
  CHECK_THROWS_AS(d.set("mi_variant", "nce"), ConfigError);
  d.batch_size = 1;
  CHECK_THROWS_AS(d.validate(), ConfigError);
}

TEST_CASE("run_training with zero iterations writes the initial checkpoint and an empty metrics body") {
  const auto dir = scratch_dir("t0");
  RunOptions o;
  o.out_dir = dir;
  const auto r = run_training(tiny_training(0), tiny_models(), blob_data(), o);
  CHECK(r.final_checkpoint.iteration == 0);
  REQUIRE(r.checkpoints.size() == 1);
  CHECK(std::filesystem::exists(r.checkpoints[0]));
  CHECK(slurp(r.metrics_path) == std::string(kMetricsHeader) + "\n");
  std::filesystem::remove_all(dir);
}

TEST_CASE("resuming at 50 and training to 100 equals an uninterrupted run") {
  const auto straight = scratch_dir("straight"), split = scratch_dir("split");
  RunOptions o;
  o.checkpoint_every = 25;
  o.out_dir = straight;
  const auto cfg = tiny_training(100);
  const auto a = run_training(cfg, tiny_models(), blob_data(), o);
  o.out_dir = split;
  o.stop_after = 50;
  const auto first = run_training(cfg, tiny_models(), blob_data(), o);
  CHECK(first.final_checkpoint.iteration == 50);
  o.stop_after.reset();
  const auto b = run_training(cfg, tiny_models(), blob_data(), o);
  CHECK(bitwise_equal(a.final_checkpoint, b.final_checkpoint));
  CHECK(slurp(a.metrics_path) == slurp(b.metrics_path));
  std::filesystem::remove_all(straight);
  std::filesystem::remove_all(split);
}

TEST_CASE("checkpoint round trip, corruption and compatibility") {
  const auto dir = scratch_dir("ckpt");
  Trainer t(tiny_training(), build_models(tiny_models(), 2, 3), blob_data());
  t.train_iteration();
  const auto ckpt = t.checkpoint();
  const auto path = dir / "c.ckpt";
  CHECK(bitwise_equal(checkpoint_roundtrip(ckpt, path), ckpt));

  const std::string bytes = slurp(path);
  {
    std::ofstream out(dir / "short.ckpt", std::ios::binary);
    out << bytes.substr(0, bytes.size() / 2);
  }
  CHECK_THROWS_AS(load_checkpoint(dir / "short.ckpt"), IntegrityError);
  CHECK_THROWS(load_checkpoint(dir / "missing.ckpt"));

  auto other = tiny_training();
  other.latent_dim = 4;
  try {
    require_resume_compatible(ckpt, other, 2);
    FAIL("expected a dimension diagnostic");
  } catch (const ConfigError& e) {
    CHECK(std::string(e.what()).find("latent_dim") != std::string::npos);
  }
  CHECK_THROWS_AS(require_resume_compatible(ckpt, tiny_training(), 3), ConfigError);
  std::filesystem::remove_all(dir);
}

TEST_CASE("data stream covers each row once per epoch") {
  auto data = std::make_shared<const Mat<float>>(Mat<float>(Eigen::VectorXf::LinSpaced(12, 0, 11)));
  DataStream s(rows_of(data), 4, Rng(1));
  std::vector<int> seen;
  for (int b = 0; b < 3; ++b) {
    const auto batch = s.next();
    for (Index i = 0; i < batch.rows(); ++i) seen.push_back(static_cast<int>(batch(i, 0)));
  }
  std::sort(seen.begin(), seen.end());
  for (int i = 0; i < 12; ++i) CHECK(seen[static_cast<std::size_t>(i)] == i);
  CHECK_THROWS_AS(DataStream(rows_of(data), 13, Rng(1)), ConfigError);
}
