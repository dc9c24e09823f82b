// SPDX-License-Identifier: Apache-2.0
//
// meg: train, sample and evaluate energy models from config presets.
//
// Exit codes: 0 success, 1 usage or configuration, 2 runtime or numeric
// fault, 3 verification failure.

#include <cstdio>
#include <cstdlib>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "meg/classifier.hpp"
#include "meg/experiment.hpp"
#include "meg/io.hpp"
#include "meg/manifest.hpp"
#include "meg/verify.hpp"

namespace fs = std::filesystem;
using namespace meg;

namespace {

constexpr int kExitOk = 0, kExitUsage = 1, kExitRuntime = 2, kExitVerification = 3;

/// Raised for arguments that are well-formed but unusable.
class UsageError : public Error {
 public:
  using Error::Error;
};

struct Common {
  std::string config;
  std::vector<std::string> overrides;
  std::string out;
  bool force = false;
  bool quiet = false;
};

struct SampleFlags {
  std::optional<Index> chain_length, burn_in, count;
  std::optional<double> step_size;
  std::optional<std::string> space;
  bool compare = false;
  bool include_prior = false;
};

void log_line(const Common& c, const std::string& line) {
  if (!c.quiet) std::cerr << line << std::endl;
}

fs::path output_root() {
  const char* env = std::getenv("MEG_OUTPUT_ROOT");
  return env && *env ? fs::path(env) : fs::path("runs");
}

std::string compact_timestamp() {
  std::string t = utc_timestamp();
  std::erase(t, '-');
  std::erase(t, ':');
  return t;
}

fs::path fresh_run_dir(const Common& c, const std::string& run_name, const std::string& command, bool resume) {
  if (!c.out.empty()) {
    const fs::path dir = c.out;
    if (resume) return dir;
    if (fs::exists(dir) && !fs::is_empty(dir)) {
      if (!c.force) throw UsageError("run directory '" + dir.string() + "' is not empty (use --force to replace it)");
      fs::remove_all(dir);
    }
    return dir;
  }
  if (resume) throw UsageError("--resume needs the run directory given with --out");
  const fs::path base = output_root() / (run_name + "-" + command + "-" + compact_timestamp());
  fs::path dir = base;
  for (int n = 2; fs::exists(dir); ++n) dir = base.string() + "-" + std::to_string(n);
  return dir;
}

/// A checkpoint file, or the newest checkpoint in a run directory.
fs::path resolve_checkpoint(const std::string& arg) {
  if (arg.empty()) throw UsageError("--checkpoint is required");
  const fs::path p = arg;
  if (fs::is_directory(p)) {
    if (auto latest = latest_checkpoint(p)) return *latest;
    throw UsageError("no checkpoint found in run directory '" + p.string() + "'");
  }
  if (!fs::exists(p)) throw UsageError("checkpoint not found: '" + p.string() + "'");
  return p;
}

/// The training run's config snapshot stands in when no --config is given.
ExperimentConfig load_config(const Common& c, const std::optional<fs::path>& checkpoint) {
  fs::path path = c.config;
  if (path.empty() && checkpoint) {
    const fs::path snapshot = checkpoint->parent_path().parent_path() / "config.ini";
    if (fs::exists(snapshot)) path = snapshot;
  }
  return ExperimentConfig::load(path, c.overrides);
}

void write_json(const fs::path& path, const Json& j) { io::write_file_atomic(path, j.dump(2) + "\n"); }

RunManifest start_manifest(const std::string& command, const std::vector<std::string>& args,
                           const ExperimentConfig& cfg) {
  RunManifest m;
  m.command = command;
  m.arguments = args;
  m.config = cfg.effective();
  m.seed = cfg.train.seed;
  m.code = code_identity();
  m.started = utc_timestamp();
  return m;
}

void add_common(CLI::App* app, Common& c) {
  app->add_option("-c,--config", c.config, "Config file (key = value sections)");
  app->add_option("-s,--set", c.overrides, "Override, section.key=value (repeatable)")->take_all();
  app->add_option("-o,--out", c.out, "Run directory (default: $MEG_OUTPUT_ROOT or ./runs, timestamped)");
  app->add_flag("--force", c.force, "Replace a non-empty --out directory");
  app->add_flag("-q,--quiet", c.quiet, "No progress output");
}

// ---------------------------------------------------------------------------

int cmd_train(const Common& c, bool resume, std::optional<std::int64_t> stop_after, const std::vector<std::string>& args) {
  const ExperimentConfig cfg = load_config(c, std::nullopt);
  if (cfg.train.total_iters < 1) throw ConfigError("train.total_iters must be >= 1 to train");
  const fs::path dir = fresh_run_dir(c, cfg.run.name, "train", resume);
  if (resume) {
    if (!fs::exists(dir)) throw UsageError("cannot resume: run directory '" + dir.string() + "' does not exist");
    if (fs::exists(dir / "config.ini")) {
      const ExperimentConfig before = ExperimentConfig::load(dir / "config.ini");
      require_resume_compatible(load_checkpoint(resolve_checkpoint(dir.string())), cfg.train, before.model.data_shape.size());
    }
  }
  begin_run(dir);
  try {
    RunManifest m = start_manifest("train", args, cfg);
    io::write_file_atomic(dir / "config.ini", cfg.dump());
    const ExperimentData data = load_experiment_data(cfg, cfg.data.archive.empty() ? dir / "dataset" : fs::path(cfg.data.archive));
    log_line(c, "run directory: " + dir.string());
    const RunResult r = train_experiment(cfg, data, dir, resume, stop_after, [&](const std::string& s) { log_line(c, s); });
    m.summary = {{"iterations", r.final_checkpoint.iteration},
                 {"dataset_hash", data.archive_hash},
                 {"energy_parameter_hash", parameter_hash(r.final_checkpoint.models.energy.params())},
                 {"generator_parameter_hash", parameter_hash(r.final_checkpoint.models.generator.params())}};
    if (data.test && cfg.run.eval_every > 0) {
      if (auto avg = rolling_anomaly_average(dir / "evaluations.csv", cfg.anomaly.average_last)) {
        m.summary["rolling_anomaly"] = *avg;
      }
    }
    const bool stopped = r.final_checkpoint.iteration < cfg.train.total_iters;
    finish_run(dir, m, stopped ? "stopped" : "complete");
    std::cout << "trained " << r.final_checkpoint.iteration << " iterations into " << dir.string() << "\n";
  } catch (const std::exception& e) {
    fail_run(dir, e.what(), kExitRuntime);
    throw;
  }
  return kExitOk;
}

int cmd_sample(const Common& c, const std::string& checkpoint_arg, const SampleFlags& f,
               const std::vector<std::string>& args) {
  const fs::path ckpt_path = resolve_checkpoint(checkpoint_arg);
  ExperimentConfig cfg = load_config(c, ckpt_path);
  if (f.chain_length) cfg.sample.mala.chain_length = *f.chain_length;
  if (f.burn_in) cfg.sample.mala.burn_in = *f.burn_in;
  if (f.count) cfg.sample.count = *f.count;
  if (f.step_size) cfg.sample.mala.step_size = *f.step_size;
  if (f.space) cfg.sample.mala.space = parse_space(*f.space);
  if (f.include_prior) cfg.sample.mala.include_prior = true;
  cfg.validate();
  const Checkpoint ckpt = load_checkpoint(ckpt_path);
  const fs::path dir = fresh_run_dir(c, cfg.run.name, "sample", false);
  begin_run(dir);
  try {
    RunManifest m = start_manifest("sample", args, cfg);
    m.summary["checkpoint"] = ckpt_path.string();
    io::write_file_atomic(dir / "config.ini", cfg.dump());
    const ExperimentData data = load_experiment_data(cfg, dir / "dataset");
    require_eval_compatible(ckpt, cfg, data.shape.size());
    if (f.compare) {
      const ChainComparison cmp = comparison(ckpt, cfg, data);
      const Json j = comparison_json(cmp);
      write_json(dir / "comparison.json", j);
      write_sample_grid(cmp.latent.start_samples, data.shape, dir / "grids" / "start");
      write_sample_grid(cmp.latent.end_samples, data.shape, dir / "grids" / "latent_end");
      write_sample_grid(cmp.visible.end_samples, data.shape, dir / "grids" / "visible_end");
      DatasetArchive a;
      a.spec = {{"kind", "chain-comparison"}, {"chains", cmp.latent.chains}, {"kept_per_chain", cmp.latent.kept_per_chain}};
      a.seed = cfg.sample.seed;
      a.arrays["latent"] = cmp.latent.kept_samples.cast<float>();
      a.arrays["visible"] = cmp.visible.kept_samples.cast<float>();
      write_archive(dir / "samples", a);
      m.summary = j;
      for (const auto* r : {&cmp.latent, &cmp.visible}) {
        std::printf("space=%s acceptance_rate=%.4f mean_final_energy=%.6g", to_string(r->space), r->acceptance_rate,
                    r->mean_final_energy);
        if (r->in_mode_fraction) std::printf(" in_mode_fraction=%.4f", *r->in_mode_fraction);
        std::printf("\n");
        if (!r->warning.empty()) log_line(c, "warning: " + r->warning);
      }
      if (cmp.sign) std::printf("sign_test wins=%lld losses=%lld p=%.4g\n", static_cast<long long>(cmp.sign->wins),
                                static_cast<long long>(cmp.sign->losses), cmp.sign->p_value);
    } else {
      const SampleOutput s = sample_report(ckpt, cfg, data);
      write_json(dir / "sample_report.json", s.report);
      DatasetArchive a;
      a.spec = {{"kind", "mala-samples"}, {"space", s.report["space"]}, {"chains", cfg.sample.count}};
      a.seed = cfg.sample.seed;
      a.arrays["samples"] = s.samples.cast<float>();
      if (s.positions.size()) a.arrays["positions"] = s.positions.cast<float>();
      write_archive(dir / "samples", a);
      write_sample_grid(s.samples.bottomRows(std::min<Index>(s.samples.rows(), 4096)), data.shape, dir / "grids" / "samples");
      m.summary = s.report;
      std::printf("space=%s chains=%lld kept_per_chain=%lld acceptance_rate=%.4f\n",
                  s.report["space"].get<std::string>().c_str(), static_cast<long long>(cfg.sample.count),
                  static_cast<long long>(s.report["kept_per_chain"].get<Index>()),
                  s.report["acceptance_rate"].get<double>());
      if (!s.report["warning"].get<std::string>().empty()) log_line(c, "warning: " + s.report["warning"].get<std::string>());
    }
    finish_run(dir, m);
  } catch (const std::exception& e) {
    fail_run(dir, e.what(), kExitRuntime);
    throw;
  }
  return kExitOk;
}

enum class EvalKind { Density, Modes, Anomaly };

int cmd_eval(EvalKind kind, const Common& c, const std::string& checkpoint_arg, const std::vector<std::string>& args) {
  const fs::path ckpt_path = resolve_checkpoint(checkpoint_arg);
  const ExperimentConfig cfg = load_config(c, ckpt_path);
  const Checkpoint ckpt = load_checkpoint(ckpt_path);
  const char* command = kind == EvalKind::Density ? "eval-density" : kind == EvalKind::Modes ? "eval-modes" : "eval-anomaly";
  // Dimension problems are reported before anything is written.
  if (ckpt.models.generator.latent_dim() != cfg.train.latent_dim || ckpt.config.latent_dim != cfg.train.latent_dim ||
      ckpt.models.energy.input_dim() != cfg.model.data_shape.size()) {
    require_eval_compatible(ckpt, cfg, cfg.model.data_shape.size());
  }
  const fs::path dir = fresh_run_dir(c, cfg.run.name, command, false);
  begin_run(dir);
  try {
    RunManifest m = start_manifest(command, args, cfg);
    io::write_file_atomic(dir / "config.ini", cfg.dump());
    const ExperimentData data = load_experiment_data(cfg, dir / "dataset");
    require_eval_compatible(ckpt, cfg, data.shape.size());
    Json report;
    if (kind == EvalKind::Density) {
      report = density_report(ckpt, cfg, data, dir);
      std::printf("log_partition=%.6g peaks=%zu", report["log_partition"].get<double>(), report["peaks"].size());
      if (report.contains("peaks_within_tolerance"))
        std::printf(" peaks_within_tolerance=%lld/%lld", static_cast<long long>(report["peaks_within_tolerance"].get<Index>()),
                    static_cast<long long>(report["mode_count"].get<Index>()));
      std::printf("\n");
    } else if (kind == EvalKind::Modes) {
      report = modes_report(ckpt, cfg, data);
      std::printf("captured_modes=%lld/%lld kl=%s", static_cast<long long>(report["captured_modes"].get<Index>()),
                  static_cast<long long>(report["capacity"].get<Index>()), report["kl"].dump().c_str());
      if (report.contains("in_mode_fraction")) std::printf(" in_mode_fraction=%.4f", report["in_mode_fraction"].get<double>());
      std::printf("\n");
    } else {
      report = anomaly_report(ckpt, cfg, data);
      const fs::path evaluations = ckpt_path.parent_path().parent_path() / "evaluations.csv";
      if (auto avg = rolling_anomaly_average(evaluations, cfg.anomaly.average_last)) report["rolling_average"] = *avg;
      std::printf("precision=%.4f recall=%.4f f1=%.4f auprc=%s\n", report["precision"].get<double>(),
                  report["recall"].get<double>(), report["f1"].get<double>(), report["auprc"].dump().c_str());
    }
    report["checkpoint"] = ckpt_path.string();
    report["checkpoint_iteration"] = ckpt.iteration;
    write_json(dir / "report.json", report);
    m.summary = report;
    finish_run(dir, m);
  } catch (const std::exception& e) {
    fail_run(dir, e.what(), kExitRuntime);
    throw;
  }
  return kExitOk;
}

int cmd_check(const Common& c, const std::vector<std::string>& suites, std::uint64_t seed,
              const std::vector<std::string>& args) {
  const ExperimentConfig cfg = ExperimentConfig::load(c.config, c.overrides);
  const fs::path dir = fresh_run_dir(c, "check", "check", false);
  begin_run(dir);
  bool all = true;
  Json report = Json::array();
  try {
    RunManifest m = start_manifest("check", args, cfg);
    VerifyOptions opt;
    opt.seed = seed;
    opt.scratch = dir / "scratch";
    for (const auto& name : suites.empty() ? suite_names() : suites) {
      const SuiteResult r = run_suite(name, opt);
      all = all && r.passed;
      std::printf("%s %-10s (%.1fs)\n", r.passed ? "PASS" : "FAIL", r.name.c_str(), r.seconds);
      for (const auto& line : r.checks) std::printf("    %s\n", line.c_str());
      std::fflush(stdout);
      report.push_back({{"suite", r.name}, {"passed", r.passed}, {"checks", r.checks}});
    }
    fs::remove_all(opt.scratch);
    write_json(dir / "report.json", report);
    m.summary = {{"passed", all}};
    finish_run(dir, m, all ? "complete" : "failed");
  } catch (const std::exception& e) {
    fail_run(dir, e.what(), kExitRuntime);
    throw;
  }
  if (!all) {
    fail_run(dir, "verification failed", kExitVerification);
    return kExitVerification;
  }
  return kExitOk;
}

int cmd_train_classifier(const Common& c, const std::string& digits_path, const std::vector<std::string>& args) {
  const ExperimentConfig cfg = ExperimentConfig::load(c.config, c.overrides);
  const std::string source = digits_path.empty() ? cfg.data.path : digits_path;
  if (source.empty()) throw UsageError("train-classifier needs --digits or data.path");
  const fs::path dir = fresh_run_dir(c, cfg.run.name, "train-classifier", false);
  begin_run(dir);
  try {
    RunManifest m = start_manifest("train-classifier", args, cfg);
    const DigitSet digits = load_digits(source);
    ClassifierTrainConfig ccfg;
    ccfg.seed = cfg.train.seed;
    const DigitClassifier clf = train_digit_classifier(digits, ccfg, [&](const std::string& s) { log_line(c, s); });
    save_classifier(clf, dir / "classifier.bin");
    m.summary = {{"source", source}, {"images", digits.size()}, {"holdout_accuracy", clf.holdout_accuracy}};
    finish_run(dir, m);
    std::printf("holdout_accuracy=%.4f classifier=%s\n", clf.holdout_accuracy, (dir / "classifier.bin").string().c_str());
  } catch (const std::exception& e) {
    fail_run(dir, e.what(), kExitRuntime);
    throw;
  }
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"meg: energy models with an amortized generator"};
  app.require_subcommand(1);
  const std::vector<std::string> args(argv + 1, argv + argc);

  Common common;
  bool resume = false;
  std::optional<std::int64_t> stop_after;
  std::string checkpoint, digits;
  SampleFlags sflags;
  std::vector<std::string> suites;
  std::uint64_t check_seed = 0;

  auto* train = app.add_subcommand("train", "Train the three networks");
  add_common(train, common);
  train->add_flag("--resume", resume, "Continue the run in --out from its newest checkpoint");
  train->add_option("--stop-after", stop_after, "Stop after this iteration (the run can be resumed)");

  auto* sample = app.add_subcommand("sample", "MALA sampling from a trained checkpoint");
  add_common(sample, common);
  sample->add_option("--checkpoint", checkpoint, "Checkpoint file or training run directory")->required();
  sample->add_option("--chain-length", sflags.chain_length, "Steps per chain");
  sample->add_option("--burn-in", sflags.burn_in, "Discarded leading steps");
  sample->add_option("--step-size", sflags.step_size, "Langevin step size");
  sample->add_option("--space", sflags.space, "latent or visible")->check(CLI::IsMember({"latent", "visible"}));
  sample->add_option("--count", sflags.count, "Number of chains");
  sample->add_flag("--include-prior", sflags.include_prior, "Add the N(0, I) prior to the latent target");
  sample->add_flag("--compare", sflags.compare, "Run latent and visible chains from matched starts");

  auto* density = app.add_subcommand("eval-density", "Normalized density grid of a 2-D energy");
  add_common(density, common);
  density->add_option("--checkpoint", checkpoint, "Checkpoint file or training run directory")->required();

  auto* modes = app.add_subcommand("eval-modes", "Mode coverage and KL of generator samples");
  add_common(modes, common);
  modes->add_option("--checkpoint", checkpoint, "Checkpoint file or training run directory")->required();

  auto* anomaly = app.add_subcommand("eval-anomaly", "Precision, recall, F1 and AUPRC on the test split");
  add_common(anomaly, common);
  anomaly->add_option("--checkpoint", checkpoint, "Checkpoint file or training run directory")->required();

  auto* check = app.add_subcommand("check", "Run the verification suites");
  add_common(check, common);
  check->add_option("--suite", suites, "Suite to run (repeatable; default all)")
      ->check(CLI::IsMember(suite_names()));
  check->add_option("--seed", check_seed, "Seed for the randomized checks");

  auto* classifier = app.add_subcommand("train-classifier", "Train the digit classifier used by eval-modes");
  add_common(classifier, common);
  classifier->add_option("--digits", digits, "Digit source (.csv or IDX directory; default data.path)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? kExitOk : kExitUsage;
  }

  try {
    if (*train) return cmd_train(common, resume, stop_after, args);
    if (*sample) return cmd_sample(common, checkpoint, sflags, args);
    if (*density) return cmd_eval(EvalKind::Density, common, checkpoint, args);
    if (*modes) return cmd_eval(EvalKind::Modes, common, checkpoint, args);
    if (*anomaly) return cmd_eval(EvalKind::Anomaly, common, checkpoint, args);
    if (*check) return cmd_check(common, suites, check_seed, args);
    if (*classifier) return cmd_train_classifier(common, digits, args);
  } catch (const UsageError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const ScopeError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const IngestionError& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const NumericFault& e) {
    std::cerr << "numeric fault: " << e.what() << "\n";
    return kExitRuntime;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitRuntime;
  }
  return kExitUsage;
}
