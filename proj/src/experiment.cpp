// SPDX-License-Identifier: Apache-2.0
#include "meg/experiment.hpp"

#include <array>
#include <cstdio>
#include <limits>
#include <fstream>
#include <sstream>

#include "meg/classifier.hpp"
#include "meg/io.hpp"

namespace meg {

namespace {

/// Stacked digit images produced from source indices when a batch asks for them.
class StackedRows : public RowSource {
 public:
  StackedRows(std::shared_ptr<const DigitSet> source, Mat<std::int32_t> index)
      : source_(std::move(source)), index_(std::move(index)) {}
  Index rows() const override { return index_.rows(); }
  Index cols() const override { return source_->images.cols() * index_.cols(); }
  void copy_row(Index i, float* out) const override {
    const Index stacks = index_.cols(), pixels = source_->images.cols();
    for (Index c = 0; c < stacks; ++c) {
      const float* src = source_->images.row(index_(i, c)).data();
      for (Index p = 0; p < pixels; ++p) out[p * stacks + c] = src[p];
    }
  }

 private:
  std::shared_ptr<const DigitSet> source_;
  Mat<std::int32_t> index_;
};

Mat<float> index_column(const std::vector<Index>& rows) {
  Mat<float> m(static_cast<Index>(rows.size()), 1);
  for (std::size_t i = 0; i < rows.size(); ++i) m(static_cast<Index>(i), 0) = static_cast<float>(rows[i]);
  return m;
}

std::string source_hash(const std::filesystem::path& path) {
  if (std::filesystem::is_directory(path)) return io::file_sha256(path / "train-images-idx3-ubyte");
  return io::file_sha256(path);
}

void require_path(const DataConfig& d) {
  if (d.path.empty()) throw IngestionError("data.path is required for data.kind = " + d.kind);
  if (!std::filesystem::exists(d.path)) throw IngestionError("dataset source not found: '" + d.path + "'");
}

DigitSet subset(const DigitSet& s, const std::vector<Index>& rows) {
  DigitSet out;
  out.height = s.height;
  out.width = s.width;
  out.images.resize(static_cast<Index>(rows.size()), s.images.cols());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    out.images.row(static_cast<Index>(i)) = s.images.row(rows[i]);
    out.labels.push_back(s.labels[static_cast<std::size_t>(rows[i])]);
  }
  return out;
}

Json anomaly_metrics(const EnergyFunction<float>& E, const LabeledSet& test, double contamination) {
  const auto scores = score_samples(E, SampleBatch<float>{test.features}, &test.labels);
  double positives = 0;
  for (int l : *scores.labels) positives += l;
  const double n = static_cast<double>(scores.scores.size());
  const double rate = contamination > 0 ? contamination : (n > 0 ? positives / n : 0.0);
  const auto prf = evaluate_prf1_at_rate(scores, rate);
  Json j;
  j["precision"] = prf.precision;
  j["recall"] = prf.recall;
  j["f1"] = prf.f1;
  j["threshold"] = prf.threshold;
  j["contamination"] = prf.contamination_rate;
  j["predicted_positive"] = prf.predicted_positive;
  j["auprc"] = positives > 0 ? Json(auprc(scores)) : Json(nullptr);
  j["scored"] = scores.scores.size();
  j["excluded"] = scores.excluded.size();
  j["positive_rate"] = n > 0 ? positives / n : 0.0;
  return j;
}

const char* kEvaluationsHeader = "step,precision,recall,f1,auprc,threshold";

void truncate_evaluations(const std::filesystem::path& path, std::int64_t last_step) {
  std::ifstream in(path);
  std::ostringstream keep;
  std::string line;
  bool header = true;
  while (std::getline(in, line)) {
    if (header) {
      keep << line << "\n";
      header = false;
      continue;
    }
    if (line.empty()) continue;
    if (std::stoll(line.substr(0, line.find(','))) <= last_step) keep << line << "\n";
  }
  if (header) keep << kEvaluationsHeader << "\n";
  io::write_file_atomic(path, keep.str());
}

Json peak_json(const GridPeak& p, const std::optional<Synthetic2DSpec>& syn, double tolerance) {
  Json j{{"x", p.x}, {"y", p.y}, {"probability", p.probability}};
  if (syn && syn->mode_count() > 0) {
    Index best = 0;
    double best_d = std::numeric_limits<double>::infinity();
    for (Index c = 0; c < syn->centers.rows(); ++c) {
      const double d = std::hypot(p.x - syn->centers(c, 0), p.y - syn->centers(c, 1));
      if (d < best_d) {
        best_d = d;
        best = c;
      }
    }
    j["nearest_center"] = best;
    j["distance"] = best_d;
    j["within_tolerance"] = best_d <= tolerance;
  }
  return j;
}

Json kl_json(const KLResult& k) {
  return k.infinite ? Json("inf") : Json(k.value);
}

}  // namespace

ExperimentData load_experiment_data(const ExperimentConfig& cfg, const std::filesystem::path& archive_dir) {
  const DataConfig& d = cfg.data;
  ExperimentData out;
  if (d.kind == "synthetic2d") {
    const auto spec = Synthetic2DSpec::named(d.family);
    Rng rng = Rng::stream(d.seed, 0);
    std::vector<Index> components;
    const Mat<double> x = synthetic2d(spec, d.count, rng, &components);
    DatasetArchive a;
    a.spec = {{"kind", "synthetic2d"}, {"family", spec.name()}, {"count", d.count}, {"sigma", spec.sigma}};
    a.seed = d.seed;
    a.arrays["samples"] = x.cast<float>();
    if (!components.empty()) a.arrays["components"] = index_column(components);
    out.archive_hash = write_archive(archive_dir, a);
    out.train = std::make_shared<const Mat<float>>(a.arrays["samples"]);
    out.synthetic = spec;
    out.shape = nn::Shape::flat(2);
  } else if (d.kind == "stackedmnist") {
    require_path(d);
    auto digits = std::make_shared<const DigitSet>(load_digits(d.path));
    StackedMNISTSpec spec{d.stacks, d.train_count, d.eval_count};
    StackedMNIST ds = build_stacked_mnist(spec, *digits, d.seed);
    out.archive_hash = write_stacked_mnist(archive_dir, ds, source_hash(d.path));
    out.shape = nn::Shape{digits->height, digits->width, d.stacks};
    out.train_rows = std::make_shared<StackedRows>(digits, ds.train_index);
    out.digits = *digits;
    out.stacked = std::move(ds);
  } else if (d.kind == "mnist-heldout") {
    require_path(d);
    DigitSet source = load_digits(d.path, false);
    DigitSet test;
    std::vector<Index> train_rows, test_rows;
    if (!d.test_path.empty()) {
      test = load_digits(d.test_path, std::filesystem::is_directory(d.test_path));
    } else if (std::filesystem::is_directory(d.path)) {
      test = load_digits(d.path, true);
    } else {
      // A single source file: split it with the recorded seed.
      Rng rng = Rng::stream(d.seed, 8);
      const auto perm = rng.permutation(static_cast<std::size_t>(source.size()));
      const auto n_train = static_cast<std::size_t>(d.train_fraction * static_cast<double>(source.size()));
      for (std::size_t i = 0; i < perm.size(); ++i) (i < n_train ? train_rows : test_rows).push_back(static_cast<Index>(perm[i]));
      test = subset(source, test_rows);
      source = subset(source, train_rows);
    }
    const auto keep = rows_with_label(source, d.heldout_digit, false);
    const DigitSet train = subset(source, keep);
    LabeledSet t;
    t.features = test.images;
    for (int l : test.labels) t.labels.push_back(l == d.heldout_digit ? 1 : 0);
    DatasetArchive a;
    a.spec = {{"kind", "mnist-heldout"},
              {"heldout_digit", d.heldout_digit},
              {"source_sha256", source_hash(d.path)},
              {"train_fraction", d.train_fraction}};
    a.seed = d.seed;
    a.arrays["train_labels"] = index_column(std::vector<Index>(train.labels.begin(), train.labels.end()));
    a.arrays["test_labels"] = index_column(std::vector<Index>(t.labels.begin(), t.labels.end()));
    if (!train_rows.empty()) {
      a.arrays["train_rows"] = index_column(train_rows);
      a.arrays["test_rows"] = index_column(test_rows);
    }
    out.archive_hash = write_archive(archive_dir, a);
    out.train = std::make_shared<const Mat<float>>(train.images);
    out.test = std::move(t);
    out.shape = nn::Shape{train.height, train.width, 1};
  } else if (d.kind == "kdd99") {
    require_path(d);
    TabularOptions o;
    o.convention = d.convention == "normal-is-anomaly" ? AnomalyConvention::NormalIsAnomaly
                                                       : AnomalyConvention::AttackIsAnomaly;
    o.train_fraction = d.train_fraction;
    o.seed = d.seed;
    o.train_on_inliers = d.train_on_inliers;
    TabularSplit split = load_kdd99(d.path, o);
    DatasetArchive a;
    a.spec = {{"kind", "kdd99"},
              {"source_sha256", io::file_sha256(d.path)},
              {"convention", d.convention},
              {"train_fraction", d.train_fraction},
              {"train_on_inliers", d.train_on_inliers},
              {"rows_read", split.report.rows_read},
              {"malformed", split.report.malformed}};
    a.seed = d.seed;
    a.arrays["train_rows"] = index_column(split.train_rows);
    a.arrays["test_rows"] = index_column(split.test_rows);
    a.arrays["fit_rows"] = index_column(split.fit_rows);
    out.archive_hash = write_archive(archive_dir, a);
    out.shape = nn::Shape::flat(split.train.features.cols());
    out.train = std::make_shared<const Mat<float>>(std::move(split.train.features));
    out.test = LabeledSet{std::move(split.test.features), std::move(split.test.labels)};
  } else {
    throw ConfigError("unknown data.kind '" + d.kind + "'");
  }
  if (!out.train_rows) out.train_rows = rows_of(out.train);
  if (cfg.model.data_shape.size() != out.shape.size()) {
    throw ConfigError("model.data_shape " + cfg.model.data_shape.to_string() + " does not match the dataset shape " +
                      out.shape.to_string());
  }
  return out;
}

std::optional<ModeReference> mode_reference(const ExperimentData& data, const ModesConfig& cfg) {
  if (!data.synthetic || data.synthetic->mode_count() == 0) return std::nullopt;
  return ModeReference{data.synthetic->centers, cfg.sigma > 0 ? cfg.sigma : data.synthetic->sigma, cfg.cutoff};
}

RunResult train_experiment(const ExperimentConfig& cfg, const ExperimentData& data, const std::filesystem::path& out_dir,
                           bool resume, std::optional<std::int64_t> stop_after,
                           const std::function<void(const std::string&)>& log) {
  RunOptions o;
  o.out_dir = out_dir;
  o.checkpoint_every = cfg.run.checkpoint_every;
  o.resume = resume;
  o.stop_after = stop_after;
  const auto evaluations = out_dir / "evaluations.csv";
  if (data.test && cfg.run.eval_every > 0) {
    std::filesystem::create_directories(out_dir);
    const auto existing = resume ? latest_checkpoint(out_dir) : std::nullopt;
    if (existing && std::filesystem::exists(evaluations)) {
      truncate_evaluations(evaluations, load_checkpoint(*existing).iteration);
    } else {
      io::write_file_atomic(evaluations, std::string(kEvaluationsHeader) + "\n");
    }
    o.eval_every = cfg.run.eval_every;
    const double contamination = cfg.anomaly.contamination;
    o.on_evaluate = [&, contamination](const Trainer& t) {
      const Json m = anomaly_metrics(t.models().energy, *data.test, contamination);
      char buf[256];
      std::snprintf(buf, sizeof buf, "%lld,%.9g,%.9g,%.9g,%.9g,%.9g", static_cast<long long>(t.iteration()),
                    m["precision"].get<double>(), m["recall"].get<double>(), m["f1"].get<double>(),
                    m["auprc"].is_null() ? 0.0 : m["auprc"].get<double>(), m["threshold"].get<double>());
      std::ofstream(evaluations, std::ios::app) << buf << "\n";
      if (log) log(std::string("eval ") + buf);
    };
  }
  const std::int64_t report_every = std::max<std::int64_t>(1, cfg.train.total_iters / 20);
  if (log) {
    o.on_iteration = [&, report_every](const Trainer& t, const LossBreakdown& b) {
      if (t.iteration() % report_every != 0) return;
      char buf[256];
      std::snprintf(buf, sizeof buf, "iter %lld/%lld loss_E %.4f loss_G %.4f mi %.4f",
                    static_cast<long long>(t.iteration()), static_cast<long long>(cfg.train.total_iters), b.loss_E,
                    b.loss_G, b.mi_estimate);
      log(buf);
    };
  }
  return run_training(cfg.train, cfg.model, data.train_rows, o);
}

void require_eval_compatible(const Checkpoint& ckpt, const ExperimentConfig& cfg, Index data_dim) {
  require_resume_compatible(ckpt, cfg.train, data_dim);
}

Json density_report(const Checkpoint& ckpt, const ExperimentConfig& cfg, const ExperimentData& data,
                    const std::filesystem::path& out_dir) {
  const auto& E = ckpt.models.energy;
  const auto& dc = cfg.density;
  Mat<double> energies = grid_energies(E, dc.grid);
  const double riemann = riemann_log_partition(energies, dc.grid);
  double log_z = riemann;
  if (dc.estimator == "importance") {
    Rng rng = Rng::stream(dc.seed, 0);
    log_z = estimate_partition_importance(E, ckpt.models.generator, dc.is_centers, dc.is_draws, dc.bandwidth, rng);
  }
  const DensityGrid grid = normalize_grid(std::move(energies), dc.grid, log_z, dc.estimator);
  const auto ref = mode_reference(data, cfg.modes);
  const std::size_t limit = ref ? static_cast<std::size_t>(ref->centers.rows()) : 25;
  const auto peaks = local_maxima(grid, limit);
  const double tolerance = ref ? ref->cutoff * ref->sigma : 0.0;

  Json j;
  j["estimator"] = dc.estimator;
  j["log_partition"] = log_z;
  j["riemann_log_partition"] = riemann;
  j["grid"] = {{"x_min", dc.grid.x_min}, {"x_max", dc.grid.x_max}, {"y_min", dc.grid.y_min},
               {"y_max", dc.grid.y_max}, {"nx", dc.grid.nx},       {"ny", dc.grid.ny}};
  j["grid_mass"] = grid_mass(grid);
  Json list = Json::array();
  Index within = 0;
  for (const auto& p : peaks) {
    list.push_back(peak_json(p, data.synthetic, tolerance));
    if (list.back().value("within_tolerance", false)) ++within;
  }
  j["peaks"] = list;
  if (ref) {
    j["peak_tolerance"] = tolerance;
    j["peaks_within_tolerance"] = within;
    j["mode_count"] = ref->centers.rows();
  }
  if (!out_dir.empty()) {
    std::filesystem::create_directories(out_dir);
    write_density_grid(grid, out_dir / "density");
  }
  return j;
}

Json modes_report(const Checkpoint& ckpt, const ExperimentConfig& cfg, const ExperimentData& data) {
  const auto& G = ckpt.models.generator;
  const Index count = cfg.modes.count;
  Rng rng = Rng::stream(cfg.modes.seed, 0);
  Json j;
  j["count"] = count;
  if (const auto ref = mode_reference(data, cfg.modes)) {
    const Index K = ref->centers.rows();
    const auto z = sample_prior<float>(LatentPrior{G.latent_dim()}, count, rng);
    const Mat<double> x = generate(G, z).values.cast<double>();
    const auto a = nearest_mode_assign(x, ref->centers, ref->sigma, ref->cutoff);
    const auto all = histogram_from_ids(a.mode, K);
    const auto in_mode = a.in_mode_histogram(K);
    j["method"] = "nearest-mode";
    j["capacity"] = K;
    j["sigma"] = ref->sigma;
    j["cutoff"] = ref->cutoff;
    j["in_mode_fraction"] = a.in_mode_fraction();
    j["captured_modes"] = in_mode.captured_modes();
    j["kl"] = kl_json(empirical_kl(all, ModeHistogram::uniform(K)));
    j["in_mode_kl"] = in_mode.total > 0 ? kl_json(empirical_kl(in_mode, ModeHistogram::uniform(K))) : Json(nullptr);
    j["counts"] = in_mode.counts;
    return j;
  }
  if (data.stacked) {
    if (cfg.modes.classifier.empty()) throw ConfigError("modes.classifier is required for stacked digit mode counting");
    const DigitClassifier clf = load_classifier(cfg.modes.classifier);
    const int stacks = data.stacked->spec.stacks;
    const StackedDigitClassifier classifier(clf, stacks);
    ModeHistogram hist = ModeHistogram::empty(classifier.capacity());
    const Index chunk = 1000;
    for (Index done = 0; done < count; done += chunk) {
      const Index n = std::min(chunk, count - done);
      const auto z = sample_prior<float>(LatentPrior{G.latent_dim()}, n, rng);
      hist.merge(mode_histogram(classifier, generate(G, z).values, classifier.capacity()));
    }
    j["method"] = "stacked-classifier";
    j["capacity"] = classifier.capacity();
    j["classifier_holdout_accuracy"] = clf.holdout_accuracy;
    j["captured_modes"] = hist.captured_modes();
    const auto kl = empirical_kl(hist, ModeHistogram::uniform(classifier.capacity()));
    j["kl"] = kl_json(kl);
    j["kl_finite"] = !kl.infinite && std::isfinite(kl.value);
    return j;
  }
  throw ScopeError("mode counting needs a Gaussian mixture or stacked digits, data.kind is " + cfg.data.kind +
                   (data.synthetic ? " (" + data.synthetic->name() + ")" : std::string()));
}

Json anomaly_report(const Checkpoint& ckpt, const ExperimentConfig& cfg, const ExperimentData& data) {
  if (!data.test) throw ScopeError("anomaly evaluation needs a labeled test split, data.kind is " + cfg.data.kind);
  Json j = anomaly_metrics(ckpt.models.energy, *data.test, cfg.anomaly.contamination);
  j["iteration"] = ckpt.iteration;
  return j;
}

std::optional<Json> rolling_anomaly_average(const std::filesystem::path& evaluations_csv, Index last) {
  if (!std::filesystem::exists(evaluations_csv)) return std::nullopt;
  std::ifstream in(evaluations_csv);
  std::string line;
  std::getline(in, line);
  std::vector<std::array<double, 6>> rows;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::array<double, 6> r{};
    std::stringstream ss(line);
    std::string cell;
    for (auto& v : r) {
      if (!std::getline(ss, cell, ',')) throw IntegrityError(evaluations_csv.string() + ": short row");
      v = std::stod(cell);
    }
    rows.push_back(r);
  }
  if (rows.empty()) return std::nullopt;
  const std::size_t n = std::min(rows.size(), static_cast<std::size_t>(last));
  std::array<double, 6> mean{};
  for (std::size_t i = rows.size() - n; i < rows.size(); ++i)
    for (std::size_t k = 0; k < 6; ++k) mean[k] += rows[i][k] / static_cast<double>(n);
  return Json{{"evaluations", n},
              {"first_step", rows[rows.size() - n][0]},
              {"last_step", rows.back()[0]},
              {"precision", mean[1]},
              {"recall", mean[2]},
              {"f1", mean[3]},
              {"auprc", mean[4]}};
}

SampleOutput sample_report(const Checkpoint& ckpt, const ExperimentConfig& cfg, const ExperimentData&) {
  const auto& E = ckpt.models.energy;
  const auto& G = ckpt.models.generator;
  const auto& sc = cfg.sample;
  Rng init = Rng::stream(sc.seed, 0);
  Rng rng = Rng::stream(sc.seed, 1);
  const auto z0 = sample_prior<float>(LatentPrior{G.latent_dim()}, sc.count, init);
  SampleOutput out;
  MALAResult chain;
  if (sc.mala.space == Space::Latent) {
    auto r = run_mala(z0, E, G, sc.mala, rng);
    chain = std::move(r.chain);
    out.samples = r.samples.values.cast<double>();
    out.positions = chain.kept;
  } else {
    chain = run_visible_mala(generate(G, z0), E, sc.mala, rng);
    out.samples = chain.kept;
  }
  Mat<float> finals(static_cast<Index>(chain.chains.size()), out.samples.cols());
  for (Index c = 0; c < finals.rows(); ++c)
    finals.row(c) = out.samples.row((c + 1) * chain.kept_per_chain - 1).cast<float>();
  out.report = {{"space", to_string(sc.mala.space)},
                {"chains", sc.count},
                {"chain_length", sc.mala.chain_length},
                {"burn_in", sc.mala.burn_in},
                {"step_size", sc.mala.step_size},
                {"include_prior", sc.mala.include_prior},
                {"kept_per_chain", chain.kept_per_chain},
                {"acceptance_rate", chain.acceptance_rate},
                {"mean_final_energy", energy(E, SampleBatch<float>{finals}).cast<double>().mean()},
                {"warning", chain.warning}};
  return out;
}

ChainComparison comparison(const Checkpoint& ckpt, const ExperimentConfig& cfg, const ExperimentData& data) {
  MALAConfig lat = cfg.sample.mala, vis = cfg.sample.mala;
  return compare_chains(ckpt.models.energy, ckpt.models.generator, lat, vis, cfg.sample.count, cfg.sample.seed,
                        mode_reference(data, cfg.modes));
}

Json comparison_json(const ChainComparison& c) {
  auto one = [](const ChainQualityReport& r) {
    Json j{{"space", to_string(r.space)},
           {"acceptance_rate", r.acceptance_rate},
           {"mean_final_energy", r.mean_final_energy},
           {"chains", r.chains},
           {"kept_per_chain", r.kept_per_chain},
           {"warning", r.warning}};
    j["in_mode_fraction"] = r.in_mode_fraction ? Json(*r.in_mode_fraction) : Json(nullptr);
    return j;
  };
  Json j{{"latent", one(c.latent)}, {"visible", one(c.visible)}};
  if (c.sign) {
    j["sign_test"] = {{"wins", c.sign->wins}, {"losses", c.sign->losses}, {"ties", c.sign->ties},
                      {"p_value", c.sign->p_value}};
  }
  return j;
}

void write_sample_grid(const Mat<double>& samples, const nn::Shape& shape, const std::filesystem::path& stem) {
  std::filesystem::create_directories(stem.parent_path().empty() ? "." : stem.parent_path());
  if (shape.size() == 2 && samples.cols() == 2) {
    std::ostringstream os;
    os << "x,y\n";
    char buf[64];
    for (Index i = 0; i < samples.rows(); ++i) {
      std::snprintf(buf, sizeof buf, "%.9g,%.9g\n", samples(i, 0), samples(i, 1));
      os << buf;
    }
    io::write_file_atomic(stem.string() + ".csv", os.str());
    return;
  }
  if (shape.height * shape.width < 2 || samples.cols() != shape.size())
    throw ScopeError("sample grids need 2-D points or H x W x C images");
  const Index h = shape.height, w = shape.width, ch = shape.channels;
  const Index n = std::min<Index>(samples.rows(), 64);
  const Index per_row = 8, grid_rows = (n + per_row - 1) / per_row;
  const Index W = per_row * (w + 1) + 1, H = grid_rows * (h + 1) + 1;
  std::string img = "P6\n" + std::to_string(W) + " " + std::to_string(H) + "\n255\n";
  const std::size_t header = img.size();
  img.resize(header + static_cast<std::size_t>(W * H * 3), static_cast<char>(64));
  for (Index s = 0; s < n; ++s) {
    const Index oy = (s / per_row) * (h + 1) + 1, ox = (s % per_row) * (w + 1) + 1;
    for (Index y = 0; y < h; ++y)
      for (Index x = 0; x < w; ++x)
        for (Index c = 0; c < 3; ++c) {
          const double v = samples(s, (y * w + x) * ch + std::min(c, ch - 1));
          const auto byte = static_cast<unsigned char>(std::lround(std::clamp(v, 0.0, 1.0) * 255));
          img[header + static_cast<std::size_t>(((oy + y) * W + ox + x) * 3 + c)] = static_cast<char>(byte);
        }
  }
  io::write_file_atomic(stem.string() + ".ppm", img);
}

}  // namespace meg
