// SPDX-License-Identifier: Apache-2.0
#include "meg/trainer.hpp"

#include <algorithm>
#include <cinttypes>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "meg/parse.hpp"

namespace meg {
namespace {

using text::format_double;
using text::parse_double;
using text::parse_int;

template <typename S>
void put_params(io::ByteWriter& w, const nn::ParameterSet<S>& params) {
  w.put_u64(params.size());
  for (const auto& p : params) w.put_matrix(p);
}

template <typename S>
nn::ParameterSet<S> get_params(io::ByteReader& r) {
  const std::uint64_t n = r.get_u64();
  if (n > r.remaining()) throw IntegrityError("parameter tensor count exceeds payload");
  nn::ParameterSet<S> out;
  for (std::uint64_t i = 0; i < n; ++i) out.push_back(r.get_matrix<S>());
  return out;
}

void put_optimizer(io::ByteWriter& w, const OptimizerState<float>& s) {
  w.put_i64(s.step_count);
  put_params(w, s.first_moment);
  put_params(w, s.second_moment);
}

OptimizerState<float> get_optimizer(io::ByteReader& r) {
  OptimizerState<float> s;
  s.step_count = r.get_i64();
  s.first_moment = get_params<float>(r);
  s.second_moment = get_params<float>(r);
  return s;
}

void require_state_shapes(const OptimizerState<float>& s, const nn::ParameterSet<float>& params, const char* name) {
  if (s.first_moment.size() != params.size() || s.second_moment.size() != params.size()) {
    throw IntegrityError(std::string(name) + " optimizer state does not match its parameters");
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (s.first_moment[i].rows() != params[i].rows() || s.first_moment[i].cols() != params[i].cols() ||
        s.second_moment[i].rows() != params[i].rows() || s.second_moment[i].cols() != params[i].cols()) {
      throw IntegrityError(std::string(name) + " optimizer state shape mismatch");
    }
  }
}

bool same_params(const nn::ParameterSet<float>& a, const nn::ParameterSet<float>& b) {
  if (a.size() != b.size()) return false;
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (a[i].rows() != b[i].rows() || a[i].cols() != b[i].cols()) return false;
    if (std::memcmp(a[i].data(), b[i].data(), sizeof(float) * static_cast<std::size_t>(a[i].size())) != 0)
      return false;
  }
  return true;
}

bool same_optimizer(const OptimizerState<float>& a, const OptimizerState<float>& b) {
  return a.step_count == b.step_count && same_params(a.first_moment, b.first_moment) &&
         same_params(a.second_moment, b.second_moment);
}

nn::ParameterSet<float> values_of(const std::vector<ad::Var<float>>& vars) {
  nn::ParameterSet<float> out;
  out.reserve(vars.size());
  for (const auto& v : vars) out.push_back(v.value());
  return out;
}

}  // namespace

// ---------------------------------------------------------------------------
// Configuration

void TrainingConfig::validate() const {
  if (!(learning_rate > 0)) throw ConfigError("learning_rate must be > 0");
  if (!(adam_beta1 >= 0 && adam_beta1 < 1)) throw ConfigError("adam_beta1 must lie in [0, 1)");
  if (!(adam_beta2 >= 0 && adam_beta2 < 1)) throw ConfigError("adam_beta2 must lie in [0, 1)");
  if (!(adam_epsilon > 0)) throw ConfigError("adam_epsilon must be > 0");
  if (!(penalty_coeff >= 0)) throw ConfigError("penalty_coeff must be >= 0");
  if (energy_steps < 1) throw ConfigError("energy_steps must be >= 1");
  if (batch_size < 2) throw ConfigError("batch_size must be >= 2");
  if (total_iters < 0) throw ConfigError("total_iters must be >= 0");
  if (latent_dim < 1) throw ConfigError("latent_dim must be >= 1");
  for (const auto& lr : {energy_lr, generator_lr, statistics_lr})
    if (lr && !(*lr >= 0)) throw ConfigError("per-network learning rates must be >= 0");
}

std::map<std::string, std::string> TrainingConfig::to_map() const {
  std::map<std::string, std::string> m{
      {"learning_rate", format_double(learning_rate)},
      {"adam_beta1", format_double(adam_beta1)},
      {"adam_beta2", format_double(adam_beta2)},
      {"adam_epsilon", format_double(adam_epsilon)},
      {"penalty_coeff", format_double(penalty_coeff)},
      {"energy_steps", std::to_string(energy_steps)},
      {"batch_size", std::to_string(batch_size)},
      {"total_iters", std::to_string(total_iters)},
      {"latent_dim", std::to_string(latent_dim)},
      {"seed", std::to_string(seed)},
      {"mi_variant", mi_variant == MiVariant::Softplus ? "softplus" : "logistic"},
      {"lr_schedule", lr_schedule == Schedule::Constant ? "constant" : "linear"},
  };
  if (energy_lr) m["energy_lr"] = format_double(*energy_lr);
  if (generator_lr) m["generator_lr"] = format_double(*generator_lr);
  if (statistics_lr) m["statistics_lr"] = format_double(*statistics_lr);
  return m;
}

bool TrainingConfig::set(const std::string& key, const std::string& value) {
  if (key == "learning_rate") learning_rate = parse_double(key, value);
  else if (key == "adam_beta1") adam_beta1 = parse_double(key, value);
  else if (key == "adam_beta2") adam_beta2 = parse_double(key, value);
  else if (key == "adam_epsilon") adam_epsilon = parse_double(key, value);
  else if (key == "penalty_coeff") penalty_coeff = parse_double(key, value);
  else if (key == "energy_steps") energy_steps = static_cast<int>(parse_int(key, value));
  else if (key == "batch_size") batch_size = parse_int(key, value);
  else if (key == "total_iters") total_iters = parse_int(key, value);
  else if (key == "latent_dim") latent_dim = parse_int(key, value);
  else if (key == "seed") seed = static_cast<std::uint64_t>(parse_int(key, value));
  else if (key == "energy_lr") energy_lr = parse_double(key, value);
  else if (key == "generator_lr") generator_lr = parse_double(key, value);
  else if (key == "statistics_lr") statistics_lr = parse_double(key, value);
  else if (key == "mi_variant") {
    if (value == "softplus") mi_variant = MiVariant::Softplus;
    else if (value == "logistic") mi_variant = MiVariant::Logistic;
    else throw ConfigError("mi_variant must be 'softplus' or 'logistic', got '" + value + "'");
  } else if (key == "lr_schedule") {
    if (value == "constant") lr_schedule = Schedule::Constant;
    else if (value == "linear") lr_schedule = Schedule::Linear;
    else throw ConfigError("lr_schedule must be 'constant' or 'linear', got '" + value + "'");
  } else {
    return false;
  }
  return true;
}

std::map<std::string, std::string> ModelConfig::to_map() const {
  return {{"data_shape", data_shape.to_string()},
          {"energy", energy},
          {"generator", generator},
          {"statistics_encoder", statistics_encoder},
          {"statistics_head", statistics_head},
          {"combine", combine == Combine::Concat ? "concat" : "inner"}};
}

bool ModelConfig::set(const std::string& key, const std::string& value) {
  if (key == "data_shape") data_shape = nn::Shape::parse(value);
  else if (key == "energy") energy = value;
  else if (key == "generator") generator = value;
  else if (key == "statistics_encoder") statistics_encoder = value;
  else if (key == "statistics_head") statistics_head = value;
  else if (key == "combine") {
    if (value == "concat") combine = Combine::Concat;
    else if (value == "inner") combine = Combine::Inner;
    else throw ConfigError("combine must be 'concat' or 'inner', got '" + value + "'");
  } else {
    return false;
  }
  return true;
}

Models<float> build_models(const ModelConfig& cfg, Index latent_dim, std::uint64_t seed) {
  Rng energy_rng = Rng::stream(seed, 1), generator_rng = Rng::stream(seed, 2), statistics_rng = Rng::stream(seed, 3);
  auto energy_spec = nn::NetworkSpec::parse(cfg.energy, cfg.data_shape);
  auto generator_spec = nn::NetworkSpec::parse(cfg.generator, nn::Shape::flat(latent_dim));
  if (generator_spec.output_shape().size() != cfg.data_shape.size()) {
    throw ConfigError("generator output width " + std::to_string(generator_spec.output_shape().size()) +
                      " does not match data dimension " + std::to_string(cfg.data_shape.size()));
  }
  auto encoder_spec = nn::NetworkSpec::parse(cfg.statistics_encoder, cfg.data_shape);
  return Models<float>{
      EnergyFunction<float>::init(std::move(energy_spec), energy_rng),
      Generator<float>::init(std::move(generator_spec), generator_rng),
      StatisticsNetwork<float>::init(std::move(encoder_spec), cfg.statistics_head, cfg.combine, latent_dim,
                                     statistics_rng),
  };
}

// ---------------------------------------------------------------------------
// Data stream

DataStream::DataStream(std::shared_ptr<const RowSource> data, Index batch_size, Rng rng)
    : data_(std::move(data)), batch_size_(batch_size), rng_(std::move(rng)) {
  if (!data_ || data_->rows() < 1) throw ConfigError("data stream: empty dataset");
  if (batch_size_ > data_->rows()) {
    throw ConfigError("data stream: batch size " + std::to_string(batch_size_) + " exceeds dataset size " +
                      std::to_string(data_->rows()));
  }
  reshuffle();
}

void DataStream::reshuffle() {
  order_ = rng_.permutation(static_cast<std::size_t>(data_->rows()));
  position_ = 0;
  ++epoch_;
}

Mat<float> DataStream::next() {
  if (position_ + static_cast<std::size_t>(batch_size_) > order_.size()) reshuffle();
  Mat<float> batch(batch_size_, data_->cols());
  for (Index i = 0; i < batch_size_; ++i) data_->copy_row(static_cast<Index>(order_[position_ + i]), batch.row(i).data());
  position_ += static_cast<std::size_t>(batch_size_);
  return batch;
}

void DataStream::save(io::ByteWriter& w) const {
  w.put_string(rng_.serialize());
  w.put_u64(order_.size());
  for (std::size_t v : order_) w.put_u64(v);
  w.put_u64(position_);
  w.put_i64(epoch_);
}

void DataStream::restore(io::ByteReader& r) {
  rng_ = Rng::deserialize(r.get_string());
  const std::uint64_t n = r.get_u64();
  if (static_cast<Index>(n) != data_->rows()) {
    throw ConfigError("data stream state covers " + std::to_string(n) + " rows but the dataset has " +
                      std::to_string(data_->rows()));
  }
  order_.resize(n);
  for (auto& v : order_) {
    v = r.get_u64();
    if (v >= n) throw IntegrityError("data stream permutation out of range");
  }
  position_ = r.get_u64();
  epoch_ = r.get_i64();
}

// ---------------------------------------------------------------------------
// Checkpoints

std::string encode_checkpoint(const Checkpoint& ckpt) {
  io::ByteWriter w;
  const auto cfg = ckpt.config.to_map();
  w.put_u64(cfg.size());
  for (const auto& [k, v] : cfg) {
    w.put_string(k);
    w.put_string(v);
  }
  const auto& m = ckpt.models;
  w.put_string(m.energy.spec().input.to_string());
  w.put_string(m.energy.spec().program());
  put_params(w, m.energy.params());
  w.put_string(m.generator.spec().input.to_string());
  w.put_string(m.generator.spec().program());
  put_params(w, m.generator.params());
  w.put_string(m.statistics.encoder().input.to_string());
  w.put_string(m.statistics.encoder().program());
  w.put_string(m.statistics.head().program());
  w.put_u32(m.statistics.combine() == Combine::Concat ? 0u : 1u);
  w.put_i64(m.statistics.latent_dim());
  put_params(w, m.statistics.params());
  put_optimizer(w, ckpt.energy_opt);
  put_optimizer(w, ckpt.generator_opt);
  put_optimizer(w, ckpt.statistics_opt);
  w.put_string(ckpt.latent_rng);
  w.put_string(ckpt.shuffle_rng);
  w.put_string(ckpt.data_stream);
  w.put_i64(ckpt.iteration);
  return io::seal(kCheckpointMagic, ckpt.format_version, w.bytes());
}

Checkpoint decode_checkpoint(std::string_view bytes, const std::string& origin) {
  const std::string payload = io::unseal(kCheckpointMagic, kCheckpointVersion, bytes, origin);
  io::ByteReader r(payload);
  Checkpoint ckpt;
  const std::uint64_t n_cfg = r.get_u64();
  if (n_cfg > 64) throw IntegrityError(origin + ": implausible config entry count");
  for (std::uint64_t i = 0; i < n_cfg; ++i) {
    const std::string key = r.get_string();
    const std::string value = r.get_string();
    if (!ckpt.config.set(key, value)) throw IntegrityError(origin + ": unknown config key '" + key + "'");
  }
  try {
    const auto e_shape = nn::Shape::parse(r.get_string());
    auto e_spec = nn::NetworkSpec::parse(r.get_string(), e_shape);
    ckpt.models.energy = EnergyFunction<float>(std::move(e_spec), get_params<float>(r));
    const auto g_shape = nn::Shape::parse(r.get_string());
    auto g_spec = nn::NetworkSpec::parse(r.get_string(), g_shape);
    ckpt.models.generator = Generator<float>(std::move(g_spec), get_params<float>(r));
    const auto t_shape = nn::Shape::parse(r.get_string());
    auto enc_spec = nn::NetworkSpec::parse(r.get_string(), t_shape);
    const std::string head_program = r.get_string();
    const Combine combine = r.get_u32() == 0 ? Combine::Concat : Combine::Inner;
    const Index latent = r.get_i64();
    auto head_spec = nn::NetworkSpec::parse(head_program, nn::Shape::flat(enc_spec.output_shape().size() + latent));
    ckpt.models.statistics =
        StatisticsNetwork<float>(std::move(enc_spec), std::move(head_spec), combine, latent, get_params<float>(r));
  } catch (const ConfigError& e) {
    throw IntegrityError(origin + ": inconsistent network record: " + e.what());
  }
  ckpt.energy_opt = get_optimizer(r);
  ckpt.generator_opt = get_optimizer(r);
  ckpt.statistics_opt = get_optimizer(r);
  require_state_shapes(ckpt.energy_opt, ckpt.models.energy.params(), "energy");
  require_state_shapes(ckpt.generator_opt, ckpt.models.generator.params(), "generator");
  require_state_shapes(ckpt.statistics_opt, ckpt.models.statistics.params(), "statistics");
  ckpt.latent_rng = r.get_string();
  ckpt.shuffle_rng = r.get_string();
  ckpt.data_stream = r.get_string();
  ckpt.iteration = r.get_i64();
  if (r.remaining() != 0) throw IntegrityError(origin + ": trailing bytes after checkpoint record");
  return ckpt;
}

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path) {
  io::write_file_atomic(path, encode_checkpoint(ckpt));
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  if (!std::filesystem::exists(path)) throw Error("checkpoint not found: '" + path.string() + "'");
  return decode_checkpoint(io::read_file(path), path.string());
}

Checkpoint checkpoint_roundtrip(const Checkpoint& ckpt, const std::filesystem::path& path) {
  save_checkpoint(ckpt, path);
  return load_checkpoint(path);
}

bool bitwise_equal(const Checkpoint& a, const Checkpoint& b) {
  return a.format_version == b.format_version && a.config.to_map() == b.config.to_map() &&
         a.models.energy.spec().program() == b.models.energy.spec().program() &&
         a.models.generator.spec().program() == b.models.generator.spec().program() &&
         same_params(a.models.energy.params(), b.models.energy.params()) &&
         same_params(a.models.generator.params(), b.models.generator.params()) &&
         same_params(a.models.statistics.params(), b.models.statistics.params()) &&
         same_optimizer(a.energy_opt, b.energy_opt) && same_optimizer(a.generator_opt, b.generator_opt) &&
         same_optimizer(a.statistics_opt, b.statistics_opt) && a.latent_rng == b.latent_rng &&
         a.shuffle_rng == b.shuffle_rng && a.data_stream == b.data_stream && a.iteration == b.iteration;
}

void require_resume_compatible(const Checkpoint& ckpt, const TrainingConfig& cfg, Index data_dim) {
  if (ckpt.config.latent_dim != cfg.latent_dim || ckpt.models.generator.latent_dim() != cfg.latent_dim) {
    throw ConfigError("checkpoint latent_dim " + std::to_string(ckpt.models.generator.latent_dim()) +
                      " does not match configured latent_dim " + std::to_string(cfg.latent_dim));
  }
  if (ckpt.models.energy.input_dim() != data_dim) {
    throw ConfigError("checkpoint data dimension " + std::to_string(ckpt.models.energy.input_dim()) +
                      " does not match dataset dimension " + std::to_string(data_dim));
  }
}

std::string parameter_hash(const nn::ParameterSet<float>& params) {
  std::string bytes;
  for (const auto& p : params) {
    bytes.append(reinterpret_cast<const char*>(p.data()), sizeof(float) * static_cast<std::size_t>(p.size()));
  }
  return io::sha256_hex(bytes);
}

// ---------------------------------------------------------------------------
// Trainer

Trainer::Trainer(TrainingConfig cfg, Models<float> models, std::shared_ptr<const RowSource> data)
    : cfg_(std::move(cfg)), models_(std::move(models)), data_(std::move(data)) {
  cfg_.validate();
  if (!data_) throw ConfigError("trainer: no dataset");
  if (models_.generator.latent_dim() != cfg_.latent_dim || models_.statistics.latent_dim() != cfg_.latent_dim) {
    throw ConfigError("trainer: network latent width does not match latent_dim " + std::to_string(cfg_.latent_dim));
  }
  if (models_.energy.input_dim() != data_->cols() || models_.generator.output_dim() != data_->cols() ||
      models_.statistics.data_dim() != data_->cols()) {
    throw ConfigError("trainer: network data width does not match dataset dimension " +
                      std::to_string(data_->cols()));
  }
  energy_opt_ = OptimizerState<float>::zeros_like(models_.energy.params());
  generator_opt_ = OptimizerState<float>::zeros_like(models_.generator.params());
  statistics_opt_ = OptimizerState<float>::zeros_like(models_.statistics.params());
  latent_rng_ = Rng::stream(cfg_.seed, 4);
  shuffle_rng_ = Rng::stream(cfg_.seed, 5);
  stream_ = DataStream(data_, cfg_.batch_size, Rng::stream(cfg_.seed, 6));
}

Trainer Trainer::from_checkpoint(const Checkpoint& ckpt, std::shared_ptr<const RowSource> data) {
  Trainer t(ckpt.config, ckpt.models, std::move(data));
  t.energy_opt_ = ckpt.energy_opt;
  t.generator_opt_ = ckpt.generator_opt;
  t.statistics_opt_ = ckpt.statistics_opt;
  t.latent_rng_ = Rng::deserialize(ckpt.latent_rng);
  t.shuffle_rng_ = Rng::deserialize(ckpt.shuffle_rng);
  io::ByteReader r(ckpt.data_stream);
  t.stream_.restore(r);
  t.iteration_ = ckpt.iteration;
  return t;
}

Checkpoint Trainer::checkpoint() const {
  Checkpoint c;
  c.config = cfg_;
  c.models = models_;
  c.energy_opt = energy_opt_;
  c.generator_opt = generator_opt_;
  c.statistics_opt = statistics_opt_;
  c.latent_rng = latent_rng_.serialize();
  c.shuffle_rng = shuffle_rng_.serialize();
  io::ByteWriter w;
  stream_.save(w);
  c.data_stream = w.take();
  c.iteration = iteration_;
  return c;
}

LossBreakdown Trainer::train_iteration() {
  const LatentPrior prior{cfg_.latent_dim};
  const Index m = cfg_.batch_size;
  LossBreakdown out;

  const AdamConfig energy_adam = cfg_.adam_for(cfg_.energy_lr, iteration_);
  for (int step = 0; step < cfg_.energy_steps; ++step) {
    const SampleBatch<float> real{stream_.next()};
    const auto z = sample_prior<float>(prior, m, latent_rng_);
    const SampleBatch<float> fake = generate(models_.generator, z);
    const auto params = nn::bind(models_.energy.params(), true);
    auto obj = energy_objective(models_.energy, std::span<const ad::Var<float>>(params), real, fake,
                                cfg_.penalty_coeff);
    const auto grads = values_of(ad::grad(obj.loss, params));
    adam_step(models_.energy.params(), grads, energy_opt_, energy_adam);
    out.energy_real = obj.parts.energy_real;
    out.energy_fake = obj.parts.energy_fake;
    out.penalty = obj.parts.penalty;
    out.loss_E = obj.parts.loss_E;
    if (on_update) on_update("energy");
  }

  const auto z = sample_prior<float>(prior, m, latent_rng_);
  const auto z_marg = shuffle_marginals(z, shuffle_rng_);
  const auto pe = nn::bind(models_.energy.params(), false);
  const auto pg = nn::bind(models_.generator.params(), true);
  const auto pt = nn::bind(models_.statistics.params(), true);
  auto adv = adversarial_objective(models_, pe, pg, pt, z, z_marg, cfg_.mi_variant);
  const auto grads_g = values_of(ad::grad(adv.loss_G, pg));
  const auto grads_t = values_of(ad::grad(adv.loss_T, pt));
  adam_step(models_.generator.params(), grads_g, generator_opt_, cfg_.adam_for(cfg_.generator_lr, iteration_));
  adam_step(models_.statistics.params(), grads_t, statistics_opt_, cfg_.adam_for(cfg_.statistics_lr, iteration_));
  out.generator_energy = adv.parts.generator_energy;
  out.mi_estimate = adv.parts.mi_estimate;
  out.loss_G = adv.parts.loss_G;
  out.loss_T = adv.parts.loss_T;
  if (on_update) on_update("generator");
  ++iteration_;
  return out;
}

// ---------------------------------------------------------------------------
// Runs

std::string metrics_row(std::int64_t step, const LossBreakdown& b) {
  char buf[512];
  std::snprintf(buf, sizeof buf, "%" PRId64 ",%.9g,%.9g,%.9g,%.9g,%.9g,%.9g,%.9g", step, b.loss_E, b.loss_G, b.loss_T,
                b.energy_real, b.energy_fake, b.penalty, b.mi_estimate);
  return buf;
}

std::filesystem::path checkpoint_path(const std::filesystem::path& out_dir, std::int64_t iteration) {
  char name[64];
  std::snprintf(name, sizeof name, "ckpt_%08" PRId64 ".bin", iteration);
  return out_dir / "checkpoints" / name;
}

std::optional<std::filesystem::path> latest_checkpoint(const std::filesystem::path& out_dir) {
  const auto dir = out_dir / "checkpoints";
  if (!std::filesystem::is_directory(dir)) return std::nullopt;
  std::optional<std::filesystem::path> best;
  for (const auto& entry : std::filesystem::directory_iterator(dir)) {
    const std::string name = entry.path().filename().string();
    if (name.rfind("ckpt_", 0) == 0 && entry.path().extension() == ".bin") {
      if (!best || name > best->filename().string()) best = entry.path();
    }
  }
  return best;
}

namespace {

void truncate_metrics(const std::filesystem::path& path, std::int64_t last_step) {
  std::ifstream in(path);
  std::vector<std::string> keep;
  std::string line;
  bool header = true;
  while (std::getline(in, line)) {
    if (header) {
      keep.push_back(line);
      header = false;
      continue;
    }
    if (line.empty()) continue;
    if (std::stoll(line.substr(0, line.find(','))) <= last_step) keep.push_back(line);
  }
  in.close();
  std::ostringstream os;
  if (keep.empty()) keep.push_back(kMetricsHeader);
  for (const auto& l : keep) os << l << "\n";
  io::write_file_atomic(path, os.str());
}

}  // namespace

RunResult run_training(const TrainingConfig& cfg, const ModelConfig& model_cfg,
                       std::shared_ptr<const RowSource> data, const RunOptions& options) {
  cfg.validate();
  if (options.checkpoint_every < 1) throw ConfigError("checkpoint interval must be >= 1");
  std::filesystem::create_directories(options.out_dir / "checkpoints");
  RunResult result;
  result.metrics_path = options.out_dir / "metrics.csv";

  std::optional<Trainer> trainer;
  const auto existing = options.resume ? latest_checkpoint(options.out_dir) : std::nullopt;
  if (existing) {
    Checkpoint ckpt = load_checkpoint(*existing);
    require_resume_compatible(ckpt, cfg, data->cols());
    ckpt.config.total_iters = cfg.total_iters;
    trainer.emplace(Trainer::from_checkpoint(ckpt, data));
    if (std::filesystem::exists(result.metrics_path)) truncate_metrics(result.metrics_path, ckpt.iteration);
    else io::write_file_atomic(result.metrics_path, std::string(kMetricsHeader) + "\n");
  } else {
    std::filesystem::remove_all(options.out_dir / "checkpoints");
    trainer.emplace(cfg, build_models(model_cfg, cfg.latent_dim, cfg.seed), data);
    io::write_file_atomic(result.metrics_path, std::string(kMetricsHeader) + "\n");
    const auto path = checkpoint_path(options.out_dir, 0);
    save_checkpoint(trainer->checkpoint(), path);
  }

  std::ofstream metrics(result.metrics_path, std::ios::app);
  std::int64_t last_saved = trainer->iteration();
  const std::int64_t end = std::min(cfg.total_iters, options.stop_after.value_or(cfg.total_iters));
  while (trainer->iteration() < end) {
    const LossBreakdown b = trainer->train_iteration();
    metrics << metrics_row(trainer->iteration(), b) << "\n";
    if (options.on_iteration) options.on_iteration(*trainer, b);
    if (options.eval_every > 0 && options.on_evaluate && trainer->iteration() % options.eval_every == 0) {
      options.on_evaluate(*trainer);
    }
    if (trainer->iteration() % options.checkpoint_every == 0) {
      metrics.flush();
      save_checkpoint(trainer->checkpoint(), checkpoint_path(options.out_dir, trainer->iteration()));
      last_saved = trainer->iteration();
    }
  }
  metrics.flush();
  if (last_saved != trainer->iteration() || !std::filesystem::exists(checkpoint_path(options.out_dir, last_saved))) {
    save_checkpoint(trainer->checkpoint(), checkpoint_path(options.out_dir, trainer->iteration()));
  }
  result.final_checkpoint = trainer->checkpoint();
  for (const auto& entry : std::filesystem::directory_iterator(options.out_dir / "checkpoints")) {
    if (entry.path().extension() == ".bin") result.checkpoints.push_back(entry.path());
  }
  std::sort(result.checkpoints.begin(), result.checkpoints.end());
  return result;
}

}  // namespace meg
