// SPDX-License-Identifier: Apache-2.0
//
// Alternating training of the energy, generator and statistics networks:
// `energy_steps` energy updates, each on fresh data and latent batches,
// followed by one joint generator/statistics update.

#pragma once

#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "meg/io.hpp"
#include "meg/models.hpp"
#include "meg/objectives.hpp"
#include "meg/optim.hpp"
#include "meg/rng.hpp"

namespace meg {

struct TrainingConfig {
  double learning_rate = 1e-4;
  double adam_beta1 = 0.5;
  double adam_beta2 = 0.9;
  double adam_epsilon = 1e-8;
  double penalty_coeff = 0.1;
  int energy_steps = 5;
  Index batch_size = 64;
  std::int64_t total_iters = 0;
  Index latent_dim = 2;
  std::uint64_t seed = 0;
  MiVariant mi_variant = MiVariant::Softplus;
  // Optional per-network learning rates; default to learning_rate. Zero freezes a network.
  std::optional<double> energy_lr, generator_lr, statistics_lr;
  // Linear decay scales every rate by 1 - iteration / total_iters.
  enum class Schedule { Constant, Linear } lr_schedule = Schedule::Constant;

  void validate() const;
  double rate_scale(std::int64_t iteration) const {
    if (lr_schedule == Schedule::Constant || total_iters <= 0) return 1.0;
    return 1.0 - static_cast<double>(iteration) / static_cast<double>(total_iters);
  }
  AdamConfig adam_for(std::optional<double> lr, std::int64_t iteration = 0) const {
    return AdamConfig{lr.value_or(learning_rate) * rate_scale(iteration), adam_beta1, adam_beta2, adam_epsilon};
  }

  std::map<std::string, std::string> to_map() const;
  /// Returns false if `key` is not a training key.
  bool set(const std::string& key, const std::string& value);
};

/// Layer programs for the three networks (see nn::NetworkSpec::parse).
struct ModelConfig {
  nn::Shape data_shape = nn::Shape::flat(2);
  std::string energy = "dense:128,lrelu,dense:128,lrelu,dense:128,lrelu,dense:1";
  std::string generator = "dense:128,relu,dense:128,relu,dense:128,relu,dense:2";
  std::string statistics_encoder;
  std::string statistics_head = "dense:128,lrelu,dense:128,lrelu,dense:1";
  Combine combine = Combine::Concat;

  std::map<std::string, std::string> to_map() const;
  bool set(const std::string& key, const std::string& value);
};

Models<float> build_models(const ModelConfig& cfg, Index latent_dim, std::uint64_t seed);

/// A fixed training set addressed by row; rows may be produced on demand.
class RowSource {
 public:
  virtual ~RowSource() = default;
  virtual Index rows() const = 0;
  virtual Index cols() const = 0;
  /// Writes row `i` to `out`, which holds cols() values.
  virtual void copy_row(Index i, float* out) const = 0;
};

class MatrixRows : public RowSource {
 public:
  explicit MatrixRows(std::shared_ptr<const Mat<float>> data) : data_(std::move(data)) {}
  Index rows() const override { return data_ ? data_->rows() : 0; }
  Index cols() const override { return data_ ? data_->cols() : 0; }
  void copy_row(Index i, float* out) const override {
    std::copy(data_->row(i).data(), data_->row(i).data() + data_->cols(), out);
  }

 private:
  std::shared_ptr<const Mat<float>> data_;
};

inline std::shared_ptr<const RowSource> rows_of(std::shared_ptr<const Mat<float>> data) {
  return std::make_shared<MatrixRows>(std::move(data));
}

/// Minibatches of rows from a fixed dataset, reshuffled at each epoch with
/// its own random stream. A batch never straddles an epoch boundary; the
/// tail of a permutation shorter than a batch is dropped.
class DataStream {
 public:
  DataStream() = default;
  DataStream(std::shared_ptr<const RowSource> data, Index batch_size, Rng rng);

  Mat<float> next();
  std::int64_t epoch() const { return epoch_; }
  std::size_t position() const { return position_; }

  void save(io::ByteWriter& w) const;
  void restore(io::ByteReader& r);

 private:
  void reshuffle();
  std::shared_ptr<const RowSource> data_;
  Index batch_size_ = 1;
  Rng rng_;
  std::vector<std::size_t> order_;
  std::size_t position_ = 0;
  std::int64_t epoch_ = 0;
};

inline constexpr std::uint32_t kCheckpointVersion = 1;
inline constexpr std::string_view kCheckpointMagic = "MEGCKPT1";

struct Checkpoint {
  std::uint32_t format_version = kCheckpointVersion;
  TrainingConfig config;
  Models<float> models;
  OptimizerState<float> energy_opt, generator_opt, statistics_opt;
  std::string latent_rng, shuffle_rng;
  std::string data_stream;  // opaque serialized DataStream state
  std::int64_t iteration = 0;
};

std::string encode_checkpoint(const Checkpoint& ckpt);
Checkpoint decode_checkpoint(std::string_view bytes, const std::string& origin = "checkpoint");
void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path);
Checkpoint load_checkpoint(const std::filesystem::path& path);
/// save then load.
Checkpoint checkpoint_roundtrip(const Checkpoint& ckpt, const std::filesystem::path& path);
bool bitwise_equal(const Checkpoint& a, const Checkpoint& b);

/// Throws ConfigError naming the offending dimension if `ckpt` cannot seed a
/// run with the given configuration.
void require_resume_compatible(const Checkpoint& ckpt, const TrainingConfig& cfg, Index data_dim);

/// SHA-256 over the raw bytes of a parameter set.
std::string parameter_hash(const nn::ParameterSet<float>& params);

class Trainer {
 public:
  Trainer(TrainingConfig cfg, Models<float> models, std::shared_ptr<const RowSource> data);
  Trainer(TrainingConfig cfg, Models<float> models, std::shared_ptr<const Mat<float>> data)
      : Trainer(std::move(cfg), std::move(models), rows_of(std::move(data))) {}
  static Trainer from_checkpoint(const Checkpoint& ckpt, std::shared_ptr<const RowSource> data);
  static Trainer from_checkpoint(const Checkpoint& ckpt, std::shared_ptr<const Mat<float>> data) {
    return from_checkpoint(ckpt, rows_of(std::move(data)));
  }

  /// One outer iteration; returns the breakdown of the last energy step and
  /// the generator step.
  LossBreakdown train_iteration();

  Checkpoint checkpoint() const;

  const TrainingConfig& config() const { return cfg_; }
  const Models<float>& models() const { return models_; }
  Models<float>& models() { return models_; }
  const OptimizerState<float>& energy_optimizer() const { return energy_opt_; }
  const OptimizerState<float>& generator_optimizer() const { return generator_opt_; }
  const OptimizerState<float>& statistics_optimizer() const { return statistics_opt_; }
  std::int64_t iteration() const { return iteration_; }
  std::int64_t epoch() const { return stream_.epoch(); }

  /// Invoked after every energy update and after the generator/statistics
  /// update with a phase tag ("energy" or "generator"). Test hook.
  std::function<void(const char* phase)> on_update;

 private:
  TrainingConfig cfg_;
  Models<float> models_;
  OptimizerState<float> energy_opt_, generator_opt_, statistics_opt_;
  Rng latent_rng_, shuffle_rng_;
  DataStream stream_;
  std::shared_ptr<const RowSource> data_;
  std::int64_t iteration_ = 0;
};

inline const char* kMetricsHeader = "step,loss_E,loss_G,loss_T,energy_real,energy_fake,penalty,mi_estimate";
std::string metrics_row(std::int64_t step, const LossBreakdown& b);

struct RunOptions {
  std::filesystem::path out_dir;
  std::int64_t checkpoint_every = 1000;
  bool resume = true;
  /// Stop after this iteration even if total_iters is larger (simulates an interruption).
  std::optional<std::int64_t> stop_after;
  std::int64_t eval_every = 0;
  std::function<void(const Trainer&)> on_evaluate;
  std::function<void(const Trainer&, const LossBreakdown&)> on_iteration;
};

struct RunResult {
  Checkpoint final_checkpoint;
  std::filesystem::path metrics_path;
  std::vector<std::filesystem::path> checkpoints;
};

/// Checkpoint path for an iteration inside a run directory.
std::filesystem::path checkpoint_path(const std::filesystem::path& out_dir, std::int64_t iteration);
/// Highest-iteration checkpoint in a run directory, if any.
std::optional<std::filesystem::path> latest_checkpoint(const std::filesystem::path& out_dir);

RunResult run_training(const TrainingConfig& cfg, const ModelConfig& model_cfg,
                       std::shared_ptr<const RowSource> data, const RunOptions& options);
inline RunResult run_training(const TrainingConfig& cfg, const ModelConfig& model_cfg,
                              std::shared_ptr<const Mat<float>> data, const RunOptions& options) {
  return run_training(cfg, model_cfg, rows_of(std::move(data)), options);
}

}  // namespace meg
