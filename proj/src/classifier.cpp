// SPDX-License-Identifier: Apache-2.0
#include "meg/classifier.hpp"

#include <cstdio>

#include "meg/io.hpp"
#include "meg/optim.hpp"

namespace meg {

namespace {

constexpr std::string_view kClassifierMagic = "MEGCLSF1";
constexpr std::uint32_t kClassifierVersion = 1;

Mat<float> shifted(const Mat<float>& images, Index h, Index w, Rng& rng, int max_shift) {
  if (max_shift <= 0) return images;
  Mat<float> out = Mat<float>::Zero(images.rows(), images.cols());
  for (Index n = 0; n < images.rows(); ++n) {
    const int dy = static_cast<int>(rng.uniform_index(2 * max_shift + 1)) - max_shift;
    const int dx = static_cast<int>(rng.uniform_index(2 * max_shift + 1)) - max_shift;
    for (Index y = 0; y < h; ++y) {
      const Index sy = y - dy;
      if (sy < 0 || sy >= h) continue;
      for (Index x = 0; x < w; ++x) {
        const Index sx = x - dx;
        if (sx >= 0 && sx < w) out(n, y * w + x) = images(n, sy * w + sx);
      }
    }
  }
  return out;
}

}  // namespace

std::vector<int> DigitClassifier::predict(const Mat<float>& images, Index chunk) const {
  if (images.cols() != spec.input.size()) throw ConfigError("digit classifier: image size mismatch");
  ad::GradMode no_grad(false);
  const auto p = nn::bind(params, false);
  std::vector<int> out;
  out.reserve(static_cast<std::size_t>(images.rows()));
  for (Index start = 0; start < images.rows(); start += chunk) {
    const Index n = std::min(chunk, images.rows() - start);
    const Mat<float> logits = nn::forward(spec, ad::Var<float>::constant(images.middleRows(start, n)), p).value();
    for (Index i = 0; i < n; ++i) {
      Index best;
      logits.row(i).maxCoeff(&best);
      out.push_back(static_cast<int>(best));
    }
  }
  return out;
}

double classifier_accuracy(const DigitClassifier& clf, const DigitSet& digits) {
  if (digits.size() == 0) return 0.0;
  const auto pred = clf.predict(digits.images);
  Index correct = 0;
  for (Index i = 0; i < digits.size(); ++i) correct += pred[static_cast<std::size_t>(i)] == digits.labels[i];
  return static_cast<double>(correct) / static_cast<double>(digits.size());
}

DigitClassifier train_digit_classifier(const DigitSet& digits, const ClassifierTrainConfig& cfg,
                                       const std::function<void(const std::string&)>& log) {
  if (digits.size() < 10) throw ConfigError("digit classifier: too few training images");
  DigitClassifier clf;
  clf.spec = nn::NetworkSpec::parse(cfg.program, nn::Shape{digits.height, digits.width, 1});
  if (clf.spec.output_shape().size() != 10) throw ConfigError("digit classifier must output 10 logits");
  Rng init = Rng::stream(cfg.seed, 1), order = Rng::stream(cfg.seed, 2), aug = Rng::stream(cfg.seed, 3);
  clf.params = nn::init_parameters<float>(clf.spec, init);

  const auto perm = order.permutation(static_cast<std::size_t>(digits.size()));
  const auto n_hold = static_cast<std::size_t>(cfg.holdout_fraction * static_cast<double>(digits.size()));
  DigitSet train, hold;
  train.height = hold.height = digits.height;
  train.width = hold.width = digits.width;
  train.images.resize(digits.size() - static_cast<Index>(n_hold), digits.images.cols());
  hold.images.resize(static_cast<Index>(n_hold), digits.images.cols());
  for (std::size_t i = 0; i < perm.size(); ++i) {
    const Index src = static_cast<Index>(perm[i]);
    if (i < n_hold) {
      hold.images.row(static_cast<Index>(i)) = digits.images.row(src);
      hold.labels.push_back(digits.labels[src]);
    } else {
      train.images.row(static_cast<Index>(i - n_hold)) = digits.images.row(src);
      train.labels.push_back(digits.labels[src]);
    }
  }

  auto state = OptimizerState<float>::zeros_like(clf.params);
  const AdamConfig adam{cfg.learning_rate, 0.9, 0.999, 1e-8};
  const Index m = std::min(cfg.batch_size, train.size());
  for (Index epoch = 0; epoch < cfg.epochs; ++epoch) {
    const auto ord = order.permutation(static_cast<std::size_t>(train.size()));
    double total = 0;
    Index batches = 0;
    for (Index start = 0; start + m <= train.size(); start += m) {
      Mat<float> x(m, train.images.cols());
      Mat<float> onehot = Mat<float>::Zero(m, 10);
      for (Index i = 0; i < m; ++i) {
        const Index src = static_cast<Index>(ord[static_cast<std::size_t>(start + i)]);
        x.row(i) = train.images.row(src);
        onehot(i, train.labels[src]) = 1;
      }
      x = shifted(x, train.height, train.width, aug, cfg.max_shift);
      const auto p = nn::bind(clf.params, true);
      auto logits = nn::forward(clf.spec, ad::Var<float>::constant(x), p);
      auto loss = ad::mean(ad::sub(ad::logsumexp_rows(logits), ad::sum_cols(ad::mul_const(logits, onehot))));
      auto grads = ad::grad(loss, p);
      nn::ParameterSet<float> g;
      for (auto& v : grads) g.push_back(v.value());
      adam_step(clf.params, g, state, adam);
      total += loss.item();
      ++batches;
    }
    if (log) {
      char buf[160];
      std::snprintf(buf, sizeof buf, "classifier epoch %lld: loss %.4f, holdout accuracy %.4f",
                    static_cast<long long>(epoch + 1), total / std::max<Index>(batches, 1),
                    hold.size() ? classifier_accuracy(clf, hold) : -1.0);
      log(buf);
    }
  }
  clf.holdout_accuracy = hold.size() ? classifier_accuracy(clf, hold) : -1.0;
  return clf;
}

void save_classifier(const DigitClassifier& clf, const std::filesystem::path& path) {
  io::ByteWriter w;
  w.put_string(clf.spec.input.to_string());
  w.put_string(clf.spec.program());
  w.put_f64(clf.holdout_accuracy);
  w.put_u64(clf.params.size());
  for (const auto& p : clf.params) w.put_matrix(p);
  io::write_file_atomic(path, io::seal(kClassifierMagic, kClassifierVersion, w.bytes()));
}

DigitClassifier load_classifier(const std::filesystem::path& path) {
  if (!std::filesystem::exists(path)) throw Error("classifier not found: '" + path.string() + "'");
  const std::string payload = io::unseal(kClassifierMagic, kClassifierVersion, io::read_file(path), path.string());
  io::ByteReader r(payload);
  DigitClassifier clf;
  const auto shape = nn::Shape::parse(r.get_string());
  clf.spec = nn::NetworkSpec::parse(r.get_string(), shape);
  clf.holdout_accuracy = r.get_f64();
  const std::uint64_t n = r.get_u64();
  const auto shapes = nn::parameter_shapes(clf.spec);
  if (n != shapes.size()) throw IntegrityError(path.string() + ": parameter count mismatch");
  for (std::uint64_t i = 0; i < n; ++i) {
    clf.params.push_back(r.get_matrix<float>());
    if (clf.params.back().rows() != shapes[i].first || clf.params.back().cols() != shapes[i].second)
      throw IntegrityError(path.string() + ": parameter shape mismatch");
  }
  return clf;
}

StackedDigitClassifier::StackedDigitClassifier(const DigitClassifier& digits, int stacks)
    : digits_(digits), stacks_(stacks), capacity_(1) {
  if (stacks < 1) throw ConfigError("stacked classifier: stacks must be >= 1");
  for (int i = 0; i < stacks; ++i) capacity_ *= 10;
}

std::vector<Index> StackedDigitClassifier::classify(const Mat<float>& samples) const {
  const Index pixels = digits_.spec.input.size();
  if (samples.cols() != pixels * stacks_) {
    throw ProtocolError("stacked classifier: expected " + std::to_string(pixels * stacks_) + " values per sample, got " +
                        std::to_string(samples.cols()));
  }
  std::vector<Index> ids(static_cast<std::size_t>(samples.rows()), 0);
  Mat<float> channel(samples.rows(), pixels);
  for (int c = 0; c < stacks_; ++c) {
    for (Index i = 0; i < samples.rows(); ++i)
      for (Index p = 0; p < pixels; ++p) channel(i, p) = samples(i, p * stacks_ + c);
    const auto digits = digits_.predict(channel);
    for (std::size_t i = 0; i < ids.size(); ++i) ids[i] = ids[i] * 10 + digits[i];
  }
  return ids;
}

}  // namespace meg
