// SPDX-License-Identifier: Apache-2.0
//
// Digit classifier used to read mode ids off stacked digit images.

#pragma once

#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include "meg/data.hpp"
#include "meg/modes.hpp"
#include "meg/nn.hpp"

namespace meg {

struct DigitClassifier {
  nn::NetworkSpec spec;  // input H x W x 1, output 10 logits
  nn::ParameterSet<float> params;
  /// Accuracy on held-out digits measured after training (negative if unknown).
  double holdout_accuracy = -1;

  std::vector<int> predict(const Mat<float>& images, Index chunk = 2048) const;
};

struct ClassifierTrainConfig {
  std::string program = "conv:16:3:1:1,relu,conv:32:4:2:1,relu,conv:64:4:2:1,relu,dense:128,relu,dense:10";
  double learning_rate = 1e-3;
  Index batch_size = 64;
  Index epochs = 8;
  std::uint64_t seed = 0;
  /// Fraction of the source set kept out of training for the accuracy estimate.
  double holdout_fraction = 0.1;
  /// Random shifts of up to this many pixels during training.
  int max_shift = 2;
};

DigitClassifier train_digit_classifier(const DigitSet& digits, const ClassifierTrainConfig& cfg,
                                       const std::function<void(const std::string&)>& log = {});
double classifier_accuracy(const DigitClassifier& clf, const DigitSet& digits);

void save_classifier(const DigitClassifier& clf, const std::filesystem::path& path);
DigitClassifier load_classifier(const std::filesystem::path& path);

/// Classifies every channel of an H x W x stacks image and combines the
/// digits positionally into a base-10 mode id.
class StackedDigitClassifier : public ModeClassifier {
 public:
  StackedDigitClassifier(const DigitClassifier& digits, int stacks);
  Index capacity() const override { return capacity_; }
  std::vector<Index> classify(const Mat<float>& samples) const override;

 private:
  const DigitClassifier& digits_;
  int stacks_;
  Index capacity_;
};

}  // namespace meg
