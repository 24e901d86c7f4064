#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "hvae/config.hpp"
#include "hvae/params.hpp"
#include "hvae/synthworld.hpp"

namespace hvae::cls {

using nn::Tensor;

/// Conv trunk over (frame, next frame - frame) pairs, mean-pooled over time,
/// then a linear readout.
struct ClassifierConfig {
  int K = 3;
  int channels = 3;
  int height = 16;
  int width = 16;
  std::vector<int> conv_channels{8, 16};
  int hidden = 32;

  void validate() const;
  void write(KvDoc& doc) const;
  static ClassifierConfig read(const KvDoc& doc);
};

struct ClassifierTraining {
  double lr = 1e-3;
  int batch = 16;
  int min_steps = 500;  ///< keep going this long even once the floor is met
  int max_steps = 3000;
  int eval_every = 100;
  double accuracy_floor = 0.99;
  std::uint64_t seed = 0;
};

class ActionClassifier {
 public:
  ActionClassifier(ClassifierConfig cfg, nn::ParameterStore<float> params);
  static ActionClassifier init(const ClassifierConfig& cfg, std::uint64_t seed);

  const ClassifierConfig& config() const noexcept { return cfg_; }
  const nn::ParameterStore<float>& parameters() const noexcept { return params_; }

  /// images [N, T, C, H, W] -> class probabilities [N, K].
  Tensor<float> predict_proba(const Tensor<float>& images) const;
  std::vector<int> predict(const Tensor<float>& images) const;
  double accuracy(const synth::Dataset& ds) const;

  void save(const std::string& path) const;
  static ActionClassifier load(const std::string& path);

  struct Report {
    int steps = 0;
    double train_accuracy = 0;
    double eval_accuracy = 0;
  };

  /// Trains on `train` until `eval` accuracy reaches the floor; throws
  /// TrainingFailure when max_steps pass without getting there.
  static ActionClassifier train(const synth::Dataset& train, const synth::Dataset& eval,
                                const ClassifierTraining& opts, Report* report = nullptr);

 private:
  ClassifierConfig cfg_;
  nn::ParameterStore<float> params_;
};

}  // namespace hvae::cls
