#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "berto/data.hpp"
#include "berto/model.hpp"
#include "berto/training.hpp"

namespace berto {

/// Last observed value. Throws std::invalid_argument on an empty history.
double previous_value_predict(const PredictionSample& sample);

/// Feed-forward baseline over (history, mean, deviation): (h+2) -> hidden -> 1
/// with tanh in between. Inputs and output are scaled by value_scale so the
/// network works near unit range.
struct FnnWeights {
  Mat w1, b1, w2, b2;
  double value_scale = 100.0;

  template <typename F>
  void for_each(F&& f) {
    f(std::string("fnn.0.weight"), w1);
    f(std::string("fnn.0.bias"), b1);
    f(std::string("fnn.1.weight"), w2);
    f(std::string("fnn.1.bias"), b2);
  }
  template <typename F>
  void for_each(F&& f) const {
    const_cast<FnnWeights*>(this)->for_each(
        [&](const std::string& n, Mat& m) { f(n, static_cast<const Mat&>(m)); });
  }

  int input_dim() const { return static_cast<int>(w1.rows()); }
  std::size_t parameter_count() const;
  bool operator==(const FnnWeights& other) const;
};

FnnWeights fnn_init(int history_len, int hidden, std::uint64_t seed);

double fnn_predict(const FnnWeights& w, const PredictionSample& sample);

struct FnnGradient {
  FnnWeights grads;
  double mean_loss = 0.0;
};

FnnGradient fnn_gradients(const FnnWeights& w, std::span<const PredictionSample> batch, const LossSpec& loss);

struct FnnTrainResult {
  FnnWeights weights;
  std::vector<EpochRecord> history;
};

/// Same optimiser, schedule and shuffling contracts as the transformer loop.
/// With eval samples, keeps the best eval-MSE epoch and stops early.
FnnTrainResult fnn_train(std::span<const PredictionSample> samples, const TrainConfig& cfg, int hidden = 16,
                         std::span<const PredictionSample> eval_samples = {});

}  // namespace berto
