#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "berto/data.hpp"
#include "berto/losses.hpp"
#include "berto/model.hpp"
#include "berto/prompting.hpp"

namespace berto {

class TrainingError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct TrainConfig {
  double base_lr = 1e-5;
  int batch_size = 128;
  int epochs = 30;
  double weight_decay = 0.01;
  std::uint64_t seed = 1;
  LossSpec loss;
  double clip_norm = 1.0;         // global gradient norm; <= 0 disables
  int early_stop_patience = 5;    // epochs without eval-MSE improvement; <= 0 disables
  std::size_t samples_per_epoch = 0;  // 0 = every sample each epoch
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;

  void validate() const;
  /// Applies recognised key=value entries, throwing on unknown keys.
  void apply(const std::map<std::string, std::string>& kv);
};

/// base_lr * (1 + cos(pi * step / total_steps)) / 2
double cosine_lr(long step, long total_steps, double base_lr);

/// Adaptive-moment state, one accumulator pair per parameter tensor.
struct AdamState {
  std::vector<Mat> m;
  std::vector<Mat> v;
  long step = 0;
};

struct AdamHyper {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

/// w <- w - lr * (m_hat / (sqrt(v_hat) + eps) + decay * w). A non-finite
/// gradient rejects the whole step (weights and state untouched).
void optimizer_step(std::span<Mat* const> params, std::span<const Mat* const> grads, AdamState& state, double lr,
                    double decay, const AdamHyper& hyper = {});

template <typename P>
std::vector<Mat*> parameter_list(P& p) {
  std::vector<Mat*> out;
  p.for_each([&](const std::string&, Mat& m) { out.push_back(&m); });
  return out;
}

template <typename P>
std::vector<const Mat*> parameter_list(const P& p) {
  std::vector<const Mat*> out;
  p.for_each([&](const std::string&, const Mat& m) { out.push_back(&m); });
  return out;
}

/// Scales all gradients so their joint L2 norm is at most max_norm. Returns the pre-clip norm.
double clip_global_norm(std::span<Mat* const> grads, double max_norm);

struct EpochRecord {
  int epoch = 0;
  double lr = 0.0;
  double train_loss = 0.0;
  double eval_mse = 0.0;
};

struct TrainResult {
  ModelWeights weights;
  std::vector<EpochRecord> history;
  double initial_eval_mse = 0.0;
  bool diverged = false;
  std::string diagnostic;
};

struct Evaluation {
  double mse = 0.0;
  double mean_signed_error = 0.0;
  std::vector<double> predictions;
};

Evaluation evaluate_predictions(std::span<const double> predictions, std::span<const PredictionSample> samples);

Evaluation evaluate(const ModelWeights& w, const Vocabulary& vocab, std::span<const PredictionSample> samples,
                    std::optional<Preference> pref = std::nullopt);

/// Produces the training instance for one sample. The generator is a
/// dedicated stream for per-instance choices (e.g. preference sampling).
using ExampleFactory = std::function<Example(std::size_t index, std::mt19937_64& choice_rng)>;

/// Shared optimisation loop: seeded shuffling, cosine schedule, AdamW,
/// gradient clipping and early stopping on eval MSE. Returns the weights of
/// the best eval epoch (or the last epoch when no eval set is given).
TrainResult fit(ModelWeights init, std::size_t num_samples, const ExampleFactory& make,
                std::span<const PredictionSample> eval_samples, const Vocabulary& vocab, const TrainConfig& cfg,
                std::optional<Preference> eval_preference = std::nullopt);

/// Trains on prompts without a preference clause under cfg.loss.
TrainResult train(ModelWeights init, std::span<const PredictionSample> samples,
                  std::span<const PredictionSample> eval_samples, const Vocabulary& vocab, const TrainConfig& cfg);

struct FinetuneOptions {
  std::vector<Preference> preferences{kAllPreferences.begin(), kAllPreferences.end()};
  Orientation orientation = Orientation::TableConsistent;
  bool include_clause = true;
};

/// Every instance draws a preference uniformly from opts.preferences, is
/// rendered with that preference's clause, and is trained under BLF with
/// the preference's q. cfg.loss is ignored.
TrainResult finetune_berto(ModelWeights init, std::span<const PredictionSample> samples,
                           std::span<const PredictionSample> eval_samples, const Vocabulary& vocab,
                           const TrainConfig& cfg, const FinetuneOptions& opts = {});

/// Uniform integer in [0, n) from the top bits of a 64-bit draw, so results
/// do not depend on the standard library's distribution implementation.
std::size_t uniform_index(std::mt19937_64& rng, std::size_t n);
void shuffle_indices(std::vector<std::size_t>& idx, std::mt19937_64& rng);

void write_history(std::ostream& out, const std::vector<EpochRecord>& history);

}  // namespace berto
