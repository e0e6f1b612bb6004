#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <limits>
#include <map>
#include <mutex>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "berto/baselines.hpp"
#include "berto/checkpoint.hpp"
#include "berto/data.hpp"
#include "berto/energy.hpp"
#include "berto/model.hpp"
#include "berto/prompting.hpp"
#include "berto/training.hpp"

#include "json.hpp"

namespace berto {

/// key = value lines; '#' starts a comment. Later keys override earlier ones.
std::map<std::string, std::string> read_kv_file(const std::filesystem::path& path);

struct RunConfig {
  std::string data_source = "synth";  // synth | store | cdr
  std::string data_path;
  SynthConfig synth;
  int train_days = 11;
  int test_days = 3;
  int val_days = 1;  // carved from the end of the training period for early stopping
  int history = 5;
  int stats_window = kBinsPerDay;
  double calibration_percentile = 99.5;
  double max_missing = 0.2;
  ModelConfig model;  // vocab_size filled from the vocabulary
  TrainConfig train;
  TrainConfig finetune;
  int fnn_hidden = 16;
  TrainConfig fnn;
  PowerParams power;
  Orientation orientation = Orientation::TableConsistent;
  std::string output_dir = "out";
  std::uint64_t model_seed = 1;

  RunConfig();
  void apply(const std::map<std::string, std::string>& kv);
  static RunConfig load(const std::filesystem::path& path);
};

struct Dataset {
  std::vector<LoadSeries> series;
  std::vector<CellPair> pairs;
  std::vector<PredictionSample> train;
  std::vector<PredictionSample> validation;
  std::vector<PredictionSample> test;
};

/// Raw CDR file -> per-cell load-percent series calibrated on the training period.
std::vector<LoadSeries> ingest_cdr(const std::filesystem::path& path, const RunConfig& cfg, std::ostream* log = nullptr);

/// Loads or generates the load-percent series named by cfg.data_source.
std::vector<LoadSeries> load_series(const RunConfig& cfg);

/// Windows every series and splits targets into train / validation / test
/// by bin index; pairs consecutive cells in id order.
Dataset prepare_dataset(std::vector<LoadSeries> series, const RunConfig& cfg);

using Predictor = std::function<double(const PredictionSample&)>;

Predictor model_predictor(const ModelWeights& w, const Vocabulary& vocab, std::optional<Preference> pref);
Predictor fnn_predictor(const FnnWeights& w);
Predictor previous_value_predictor();

struct TimeRange {
  std::int64_t start_ms = std::numeric_limits<std::int64_t>::min();
  std::int64_t end_ms = std::numeric_limits<std::int64_t>::max();  // inclusive
  bool contains(std::int64_t t) const { return t >= start_ms && t <= end_ms; }
};

struct PairTraces {
  std::vector<PairTrace> predicted;
  std::vector<PairTrace> actual;
  std::vector<std::int64_t> times;
};

/// Predicted and actual per-pair load traces over the test targets within range.
/// predictions[i] corresponds to ds.test[i].
PairTraces build_pair_traces(const Dataset& ds, std::span<const double> predictions, const TimeRange& range);

std::vector<double> predict_all(std::span<const PredictionSample> samples, const Predictor& predictor);

struct ModelScore {
  std::string name;
  double mse = 0.0;
  double mean_signed_error = 0.0;
};

/// Sorted by ascending MSE.
std::vector<ModelScore> score_models(const std::vector<std::pair<std::string, Predictor>>& models,
                                     std::span<const PredictionSample> samples);

std::string render_score_table(const std::vector<ModelScore>& rows);

nlohmann::json to_json(const SimReport& r, bool include_traces = false);
nlohmann::json to_json(const std::vector<ModelScore>& rows);

struct PreferenceRun {
  Preference preference;
  double q = 0.0;
  SimReport report;
};

/// Header carries the orientation and the full phrase -> q mapping.
std::string render_tradeoff_table(const std::vector<PreferenceRun>& runs, Orientation orientation,
                                  const std::string& baseline_label);
/// Per-pair rows followed by a totals row.
std::string render_pair_table(const SimReport& r);
nlohmann::json tradeoff_json(const std::vector<PreferenceRun>& runs, Orientation orientation,
                             const std::string& baseline_label);

/// Loaded artefacts behind both the `simulate` command and the JSON service.
/// Test-period predictions are computed once per preference and cached.
class Scenario {
 public:
  Scenario(Dataset ds, Vocabulary vocab, ModelWeights berto, std::optional<ModelWeights> baseline,
           PowerParams power, Orientation orientation);

  const Dataset& dataset() const { return ds_; }
  const Vocabulary& vocabulary() const { return vocab_; }
  const ModelWeights& model() const { return berto_; }
  Orientation orientation() const { return orientation_; }
  const PowerParams& power() const { return power_; }
  std::string baseline_label() const;

  /// BERTO prediction for the bin after window_end_ms (the last history bin).
  struct PointPrediction {
    double prediction;
    double q;
    std::int64_t target_ms;
    double actual;
  };
  PointPrediction predict_point(int cell_id, std::int64_t window_end_ms, Preference pref) const;

  SimReport simulate(Preference pref, const TimeRange& range) const;
  PairTraces traces(Preference pref, const TimeRange& range) const;
  PreferenceRun run(Preference pref, const TimeRange& range) const;

 private:
  const std::vector<double>& cached(std::optional<Preference> pref, bool baseline_model) const;
  SimReport baseline_report(const TimeRange& range) const;

  Dataset ds_;
  Vocabulary vocab_;
  ModelWeights berto_;
  std::optional<ModelWeights> baseline_;
  PowerParams power_;
  Orientation orientation_;
  std::map<std::pair<int, std::int64_t>, std::size_t> sample_index_;  // (cell, target_ms) -> test/all index
  std::vector<PredictionSample> all_samples_;
  mutable std::mutex mu_;
  mutable std::map<int, std::vector<double>> cache_;
};

}  // namespace berto
