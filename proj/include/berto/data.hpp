#pragma once

#include <cstdint>
#include <istream>
#include <ostream>
#include <stdexcept>
#include <string>
#include <vector>

namespace berto {

inline constexpr std::int64_t kBinMs = 600000;  // 10-minute grid
inline constexpr int kBinsPerDay = 144;

class ParseError : public std::runtime_error {
 public:
  ParseError(std::size_t line, const std::string& what)
      : std::runtime_error("line " + std::to_string(line) + ": " + what), line_(line) {}
  std::size_t line() const { return line_; }

 private:
  std::size_t line_;
};

class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct CellRecord {
  int cell_id = 0;
  std::int64_t timestamp_ms = 0;
  double activity = 0.0;

  bool operator==(const CellRecord&) const = default;
};

/// Regular 10-minute series for one cell. Units are raw activity until
/// normalize_load() maps them to load percent.
struct LoadSeries {
  int cell_id = 0;
  std::int64_t start_ms = 0;
  int step_s = 600;
  std::vector<double> values;

  bool operator==(const LoadSeries&) const = default;
};

struct CellPair {
  int low_cell = 0;
  int high_cell = 0;
  double e = 1.0;
};

struct PredictionSample {
  int cell_id = 0;
  std::vector<double> history;
  double mean = 0.0;
  double deviation = 0.0;
  int tod_bucket = 0;
  double target = 0.0;
  std::int64_t target_ms = 0;  // timestamp of the predicted bin
};

struct SynthConfig {
  int num_cells = 20;
  int days = 14;
  double base_load = 45.0;
  double diurnal_amplitude = 25.0;
  double weekly_modulation = 0.1;
  double noise_std = 6.0;
  std::uint64_t seed = 1;
  int first_cell_id = 100;
  std::int64_t start_ms = 1383264000000;  // 2013-11-01T00:00Z

  void validate() const;
};

// Reads (cell_id, timestamp_ms, internet_activity) lines, tab or comma
// separated. A first line whose first field is non-numeric is a header.
// Output is sorted by (cell, bin) with same-bin records summed.
std::vector<CellRecord> parse_cdr(std::istream& in);

LoadSeries build_series(const std::vector<CellRecord>& records, int cell);

/// Fraction of grid slots between first and last observation that had no record.
double missing_fraction(const std::vector<CellRecord>& records, int cell);

/// Builds a series for every cell present, dropping cells whose missing
/// fraction exceeds max_missing.
std::vector<LoadSeries> build_all_series(const std::vector<CellRecord>& records,
                                         double max_missing = 0.2);

/// Linear-interpolated percentile (0..100) over the first train_len values.
double calibration_level(const LoadSeries& raw, std::size_t train_len, double percentile = 99.5);

/// 100 * raw / p_cal, clipped to [0, 120]. Throws DataError when p_cal <= 0.
LoadSeries normalize_load(const LoadSeries& raw, double p_cal);

std::vector<PredictionSample> make_samples(const LoadSeries& series, int h = 5,
                                           int stats_window = kBinsPerDay);

std::vector<CellPair> pair_cells(const std::vector<int>& cells, double e = 1.0);

/// Diurnal sinusoid with weekly modulation and Gaussian noise, clipped to [0, 120].
/// Uses mt19937_64 and a hand-rolled Box-Muller transform so output does not
/// depend on the standard library's distribution implementations.
std::vector<LoadSeries> synth_traffic(const SynthConfig& cfg);

/// Same generator with the noise term dropped (still clipped).
std::vector<LoadSeries> synth_traffic_noiseless(const SynthConfig& cfg);

void write_series(std::ostream& out, const std::vector<LoadSeries>& series);
std::vector<LoadSeries> read_series(std::istream& in);

}  // namespace berto
