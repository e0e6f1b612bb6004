#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "berto/data.hpp"

namespace berto {

struct PowerParams {
  double A = 167.0;  // fixed per-cell power, W
  double B = 2.73;   // W per load unit
  double e = 1.0;    // spectral efficiency ratio
  double L_th = 80.0;
  double L_max = 100.0;

  void validate() const;
};

struct OnOffDecision {
  std::size_t pair = 0;
  std::size_t time_index = 0;
  bool high_cell_off = false;
};

/// Off iff predicted_low + e * predicted_high <= L_th. Negative predictions are clipped to 0.
OnOffDecision onoff_decide(double predicted_low, double predicted_high, const PowerParams& p);

/// 2A + B(L1 + L2) with both cells on, A + B(L1 + e L2) with the high cell off.
double power(double low, double high, bool high_cell_off, const PowerParams& p);

/// Load above L_max carried by the remaining cell; zero when both cells are on.
double throughput_loss(double low, double high, bool high_cell_off, const PowerParams& p);

struct PairTrace {
  CellPair pair;
  std::vector<double> low;
  std::vector<double> high;
};

class SimulationError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct PairMetrics {
  int low_cell = 0;
  int high_cell = 0;
  double savings_w = 0.0;        // mean per interval vs baseline
  double throughput_loss = 0.0;  // summed load units
  double offered_load = 0.0;     // summed L1 + e L2
  std::size_t off_intervals = 0;
  std::vector<double> power_w;   // per interval
  std::vector<std::uint8_t> high_off;
};

/// Savings are reported as watts averaged per interval (summed over pairs);
/// savings_sum_w keeps the raw sum over all pair-intervals.
struct SimReport {
  std::string label;
  std::string baseline_label;
  std::size_t intervals = 0;
  std::vector<PairMetrics> pairs;
  double total_savings_w = 0.0;
  double savings_sum_w = 0.0;
  double total_throughput_loss = 0.0;
  double avg_throughput_loss_pct = 0.0;
  std::size_t off_decisions = 0;
};

/// Decisions come from predicted loads; power and throughput loss from actual
/// loads. Without a baseline the reference is every cell on.
SimReport simulate(std::span<const PairTrace> predicted, std::span<const PairTrace> actual, const PowerParams& p,
                   const SimReport* baseline = nullptr, std::string label = "run");

}  // namespace berto
