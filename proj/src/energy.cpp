#include "berto/energy.hpp"

#include <algorithm>

namespace berto {

void PowerParams::validate() const {
  if (!(A > 0) || !(B > 0)) throw std::invalid_argument("power params: A and B must be positive");
  if (!(e > 0)) throw std::invalid_argument("power params: e must be positive");
  if (!(L_th > 0) || L_th > L_max) throw std::invalid_argument("power params: need 0 < L_th <= L_max");
}

OnOffDecision onoff_decide(double predicted_low, double predicted_high, const PowerParams& p) {
  const double l1 = std::max(0.0, predicted_low);
  const double l2 = std::max(0.0, predicted_high);
  OnOffDecision d;
  d.high_cell_off = l1 + p.e * l2 <= p.L_th;
  return d;
}

double power(double low, double high, bool high_cell_off, const PowerParams& p) {
  return high_cell_off ? p.A + p.B * (low + p.e * high) : 2.0 * p.A + p.B * (low + high);
}

double throughput_loss(double low, double high, bool high_cell_off, const PowerParams& p) {
  if (!high_cell_off) return 0.0;
  const double carried = low + p.e * high;
  return carried <= p.L_max ? 0.0 : carried - p.L_max;
}

SimReport simulate(std::span<const PairTrace> predicted, std::span<const PairTrace> actual, const PowerParams& p,
                   const SimReport* baseline, std::string label) {
  p.validate();
  if (predicted.size() != actual.size()) throw SimulationError("simulate: predicted and actual pair counts differ");
  SimReport r;
  r.label = std::move(label);
  r.baseline_label = baseline ? baseline->label : "all-on";
  r.intervals = actual.empty() ? 0 : actual[0].low.size();
  if (baseline && baseline->pairs.size() != actual.size())
    throw SimulationError("simulate: baseline covers a different set of pairs");

  double offered = 0.0;
  for (std::size_t k = 0; k < actual.size(); ++k) {
    const auto& a = actual[k];
    const auto& f = predicted[k];
    if (a.pair.low_cell != f.pair.low_cell || a.pair.high_cell != f.pair.high_cell)
      throw SimulationError("simulate: pair order differs between predicted and actual");
    const std::size_t n = a.low.size();
    if (a.high.size() != n || f.low.size() != n || f.high.size() != n || n != r.intervals)
      throw SimulationError("simulate: traces are not aligned in time");
    if (baseline && baseline->pairs[k].power_w.size() != n)
      throw SimulationError("simulate: baseline trace length differs");
    PairMetrics m;
    m.low_cell = a.pair.low_cell;
    m.high_cell = a.pair.high_cell;
    m.power_w.resize(n);
    m.high_off.resize(n);
    PowerParams pp = p;
    pp.e = a.pair.e;
    double saved = 0.0;
    for (std::size_t t = 0; t < n; ++t) {
      const bool off = onoff_decide(f.low[t], f.high[t], pp).high_cell_off;
      m.high_off[t] = off;
      m.off_intervals += off;
      m.power_w[t] = power(a.low[t], a.high[t], off, pp);
      m.throughput_loss += throughput_loss(a.low[t], a.high[t], off, pp);
      m.offered_load += a.low[t] + pp.e * a.high[t];
      const double ref = baseline ? baseline->pairs[k].power_w[t] : power(a.low[t], a.high[t], false, pp);
      saved += ref - m.power_w[t];
    }
    m.savings_w = n ? saved / static_cast<double>(n) : 0.0;
    r.savings_sum_w += saved;
    r.total_savings_w += m.savings_w;
    r.total_throughput_loss += m.throughput_loss;
    r.off_decisions += m.off_intervals;
    offered += m.offered_load;
    r.pairs.push_back(std::move(m));
  }
  r.avg_throughput_loss_pct = offered > 0 ? 100.0 * r.total_throughput_loss / offered : 0.0;
  return r;
}

}  // namespace berto
