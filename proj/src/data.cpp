#include "berto/data.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <map>
#include <numbers>
#include <random>
#include <sstream>

namespace berto {

namespace {

std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\r' || s.front() == '\n')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\r' || s.back() == '\n')) s.remove_suffix(1);
  return s;
}

std::vector<std::string_view> split_fields(std::string_view line) {
  const char delim = line.find('\t') != std::string_view::npos ? '\t' : ',';
  std::vector<std::string_view> out;
  std::size_t pos = 0;
  while (true) {
    const auto next = line.find(delim, pos);
    out.push_back(trim(line.substr(pos, next - pos)));
    if (next == std::string_view::npos) break;
    pos = next + 1;
  }
  return out;
}

template <typename T>
bool parse_number(std::string_view s, T& value) {
  if (s.empty()) return false;
  if (s.front() == '+') s.remove_prefix(1);
  const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), value);
  return ec == std::errc() && ptr == s.data() + s.size();
}

std::int64_t align_bin(std::int64_t ts) {
  std::int64_t q = ts / kBinMs;
  if (ts % kBinMs != 0 && ts < 0) --q;
  return q * kBinMs;
}

double uniform01(std::mt19937_64& rng) {
  return static_cast<double>(rng() >> 11) * 0x1.0p-53;
}

double standard_normal(std::mt19937_64& rng) {
  const double u1 = 1.0 - uniform01(rng);  // (0, 1]
  const double u2 = uniform01(rng);
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

std::vector<LoadSeries> synth_impl(const SynthConfig& cfg, bool with_noise) {
  cfg.validate();
  const std::size_t n = static_cast<std::size_t>(cfg.days) * kBinsPerDay;
  std::mt19937_64 phase_rng(splitmix64(cfg.seed));
  std::mt19937_64 noise_rng(cfg.seed);
  std::vector<LoadSeries> out;
  out.reserve(cfg.num_cells);
  const double two_pi = 2.0 * std::numbers::pi;
  for (int c = 0; c < cfg.num_cells; ++c) {
    const double phase = (uniform01(phase_rng) - 0.5) * std::numbers::pi / 2.0;
    LoadSeries s;
    s.cell_id = cfg.first_cell_id + c;
    s.start_ms = cfg.start_ms;
    s.values.resize(n);
    for (std::size_t t = 0; t < n; ++t) {
      const double td = static_cast<double>(t);
      const double weekly = 1.0 + cfg.weekly_modulation * std::sin(two_pi * td / (7.0 * kBinsPerDay));
      double v = cfg.base_load +
                 cfg.diurnal_amplitude * std::sin(two_pi * td / kBinsPerDay + phase) * weekly;
      // Noise is always drawn so both paths consume the generator identically.
      const double z = standard_normal(noise_rng);
      if (with_noise) v += cfg.noise_std * z;
      s.values[t] = std::clamp(v, 0.0, 120.0);
    }
    out.push_back(std::move(s));
  }
  return out;
}

}  // namespace

void SynthConfig::validate() const {
  if (num_cells < 0 || days < 0) throw DataError("synth: negative size");
  if (base_load < 0 || diurnal_amplitude < 0 || weekly_modulation < 0 || noise_std < 0)
    throw DataError("synth: amplitudes must be non-negative");
}

std::vector<CellRecord> parse_cdr(std::istream& in) {
  std::map<std::pair<int, std::int64_t>, double> bins;
  std::string line;
  std::size_t lineno = 0;
  bool first = true;
  while (std::getline(in, line)) {
    ++lineno;
    const auto view = trim(line);
    if (view.empty()) continue;
    const auto fields = split_fields(view);
    long long cell = 0;
    if (first) {
      first = false;
      double probe = 0;
      if (!parse_number(fields[0], probe)) continue;  // header
    }
    if (fields.size() != 3) throw ParseError(lineno, "expected 3 fields, got " + std::to_string(fields.size()));
    std::int64_t ts = 0;
    double activity = 0;
    if (!parse_number(fields[0], cell)) throw ParseError(lineno, "bad cell id '" + std::string(fields[0]) + "'");
    if (!parse_number(fields[1], ts)) throw ParseError(lineno, "bad timestamp '" + std::string(fields[1]) + "'");
    if (!parse_number(fields[2], activity) || !std::isfinite(activity))
      throw ParseError(lineno, "bad activity '" + std::string(fields[2]) + "'");
    if (activity < 0) throw ParseError(lineno, "negative activity");
    bins[{static_cast<int>(cell), align_bin(ts)}] += activity;
  }
  std::vector<CellRecord> out;
  out.reserve(bins.size());
  for (const auto& [key, v] : bins) out.push_back({key.first, key.second, v});
  return out;
}

LoadSeries build_series(const std::vector<CellRecord>& records, int cell) {
  std::map<std::int64_t, double> obs;
  for (const auto& r : records)
    if (r.cell_id == cell) obs[align_bin(r.timestamp_ms)] += r.activity;
  if (obs.empty()) throw DataError("no records for cell " + std::to_string(cell));

  LoadSeries s;
  s.cell_id = cell;
  s.start_ms = obs.begin()->first;
  const auto n = static_cast<std::size_t>((obs.rbegin()->first - s.start_ms) / kBinMs) + 1;
  s.values.assign(n, 0.0);
  auto prev = obs.begin();
  s.values[0] = prev->second;
  for (auto it = std::next(obs.begin()); it != obs.end(); ++it) {
    const auto i0 = static_cast<std::size_t>((prev->first - s.start_ms) / kBinMs);
    const auto i1 = static_cast<std::size_t>((it->first - s.start_ms) / kBinMs);
    for (std::size_t i = i0 + 1; i < i1; ++i) {
      const double w = static_cast<double>(i - i0) / static_cast<double>(i1 - i0);
      s.values[i] = (1.0 - w) * prev->second + w * it->second;
    }
    s.values[i1] = it->second;
    prev = it;
  }
  return s;
}

double missing_fraction(const std::vector<CellRecord>& records, int cell) {
  std::vector<std::int64_t> bins;
  for (const auto& r : records)
    if (r.cell_id == cell) bins.push_back(align_bin(r.timestamp_ms));
  if (bins.empty()) return 1.0;
  std::sort(bins.begin(), bins.end());
  bins.erase(std::unique(bins.begin(), bins.end()), bins.end());
  const double span = static_cast<double>((bins.back() - bins.front()) / kBinMs + 1);
  return 1.0 - static_cast<double>(bins.size()) / span;
}

std::vector<LoadSeries> build_all_series(const std::vector<CellRecord>& records, double max_missing) {
  std::vector<int> cells;
  for (const auto& r : records) cells.push_back(r.cell_id);
  std::sort(cells.begin(), cells.end());
  cells.erase(std::unique(cells.begin(), cells.end()), cells.end());
  std::vector<LoadSeries> out;
  for (int c : cells) {
    if (missing_fraction(records, c) > max_missing) continue;
    out.push_back(build_series(records, c));
  }
  return out;
}

double calibration_level(const LoadSeries& raw, std::size_t train_len, double percentile) {
  const std::size_t n = std::min(train_len, raw.values.size());
  if (n == 0) throw DataError("calibration: empty training period");
  std::vector<double> v(raw.values.begin(), raw.values.begin() + static_cast<std::ptrdiff_t>(n));
  std::sort(v.begin(), v.end());
  const double pos = std::clamp(percentile, 0.0, 100.0) / 100.0 * static_cast<double>(n - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const auto hi = std::min(lo + 1, n - 1);
  const double w = pos - static_cast<double>(lo);
  return v[lo] * (1.0 - w) + v[hi] * w;
}

LoadSeries normalize_load(const LoadSeries& raw, double p_cal) {
  if (!(p_cal > 0.0))
    throw DataError("degenerate cell " + std::to_string(raw.cell_id) + ": calibration level is zero");
  LoadSeries out = raw;
  for (auto& v : out.values) v = std::clamp(100.0 * v / p_cal, 0.0, 120.0);
  return out;
}

std::vector<PredictionSample> make_samples(const LoadSeries& series, int h, int stats_window) {
  std::vector<PredictionSample> out;
  if (h < 1 || stats_window < 1) throw DataError("make_samples: window lengths must be positive");
  const auto& v = series.values;
  const auto first = static_cast<std::size_t>(std::max(h, stats_window));
  if (v.size() <= first) return out;
  const std::int64_t step_ms = static_cast<std::int64_t>(series.step_s) * 1000;
  const std::int64_t first_bin = series.start_ms / kBinMs;
  out.reserve(v.size() - first);
  for (std::size_t t = first; t < v.size(); ++t) {
    PredictionSample s;
    s.cell_id = series.cell_id;
    s.history.assign(v.begin() + static_cast<std::ptrdiff_t>(t - h), v.begin() + static_cast<std::ptrdiff_t>(t));
    double sum = 0.0;
    for (std::size_t i = t - stats_window; i < t; ++i) sum += v[i];
    s.mean = sum / stats_window;
    double ss = 0.0;
    for (std::size_t i = t - stats_window; i < t; ++i) ss += (v[i] - s.mean) * (v[i] - s.mean);
    s.deviation = std::sqrt(ss / stats_window);
    const std::int64_t bin = first_bin + static_cast<std::int64_t>(t);
    s.tod_bucket = static_cast<int>(((bin % kBinsPerDay) + kBinsPerDay) % kBinsPerDay);
    s.target = v[t];
    s.target_ms = series.start_ms + static_cast<std::int64_t>(t) * step_ms;
    out.push_back(std::move(s));
  }
  return out;
}

std::vector<CellPair> pair_cells(const std::vector<int>& cells, double e) {
  if (cells.size() % 2 != 0) throw DataError("pair_cells: odd number of cells (" + std::to_string(cells.size()) + ")");
  if (!(e > 0)) throw DataError("pair_cells: spectral efficiency ratio must be positive");
  std::vector<CellPair> out;
  for (std::size_t i = 0; i < cells.size(); i += 2) {
    if (cells[i] == cells[i + 1]) throw DataError("pair_cells: duplicate cell " + std::to_string(cells[i]));
    out.push_back({cells[i], cells[i + 1], e});
  }
  return out;
}

std::vector<LoadSeries> synth_traffic(const SynthConfig& cfg) { return synth_impl(cfg, true); }

std::vector<LoadSeries> synth_traffic_noiseless(const SynthConfig& cfg) { return synth_impl(cfg, false); }

void write_series(std::ostream& out, const std::vector<LoadSeries>& series) {
  out.precision(17);
  for (const auto& s : series) {
    out << s.cell_id << ',' << s.start_ms << ',' << s.step_s;
    for (double v : s.values) out << ',' << v;
    out << '\n';
  }
}

std::vector<LoadSeries> read_series(std::istream& in) {
  std::vector<LoadSeries> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto view = trim(line);
    if (view.empty()) continue;
    std::vector<std::string_view> f;
    std::size_t pos = 0;
    while (true) {
      const auto next = view.find(',', pos);
      f.push_back(view.substr(pos, next - pos));
      if (next == std::string_view::npos) break;
      pos = next + 1;
    }
    if (f.size() < 4) throw ParseError(lineno, "series line needs cell_id,start_ms,step_s and at least one value");
    LoadSeries s;
    if (!parse_number(f[0], s.cell_id) || !parse_number(f[1], s.start_ms) || !parse_number(f[2], s.step_s))
      throw ParseError(lineno, "bad series header fields");
    for (std::size_t i = 3; i < f.size(); ++i) {
      double v = 0;
      if (!parse_number(f[i], v)) throw ParseError(lineno, "bad value '" + std::string(f[i]) + "'");
      s.values.push_back(v);
    }
    out.push_back(std::move(s));
  }
  return out;
}

}  // namespace berto
