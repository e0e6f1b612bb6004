#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <sstream>

#include "berto/data.hpp"
#include "doctest.h"

using namespace berto;

namespace {

std::vector<CellRecord> parse(const std::string& text) {
  std::istringstream in(text);
  return parse_cdr(in);
}

LoadSeries series_of(std::vector<double> v, int cell = 1) { return {cell, 0, 600, std::move(v)}; }

}  // namespace

TEST_CASE("parse_cdr maps fields directly") {
  const auto r = parse("42\t1383260400000\t12.5\n");
  REQUIRE(r.size() == 1);
  CHECK(r[0] == CellRecord{42, 1383260400000, 12.5});
}

TEST_CASE("parse_cdr sums records in the same bin and aligns timestamps") {
  const auto r = parse("5,1383260400000,3.0\n5,1383260412345,4.0\n");
  REQUIRE(r.size() == 1);
  CHECK(r[0].timestamp_ms == 1383260400000);
  CHECK(r[0].activity == doctest::Approx(7.0));
}

TEST_CASE("parse_cdr sorts, skips a header and accepts commas") {
  const auto r = parse("cell,time,internet\n2,1200000,1\n1,600000,2\n1,0,3\n");
  REQUIRE(r.size() == 3);
  CHECK(r[0] == CellRecord{1, 0, 3});
  CHECK(r[1] == CellRecord{1, 600000, 2});
  CHECK(r[2] == CellRecord{2, 1200000, 1});
}

TEST_CASE("parse_cdr reports the malformed line") {
  try {
    parse("42\t1383260400000\t1.0\n42\tabc\t1.0\n");
    FAIL("expected a parse error");
  } catch (const ParseError& e) {
    CHECK(e.line() == 2);
    CHECK(std::string(e.what()).find("line 2") != std::string::npos);
  }
  CHECK_THROWS_AS(parse("1\t0\t-1\n"), ParseError);
  CHECK_THROWS_AS(parse("1\t0\n"), ParseError);
}

TEST_CASE("build_series interpolates gaps") {
  const std::vector<CellRecord> recs{{9, 0, 2.0}, {9, 1200000, 6.0}};
  const auto s = build_series(recs, 9);
  CHECK(s.start_ms == 0);
  CHECK(s.step_s == 600);
  REQUIRE(s.values.size() == 3);
  CHECK(s.values[1] == doctest::Approx(4.0));

  const auto one = build_series({{9, 600000, 5.0}}, 9);
  CHECK(one.values == std::vector<double>{5.0});
  CHECK_THROWS_AS(build_series(recs, 8), DataError);
}

TEST_CASE("gap fill keeps every observed bin") {
  std::mt19937_64 rng(3);
  std::vector<CellRecord> recs;
  for (int b = 0; b < 300; ++b)
    if (rng() % 3) recs.push_back({1, b * kBinMs, static_cast<double>(rng() % 1000) / 10.0});
  const auto s = build_series(recs, 1);
  for (const auto& r : recs) CHECK(s.values[static_cast<std::size_t>((r.timestamp_ms - s.start_ms) / kBinMs)] == r.activity);
}

TEST_CASE("missing-bin filter drops sparse cells") {
  std::vector<CellRecord> recs{{1, 0, 1}, {1, 9 * kBinMs, 1}};  // 8 of 10 missing
  for (int b = 0; b < 10; ++b) recs.push_back({2, b * kBinMs, 1});
  CHECK(missing_fraction(recs, 1) == doctest::Approx(0.8));
  const auto all = build_all_series(recs, 0.2);
  REQUIRE(all.size() == 1);
  CHECK(all[0].cell_id == 2);
}

TEST_CASE("normalize_load scales and clips") {
  const auto s = normalize_load(series_of({50, 100, 200, 0}), 100.0);
  CHECK(s.values == std::vector<double>{50.0, 100.0, 120.0, 0.0});
  CHECK_THROWS_AS(normalize_load(series_of({1}), 0.0), DataError);
}

TEST_CASE("normalize_load is monotone") {
  std::vector<double> raw(500);
  std::mt19937_64 rng(11);
  for (auto& v : raw) v = static_cast<double>(rng() % 100000) / 100.0;
  auto sorted = raw;
  std::sort(sorted.begin(), sorted.end());
  const auto out = normalize_load(series_of(sorted), 431.7);
  CHECK(std::is_sorted(out.values.begin(), out.values.end()));
}

TEST_CASE("calibration percentile uses only the training prefix") {
  std::vector<double> v(100);
  std::iota(v.begin(), v.end(), 1.0);  // 1..100
  v.push_back(1e6);
  CHECK(calibration_level(series_of(v), 100, 50.0) == doctest::Approx(50.5));
  CHECK(calibration_level(series_of(v), 100, 100.0) == doctest::Approx(100.0));
  // linear interpolation between order statistics: rank 0.995 * 99 = 98.505
  CHECK(calibration_level(series_of(v), 100, 99.5) == doctest::Approx(99.505));
}

TEST_CASE("make_samples windows and statistics") {
  const auto one = make_samples(series_of({1, 2, 3, 4, 5, 6}), 5, 5);
  REQUIRE(one.size() == 1);
  CHECK(one[0].history == std::vector<double>{1, 2, 3, 4, 5});
  CHECK(one[0].target == 6.0);
  CHECK(one[0].mean == doctest::Approx(3.0));
  CHECK(one[0].deviation == doctest::Approx(std::sqrt(2.0)));
  CHECK(one[0].target_ms == 5 * kBinMs);
  CHECK(one[0].tod_bucket == 5);

  for (const auto& s : make_samples(series_of(std::vector<double>(40, 7.0)), 5, 10)) CHECK(s.deviation == 0.0);
  CHECK(make_samples(series_of({1, 2, 3, 4, 5}), 5, 5).empty());
}

TEST_CASE("make_samples targets partition the tail") {
  std::vector<double> v(400);
  std::mt19937_64 rng(5);
  for (auto& x : v) x = static_cast<double>(rng() % 1000);
  for (auto [h, w] : {std::pair{5, 144}, std::pair{5, 3}, std::pair{8, 8}}) {
    const auto samples = make_samples(series_of(v), h, w);
    const auto start = static_cast<std::size_t>(std::max(h, w));
    REQUIRE(samples.size() == v.size() - start);
    for (std::size_t i = 0; i < samples.size(); ++i) {
      CHECK(samples[i].target == v[start + i]);
      CHECK(samples[i].history.back() == v[start + i - 1]);
    }
  }
}

TEST_CASE("tod bucket follows the wall clock") {
  LoadSeries s{3, 1383264000000 + 30 * kBinMs, 600, std::vector<double>(200, 1.0)};
  const auto samples = make_samples(s, 5, 5);
  for (const auto& smp : samples) CHECK(smp.tod_bucket == static_cast<int>((smp.target_ms / kBinMs) % kBinsPerDay));
}

TEST_CASE("pair_cells pairs adjacent indices") {
  const auto p = pair_cells({10, 11, 12, 13}, 1.0);
  REQUIRE(p.size() == 2);
  CHECK(p[0].low_cell == 10);
  CHECK(p[0].high_cell == 11);
  CHECK(p[1].low_cell == 12);
  CHECK(p[1].high_cell == 13);
  CHECK(pair_cells({}, 1.0).empty());
  CHECK_THROWS_AS(pair_cells({1, 2, 3}, 1.0), DataError);
  CHECK_THROWS(pair_cells({1, 2}, 0.0));
}

TEST_CASE("synth degenerates to a constant") {
  SynthConfig c;
  c.noise_std = 0;
  c.diurnal_amplitude = 0;
  c.num_cells = 3;
  c.days = 2;
  for (const auto& s : synth_traffic(c)) {
    CHECK(s.values.size() == 2u * kBinsPerDay);
    for (double v : s.values) CHECK(v == doctest::Approx(c.base_load));
  }
}

TEST_CASE("synth is deterministic and seed dependent") {
  SynthConfig c;
  CHECK(synth_traffic(c) == synth_traffic(c));
  auto d = c;
  d.seed = 2;
  CHECK(synth_traffic(c) != synth_traffic(d));
}

TEST_CASE("synth noise matches the configured deviation") {
  SynthConfig c;
  c.base_load = 50;
  c.diurnal_amplitude = 20;
  c.noise_std = 5;
  const auto noisy = synth_traffic(c);
  const auto clean = synth_traffic_noiseless(c);
  double sum = 0, sum2 = 0;
  std::size_t n = 0;
  for (std::size_t k = 0; k < noisy.size(); ++k)
    for (std::size_t t = 0; t < noisy[k].values.size(); ++t) {
      const double d = noisy[k].values[t] - clean[k].values[t];
      sum += d;
      sum2 += d * d;
      ++n;
    }
  REQUIRE(n >= 10000);
  const double mean = sum / n;
  const double sd = std::sqrt(sum2 / n - mean * mean);
  CHECK(sd == doctest::Approx(5.0).epsilon(0.1));
}

TEST_CASE("synth values stay within the clip range") {
  SynthConfig c;
  c.noise_std = 40;
  for (const auto& s : synth_traffic(c))
    for (double v : s.values) {
      CHECK(v >= 0.0);
      CHECK(v <= 120.0);
    }
}

TEST_CASE("synth config validation") {
  SynthConfig c;
  c.noise_std = -1;
  CHECK_THROWS(c.validate());
  c = {};
  c.num_cells = -1;
  CHECK_THROWS(c.validate());
}

TEST_CASE("series store round trip") {
  const auto s = synth_traffic(SynthConfig{});
  std::stringstream io;
  write_series(io, s);
  CHECK(read_series(io) == s);
  std::istringstream bad("1,0,600,abc\n");
  CHECK_THROWS(read_series(bad));
}
