#include "berto/pipeline.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <sstream>

namespace berto {

namespace {

std::string trim(const std::string& s) {
  const auto a = s.find_first_not_of(" \t\r\n");
  if (a == std::string::npos) return "";
  const auto b = s.find_last_not_of(" \t\r\n");
  return s.substr(a, b - a + 1);
}

std::vector<int> parse_int_list(const std::string& s) {
  std::vector<int> out;
  std::istringstream in(s);
  std::string item;
  while (std::getline(in, item, ',')) out.push_back(std::stoi(trim(item)));
  return out;
}

std::string line(const char* fmt, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, fmt, args...);
  return buf;
}

}  // namespace

std::map<std::string, std::string> read_kv_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open config " + path.string());
  std::map<std::string, std::string> kv;
  std::string raw;
  int lineno = 0;
  while (std::getline(in, raw)) {
    ++lineno;
    const auto hash = raw.find('#');
    const std::string l = trim(hash == std::string::npos ? raw : raw.substr(0, hash));
    if (l.empty()) continue;
    const auto eq = l.find('=');
    if (eq == std::string::npos)
      throw std::runtime_error(path.string() + ":" + std::to_string(lineno) + ": expected key = value");
    kv[trim(l.substr(0, eq))] = trim(l.substr(eq + 1));
  }
  return kv;
}

RunConfig::RunConfig() {
  model = ModelConfig::bert_mini(Vocabulary::standard().size());
  model.output_offset = 50.0;
  model.output_scale = 25.0;
  fnn.base_lr = 1e-2;
  fnn.batch_size = 128;
  fnn.epochs = 30;
  fnn.weight_decay = 0.0;
}

void RunConfig::apply(const std::map<std::string, std::string>& kv) {
  std::map<std::string, std::string> train_kv, finetune_kv, fnn_kv;
  for (const auto& [k, v] : kv) {
    auto starts = [&](const char* p) { return k.rfind(p, 0) == 0; };
    if (starts("train.")) train_kv[k.substr(6)] = v;
    else if (starts("finetune.")) finetune_kv[k.substr(9)] = v;
    else if (starts("fnn.") && k != "fnn.hidden") fnn_kv[k.substr(4)] = v;
    else if (k == "fnn.hidden") fnn_hidden = std::stoi(v);
    else if (k == "data.source") data_source = v;
    else if (k == "data.path") data_path = v;
    else if (k == "synth.num_cells") synth.num_cells = std::stoi(v);
    else if (k == "synth.days") synth.days = std::stoi(v);
    else if (k == "synth.base_load") synth.base_load = std::stod(v);
    else if (k == "synth.diurnal_amplitude") synth.diurnal_amplitude = std::stod(v);
    else if (k == "synth.weekly_modulation") synth.weekly_modulation = std::stod(v);
    else if (k == "synth.noise_std") synth.noise_std = std::stod(v);
    else if (k == "synth.seed") synth.seed = std::stoull(v);
    else if (k == "synth.first_cell_id") synth.first_cell_id = std::stoi(v);
    else if (k == "split.train_days") train_days = std::stoi(v);
    else if (k == "split.test_days") test_days = std::stoi(v);
    else if (k == "split.val_days") val_days = std::stoi(v);
    else if (k == "samples.history") history = std::stoi(v);
    else if (k == "samples.stats_window") stats_window = std::stoi(v);
    else if (k == "ingest.calibration_percentile") calibration_percentile = std::stod(v);
    else if (k == "ingest.max_missing") max_missing = std::stod(v);
    else if (k == "model.layers") model.layers = std::stoi(v);
    else if (k == "model.hidden") model.hidden = std::stoi(v);
    else if (k == "model.heads") model.heads = std::stoi(v);
    else if (k == "model.ffn_dim") model.ffn_dim = std::stoi(v);
    else if (k == "model.max_len") model.max_len = std::stoi(v);
    else if (k == "model.head_dims") model.head_dims = parse_int_list(v);
    else if (k == "model.output_offset") model.output_offset = std::stod(v);
    else if (k == "model.output_scale") model.output_scale = std::stod(v);
    else if (k == "model.seed") model_seed = std::stoull(v);
    else if (k == "power.A") power.A = std::stod(v);
    else if (k == "power.B") power.B = std::stod(v);
    else if (k == "power.e") power.e = std::stod(v);
    else if (k == "power.L_th") power.L_th = std::stod(v);
    else if (k == "power.L_max") power.L_max = std::stod(v);
    else if (k == "orientation") orientation = parse_orientation(v);
    else if (k == "output_dir") output_dir = v;
    else throw std::invalid_argument("run config: unknown key '" + k + "'");
  }
  train.apply(train_kv);
  finetune.apply(finetune_kv);
  fnn.apply(fnn_kv);
  model.validate();
  power.validate();
  synth.validate();
  if (train_days < 1 || test_days < 0 || val_days < 0 || val_days >= train_days)
    throw std::invalid_argument("run config: need train_days >= 1, 0 <= val_days < train_days");
}

RunConfig RunConfig::load(const std::filesystem::path& path) {
  RunConfig c;
  c.apply(read_kv_file(path));
  return c;
}

std::vector<LoadSeries> ingest_cdr(const std::filesystem::path& path, const RunConfig& cfg, std::ostream* log) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open CDR file " + path.string());
  const auto records = parse_cdr(in);
  const auto raw = build_all_series(records, cfg.max_missing);
  const std::size_t train_len = static_cast<std::size_t>(cfg.train_days) * kBinsPerDay;
  std::vector<LoadSeries> out;
  for (const auto& s : raw) {
    try {
      out.push_back(normalize_load(s, calibration_level(s, train_len, cfg.calibration_percentile)));
    } catch (const DataError& e) {
      if (log) *log << "excluded: " << e.what() << '\n';
    }
  }
  return out;
}

std::vector<LoadSeries> load_series(const RunConfig& cfg) {
  if (cfg.data_source == "synth") return synth_traffic(cfg.synth);
  if (cfg.data_source == "store") {
    std::ifstream in(cfg.data_path);
    if (!in) throw DataError("cannot open series store " + cfg.data_path);
    return read_series(in);
  }
  if (cfg.data_source == "cdr") return ingest_cdr(cfg.data_path, cfg);
  throw std::invalid_argument("unknown data.source '" + cfg.data_source + "'");
}

Dataset prepare_dataset(std::vector<LoadSeries> series, const RunConfig& cfg) {
  Dataset ds;
  std::sort(series.begin(), series.end(), [](const auto& a, const auto& b) { return a.cell_id < b.cell_id; });
  const auto train_end = static_cast<std::size_t>(cfg.train_days - cfg.val_days) * kBinsPerDay;
  const auto val_end = static_cast<std::size_t>(cfg.train_days) * kBinsPerDay;
  const auto test_end = val_end + static_cast<std::size_t>(cfg.test_days) * kBinsPerDay;
  std::vector<int> cells;
  for (const auto& s : series) {
    cells.push_back(s.cell_id);
    const std::int64_t step_ms = static_cast<std::int64_t>(s.step_s) * 1000;
    for (auto& smp : make_samples(s, cfg.history, cfg.stats_window)) {
      const auto t = static_cast<std::size_t>((smp.target_ms - s.start_ms) / step_ms);
      if (t < train_end) ds.train.push_back(std::move(smp));
      else if (t < val_end) ds.validation.push_back(std::move(smp));
      else if (t < test_end) ds.test.push_back(std::move(smp));
    }
  }
  ds.pairs = pair_cells(cells, cfg.power.e);
  ds.series = std::move(series);
  return ds;
}

Predictor model_predictor(const ModelWeights& w, const Vocabulary& vocab, std::optional<Preference> pref) {
  return [&w, &vocab, pref](const PredictionSample& s) {
    return predict(w, tokenize(render_prompt(s, pref), vocab, w.config.max_len));
  };
}

Predictor fnn_predictor(const FnnWeights& w) {
  return [&w](const PredictionSample& s) { return fnn_predict(w, s); };
}

Predictor previous_value_predictor() {
  return [](const PredictionSample& s) { return previous_value_predict(s); };
}

std::vector<double> predict_all(std::span<const PredictionSample> samples, const Predictor& predictor) {
  std::vector<double> out;
  out.reserve(samples.size());
  for (const auto& s : samples) out.push_back(predictor(s));
  return out;
}

PairTraces build_pair_traces(const Dataset& ds, std::span<const double> predictions, const TimeRange& range) {
  if (predictions.size() != ds.test.size()) throw SimulationError("traces: prediction count differs from test set");
  std::map<int, std::map<std::int64_t, std::pair<double, double>>> by_cell;
  for (std::size_t i = 0; i < ds.test.size(); ++i) {
    const auto& s = ds.test[i];
    if (range.contains(s.target_ms)) by_cell[s.cell_id][s.target_ms] = {predictions[i], s.target};
  }
  PairTraces out;
  bool first = true;
  for (const auto& pair : ds.pairs) {
    const auto& lo = by_cell[pair.low_cell];
    const auto& hi = by_cell[pair.high_cell];
    if (first) {
      for (const auto& [t, v] : lo) out.times.push_back(t);
      first = false;
    }
    PairTrace p{pair, {}, {}}, a{pair, {}, {}};
    for (auto t : out.times) {
      const auto l = lo.find(t);
      const auto h = hi.find(t);
      if (l == lo.end() || h == hi.end())
        throw SimulationError("traces: cells " + std::to_string(pair.low_cell) + "/" + std::to_string(pair.high_cell) +
                              " are missing interval " + std::to_string(t));
      p.low.push_back(l->second.first);
      p.high.push_back(h->second.first);
      a.low.push_back(l->second.second);
      a.high.push_back(h->second.second);
    }
    if (lo.size() != out.times.size() || hi.size() != out.times.size())
      throw SimulationError("traces: pair intervals are not aligned");
    out.predicted.push_back(std::move(p));
    out.actual.push_back(std::move(a));
  }
  return out;
}

std::vector<ModelScore> score_models(const std::vector<std::pair<std::string, Predictor>>& models,
                                     std::span<const PredictionSample> samples) {
  std::vector<ModelScore> rows;
  for (const auto& [name, pred] : models) {
    const auto preds = predict_all(samples, pred);
    const auto e = evaluate_predictions(preds, samples);
    rows.push_back({name, e.mse, e.mean_signed_error});
  }
  std::stable_sort(rows.begin(), rows.end(), [](const auto& a, const auto& b) { return a.mse < b.mse; });
  return rows;
}

std::string render_score_table(const std::vector<ModelScore>& rows) {
  std::string out = line("%-16s %12s %16s\n", "model", "mse", "mean_signed_err");
  for (const auto& r : rows) out += line("%-16s %12.4f %16.4f\n", r.name.c_str(), r.mse, r.mean_signed_error);
  return out;
}

nlohmann::json to_json(const SimReport& r, bool include_traces) {
  nlohmann::json j;
  j["label"] = r.label;
  j["baseline"] = r.baseline_label;
  j["intervals"] = r.intervals;
  j["total_savings_w"] = r.total_savings_w;
  j["savings_sum_w"] = r.savings_sum_w;
  j["total_throughput_loss"] = r.total_throughput_loss;
  j["avg_throughput_loss_pct"] = r.avg_throughput_loss_pct;
  j["off_decisions"] = r.off_decisions;
  j["per_pair"] = nlohmann::json::array();
  for (const auto& p : r.pairs) {
    nlohmann::json jp{{"low_cell", p.low_cell},
                      {"high_cell", p.high_cell},
                      {"savings_w", p.savings_w},
                      {"throughput_loss", p.throughput_loss},
                      {"offered_load", p.offered_load},
                      {"off_intervals", p.off_intervals}};
    if (include_traces) {
      jp["power_w"] = p.power_w;
      jp["high_off"] = p.high_off;
    }
    j["per_pair"].push_back(std::move(jp));
  }
  return j;
}

nlohmann::json to_json(const std::vector<ModelScore>& rows) {
  nlohmann::json j = nlohmann::json::array();
  for (const auto& r : rows) j.push_back({{"model", r.name}, {"mse", r.mse}, {"mean_signed_error", r.mean_signed_error}});
  return j;
}

std::string render_tradeoff_table(const std::vector<PreferenceRun>& runs, Orientation orientation,
                                  const std::string& baseline_label) {
  std::string out = "# orientation: " + std::string(orientation_name(orientation)) + "\n# q mapping:";
  for (auto p : kAllPreferences) out += line(" \"%s\"=%g", std::string(phrase(p)).c_str(), q_for_preference(p, orientation));
  out += "\n# savings: watts averaged per 10-minute interval, summed over pairs, vs baseline '" + baseline_label + "'\n";
  out += line("%-34s %6s %18s %16s %8s\n", "preference", "q", "total_savings_w", "avg_tput_loss_%", "offs");
  for (const auto& r : runs)
    out += line("%-34s %6g %18.3f %16.4f %8zu\n", ("\"" + std::string(phrase(r.preference)) + "\"").c_str(), r.q,
                r.report.total_savings_w, r.report.avg_throughput_loss_pct, r.report.off_decisions);
  return out;
}

std::string render_pair_table(const SimReport& r) {
  std::string out = line("%-10s %-10s %14s %18s %8s\n", "low_cell", "high_cell", "savings_w", "throughput_loss", "offs");
  for (const auto& p : r.pairs)
    out += line("%-10d %-10d %14.3f %18.3f %8zu\n", p.low_cell, p.high_cell, p.savings_w, p.throughput_loss,
                p.off_intervals);
  out += line("%-21s %14.3f %18.3f %8zu\n", "total", r.total_savings_w, r.total_throughput_loss, r.off_decisions);
  return out;
}

nlohmann::json tradeoff_json(const std::vector<PreferenceRun>& runs, Orientation orientation,
                             const std::string& baseline_label) {
  nlohmann::json j;
  j["orientation"] = orientation_name(orientation);
  j["baseline"] = baseline_label;
  j["q_mapping"] = nlohmann::json::object();
  for (auto p : kAllPreferences) j["q_mapping"][std::string(phrase(p))] = q_for_preference(p, orientation);
  j["runs"] = nlohmann::json::array();
  for (const auto& r : runs) {
    auto jr = to_json(r.report);
    jr["preference"] = phrase(r.preference);
    jr["q"] = r.q;
    j["runs"].push_back(std::move(jr));
  }
  return j;
}

Scenario::Scenario(Dataset ds, Vocabulary vocab, ModelWeights berto, std::optional<ModelWeights> baseline,
                   PowerParams power, Orientation orientation)
    : ds_(std::move(ds)),
      vocab_(std::move(vocab)),
      berto_(std::move(berto)),
      baseline_(std::move(baseline)),
      power_(power),
      orientation_(orientation) {
  power_.validate();
  for (const auto* part : {&ds_.train, &ds_.validation, &ds_.test})
    all_samples_.insert(all_samples_.end(), part->begin(), part->end());
  for (std::size_t i = 0; i < all_samples_.size(); ++i)
    sample_index_[{all_samples_[i].cell_id, all_samples_[i].target_ms}] = i;
}

std::string Scenario::baseline_label() const { return baseline_ ? "bert_mse" : "all-on"; }

Scenario::PointPrediction Scenario::predict_point(int cell_id, std::int64_t window_end_ms, Preference pref) const {
  const auto it = sample_index_.find({cell_id, window_end_ms + kBinMs});
  if (it == sample_index_.end())
    throw std::out_of_range("no prediction window for cell " + std::to_string(cell_id) + " ending at " +
                            std::to_string(window_end_ms));
  const auto& s = all_samples_[it->second];
  const double y = predict(berto_, tokenize(render_prompt(s, pref), vocab_, berto_.config.max_len));
  return {y, q_for_preference(pref, orientation_), s.target_ms, s.target};
}

const std::vector<double>& Scenario::cached(std::optional<Preference> pref, bool baseline_model) const {
  const int key = baseline_model ? -1 : static_cast<int>(*pref);
  std::lock_guard lock(mu_);
  auto it = cache_.find(key);
  if (it == cache_.end()) {
    const auto& w = baseline_model ? *baseline_ : berto_;
    it = cache_.emplace(key, predict_all(ds_.test, model_predictor(w, vocab_, pref))).first;
  }
  return it->second;
}

SimReport Scenario::baseline_report(const TimeRange& range) const {
  const auto tr = build_pair_traces(ds_, cached(std::nullopt, true), range);
  return berto::simulate(tr.predicted, tr.actual, power_, nullptr, "bert_mse");
}

PairTraces Scenario::traces(Preference pref, const TimeRange& range) const {
  return build_pair_traces(ds_, cached(pref, false), range);
}

SimReport Scenario::simulate(Preference pref, const TimeRange& range) const {
  const auto tr = traces(pref, range);
  if (baseline_) {
    const auto base = baseline_report(range);
    return berto::simulate(tr.predicted, tr.actual, power_, &base, std::string(phrase(pref)));
  }
  return berto::simulate(tr.predicted, tr.actual, power_, nullptr, std::string(phrase(pref)));
}

PreferenceRun Scenario::run(Preference pref, const TimeRange& range) const {
  return {pref, q_for_preference(pref, orientation_), simulate(pref, range)};
}

}  // namespace berto
