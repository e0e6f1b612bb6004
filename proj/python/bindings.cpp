#include <pybind11/functional.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include "berto/checkpoint.hpp"
#include "berto/pipeline.hpp"

namespace py = pybind11;
using namespace berto;

namespace {

PredictionSample make_sample(int cell_id, int tod_bucket, std::vector<double> history, double mean, double deviation,
                             double target) {
  PredictionSample s;
  s.cell_id = cell_id;
  s.tod_bucket = tod_bucket;
  s.history = std::move(history);
  s.mean = mean;
  s.deviation = deviation;
  s.target = target;
  return s;
}

std::optional<Preference> maybe_pref(const std::optional<std::string>& p) {
  if (!p) return std::nullopt;
  return parse_preference(*p);
}

py::dict report_dict(const SimReport& r) {
  py::dict d;
  d["label"] = r.label;
  d["baseline"] = r.baseline_label;
  d["intervals"] = r.intervals;
  d["total_savings_w"] = r.total_savings_w;
  d["total_throughput_loss"] = r.total_throughput_loss;
  d["avg_throughput_loss_pct"] = r.avg_throughput_loss_pct;
  d["off_decisions"] = r.off_decisions;
  py::list pairs;
  for (const auto& p : r.pairs) {
    py::dict e;
    e["low_cell"] = p.low_cell;
    e["high_cell"] = p.high_cell;
    e["savings_w"] = p.savings_w;
    e["throughput_loss"] = p.throughput_loss;
    e["high_off"] = p.high_off;
    e["power_w"] = p.power_w;
    pairs.append(e);
  }
  d["per_pair"] = pairs;
  return d;
}

// A transformer checkpoint plus the vocabulary it was trained against.
struct Model {
  ModelWeights weights;
  Vocabulary vocab = Vocabulary::standard();
  std::map<std::string, std::string> meta;

  double predict_prompt(const std::string& prompt) const {
    return predict(weights, tokenize(prompt, vocab, weights.config.max_len));
  }
  double predict_sample(const PredictionSample& s, const std::optional<std::string>& pref) const {
    return predict_prompt(render_prompt(s, maybe_pref(pref)));
  }
  void save(const std::filesystem::path& path) const {
    auto ck = to_checkpoint(weights, vocab);
    for (const auto& [k, v] : meta) ck.meta.try_emplace(k, v);
    ck.save(path);
  }
  static Model load(const std::filesystem::path& path) {
    const auto ck = Checkpoint::load(path);
    Model m;
    m.weights = model_from_checkpoint(ck, m.vocab);
    m.meta = ck.meta;
    return m;
  }
};

Dataset dataset_from(const std::filesystem::path& config_path) {
  const auto cfg = RunConfig::load(config_path);
  return prepare_dataset(load_series(cfg), cfg);
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Preference-conditioned traffic prediction and cell on/off simulation";

  py::register_exception<ParseError>(m, "ParseError", PyExc_ValueError);
  py::register_exception<DataError>(m, "DataError", PyExc_ValueError);
  py::register_exception<TokenizeError>(m, "TokenizeError", PyExc_ValueError);
  py::register_exception<CheckpointError>(m, "CheckpointError", PyExc_RuntimeError);
  py::register_exception<SimulationError>(m, "SimulationError", PyExc_ValueError);

  // losses
  m.def("mse", py::overload_cast<double, double>(&mse), py::arg("y"), py::arg("y_hat"));
  m.def("blf", &blf, py::arg("y"), py::arg("y_hat"), py::arg("q"));
  m.def("blf_subgradient", &blf_subgradient, py::arg("y"), py::arg("y_hat"), py::arg("q"));
  m.def("blf_minimizer_quantile", &blf_minimizer_quantile, py::arg("q"));

  // prompting
  m.def("preferences", [] {
    std::vector<std::string> out;
    for (auto p : kAllPreferences) out.emplace_back(phrase(p));
    return out;
  });
  m.def(
      "q_for_preference",
      [](const std::string& p, const std::string& orientation) {
        return q_for_preference(parse_preference(p), parse_orientation(orientation));
      },
      py::arg("preference"), py::arg("orientation") = "table_consistent");

  py::class_<PredictionSample>(m, "PredictionSample")
      .def(py::init(&make_sample), py::arg("cell_id"), py::arg("tod_bucket"), py::arg("history"), py::arg("mean"),
           py::arg("deviation"), py::arg("target") = 0.0)
      .def_readwrite("cell_id", &PredictionSample::cell_id)
      .def_readwrite("tod_bucket", &PredictionSample::tod_bucket)
      .def_readwrite("history", &PredictionSample::history)
      .def_readwrite("mean", &PredictionSample::mean)
      .def_readwrite("deviation", &PredictionSample::deviation)
      .def_readwrite("target", &PredictionSample::target)
      .def_readwrite("target_ms", &PredictionSample::target_ms);

  m.def(
      "render_prompt",
      [](const PredictionSample& s, const std::optional<std::string>& pref) { return render_prompt(s, maybe_pref(pref)); },
      py::arg("sample"), py::arg("preference") = py::none());
  m.def(
      "tokenize",
      [](const std::string& prompt, int length) {
        const auto t = tokenize(prompt, Vocabulary::standard(), length);
        return py::make_tuple(t.ids, std::vector<int>(t.attention_mask.begin(), t.attention_mask.end()), t.mask_index);
      },
      py::arg("prompt"), py::arg("length") = kDefaultSeqLen);
  m.def("vocabulary", [] { return Vocabulary::standard().tokens(); });
  m.def("vocabulary_hash", [] { return hex64(Vocabulary::standard().hash()); });

  // data
  m.def(
      "synth_traffic",
      [](int num_cells, int days, double base_load, double diurnal_amplitude, double weekly_modulation,
         double noise_std, std::uint64_t seed) {
        SynthConfig c;
        c.num_cells = num_cells;
        c.days = days;
        c.base_load = base_load;
        c.diurnal_amplitude = diurnal_amplitude;
        c.weekly_modulation = weekly_modulation;
        c.noise_std = noise_std;
        c.seed = seed;
        std::map<int, std::vector<double>> out;
        for (auto& s : synth_traffic(c)) out[s.cell_id] = std::move(s.values);
        return out;
      },
      py::arg("num_cells") = 20, py::arg("days") = 14, py::arg("base_load") = 45.0,
      py::arg("diurnal_amplitude") = 25.0, py::arg("weekly_modulation") = 0.1, py::arg("noise_std") = 6.0,
      py::arg("seed") = 1);
  m.def(
      "make_samples",
      [](std::vector<double> values, int h, int stats_window) {
        return make_samples(LoadSeries{0, 0, 600, std::move(values)}, h, stats_window);
      },
      py::arg("values"), py::arg("h") = 5, py::arg("stats_window") = kBinsPerDay);

  // baselines
  m.def("previous_value_predict", &previous_value_predict, py::arg("sample"));

  // energy
  m.def(
      "onoff_decide",
      [](double lo, double hi, double e, double L_th) {
        PowerParams p;
        p.e = e;
        p.L_th = L_th;
        return onoff_decide(lo, hi, p).high_cell_off;
      },
      py::arg("predicted_low"), py::arg("predicted_high"), py::arg("e") = 1.0, py::arg("L_th") = 80.0);
  m.def(
      "power",
      [](double lo, double hi, bool off, double A, double B, double e) {
        PowerParams p;
        p.A = A;
        p.B = B;
        p.e = e;
        return power(lo, hi, off, p);
      },
      py::arg("low"), py::arg("high"), py::arg("high_cell_off"), py::arg("A") = 167.0, py::arg("B") = 2.73,
      py::arg("e") = 1.0);
  m.def(
      "throughput_loss",
      [](double lo, double hi, bool off, double e, double L_max) {
        PowerParams p;
        p.e = e;
        p.L_max = L_max;
        return throughput_loss(lo, hi, off, p);
      },
      py::arg("low"), py::arg("high"), py::arg("high_cell_off"), py::arg("e") = 1.0, py::arg("L_max") = 100.0);
  m.def(
      "simulate",
      [](const std::vector<std::pair<std::vector<double>, std::vector<double>>>& predicted,
         const std::vector<std::pair<std::vector<double>, std::vector<double>>>& actual) {
        std::vector<PairTrace> p, a;
        for (std::size_t k = 0; k < predicted.size(); ++k)
          p.push_back({{static_cast<int>(2 * k), static_cast<int>(2 * k + 1), 1.0}, predicted[k].first, predicted[k].second});
        for (std::size_t k = 0; k < actual.size(); ++k)
          a.push_back({{static_cast<int>(2 * k), static_cast<int>(2 * k + 1), 1.0}, actual[k].first, actual[k].second});
        return report_dict(simulate(p, a, PowerParams{}, nullptr, "run"));
      },
      py::arg("predicted"), py::arg("actual"),
      "Per-pair (low, high) load traces; savings are against all cells on.");

  // models
  py::class_<Model>(m, "Model")
      .def_static("load", &Model::load, py::arg("path"))
      .def_static(
          "init",
          [](int layers, int hidden, int heads, int ffn_dim, std::vector<int> head_dims, double output_offset,
             double output_scale, std::uint64_t seed) {
            Model md;
            ModelConfig c;
            c.layers = layers;
            c.hidden = hidden;
            c.heads = heads;
            c.ffn_dim = ffn_dim;
            c.head_dims = std::move(head_dims);
            c.output_offset = output_offset;
            c.output_scale = output_scale;
            c.vocab_size = md.vocab.size();
            c.validate();
            md.weights = init_model(c, seed);
            return md;
          },
          py::arg("layers") = 4, py::arg("hidden") = 256, py::arg("heads") = 4, py::arg("ffn_dim") = 1024,
          py::arg("head_dims") = std::vector<int>{512, 64, 1}, py::arg("output_offset") = 0.0,
          py::arg("output_scale") = 1.0, py::arg("seed") = 1)
      .def("save", &Model::save, py::arg("path"))
      .def("predict_prompt", &Model::predict_prompt, py::arg("prompt"))
      .def("predict", &Model::predict_sample, py::arg("sample"), py::arg("preference") = py::none())
      .def_property_readonly("parameter_count", [](const Model& md) { return md.weights.parameter_count(); })
      .def_property_readonly("metadata", [](const Model& md) { return md.meta; });

  // config-driven runs, same code paths as the command-line tool
  m.def(
      "train_bert",
      [](const std::filesystem::path& config, std::optional<std::uint64_t> seed) {
        auto cfg = RunConfig::load(config);
        if (seed) cfg.train.seed = cfg.model_seed = *seed;
        const auto ds = prepare_dataset(load_series(cfg), cfg);
        Model md;
        auto mc = cfg.model;
        mc.vocab_size = md.vocab.size();
        py::gil_scoped_release release;
        auto r = train(init_model(mc, cfg.model_seed), ds.train, ds.validation, md.vocab, cfg.train);
        if (r.diverged) throw std::runtime_error("training diverged: " + r.diagnostic);
        md.weights = std::move(r.weights);
        md.meta["train.loss"] = cfg.train.loss.to_string();
        md.meta["train.seed"] = std::to_string(cfg.train.seed);
        return md;
      },
      py::arg("config"), py::arg("seed") = py::none());
  m.def(
      "finetune_berto",
      [](const std::filesystem::path& config, const Model& init) {
        const auto cfg = RunConfig::load(config);
        const auto ds = prepare_dataset(load_series(cfg), cfg);
        Model md;
        FinetuneOptions opts;
        opts.orientation = cfg.orientation;
        py::gil_scoped_release release;
        auto r = berto::finetune_berto(init.weights, ds.train, ds.validation, md.vocab, cfg.finetune, opts);
        if (r.diverged) throw std::runtime_error("fine-tuning diverged: " + r.diagnostic);
        md.weights = std::move(r.weights);
        md.meta["berto.orientation"] = orientation_name(opts.orientation);
        return md;
      },
      py::arg("config"), py::arg("init"));
  m.def(
      "evaluate",
      [](const std::filesystem::path& config, const Model& model, const std::optional<std::string>& pref) {
        const auto ds = dataset_from(config);
        const auto e = evaluate(model.weights, model.vocab, ds.test, maybe_pref(pref));
        py::dict d;
        d["mse"] = e.mse;
        d["mean_signed_error"] = e.mean_signed_error;
        return d;
      },
      py::arg("config"), py::arg("model"), py::arg("preference") = py::none());
  m.def(
      "simulate_preferences",
      [](const std::filesystem::path& config, const Model& berto, const std::optional<Model>& baseline) {
        const auto cfg = RunConfig::load(config);
        std::optional<ModelWeights> base;
        if (baseline) base = baseline->weights;
        Orientation o = cfg.orientation;
        if (const auto it = berto.meta.find("berto.orientation"); it != berto.meta.end()) o = parse_orientation(it->second);
        const Scenario s(prepare_dataset(load_series(cfg), cfg), berto.vocab, berto.weights, base, cfg.power, o);
        py::list out;
        for (auto p : kAllPreferences) {
          const auto run = s.run(p, {});
          auto d = report_dict(run.report);
          d["preference"] = std::string(phrase(p));
          d["q"] = run.q;
          out.append(d);
        }
        return out;
      },
      py::arg("config"), py::arg("berto"), py::arg("baseline") = py::none());
}
