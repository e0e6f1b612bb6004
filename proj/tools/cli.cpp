#include "cli.hpp"

#include <filesystem>
#include <fstream>
#include <optional>
#include <sstream>

#include "CLI11.hpp"
#include "berto/checkpoint.hpp"
#include "berto/pipeline.hpp"
#include "berto/service.hpp"

namespace berto {

namespace {

namespace fs = std::filesystem;
using nlohmann::json;

class CliError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct Common {
  std::string config_path;
  std::vector<std::string> overrides;
  std::string series_path;

  RunConfig load() const {
    RunConfig cfg;
    std::map<std::string, std::string> kv;
    if (!config_path.empty()) {
      if (!fs::exists(config_path)) throw CliError("config file not found: " + config_path);
      kv = read_kv_file(config_path);
    }
    for (const auto& o : overrides) {
      const auto eq = o.find('=');
      if (eq == std::string::npos) throw CliError("--set expects key=value, got '" + o + "'");
      kv[o.substr(0, eq)] = o.substr(eq + 1);
    }
    if (!series_path.empty()) {
      kv["data.source"] = "store";
      kv["data.path"] = series_path;
    }
    cfg.apply(kv);
    return cfg;
  }

  bool orientation_explicit() const {
    if (!config_path.empty() && read_kv_file(config_path).count("orientation")) return true;
    for (const auto& o : overrides)
      if (o.rfind("orientation=", 0) == 0) return true;
    return false;
  }
};

void write_text(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw CliError("cannot write " + path.string());
  f << text;
}

ModelWeights load_bert(const std::string& path, const Vocabulary& vocab) {
  if (!fs::exists(path)) throw CliError("checkpoint not found: " + path);
  return model_from_checkpoint(Checkpoint::load(path), vocab);
}

Dataset dataset_for(const RunConfig& cfg, std::ostream& err) {
  auto ds = prepare_dataset(load_series(cfg), cfg);
  err << "data: " << ds.series.size() << " cells, " << ds.pairs.size() << " pairs, " << ds.train.size() << " train / "
      << ds.validation.size() << " validation / " << ds.test.size() << " test samples\n";
  if (ds.train.empty()) throw CliError("no training samples; check the split and data source");
  return ds;
}

ModelConfig model_config(const RunConfig& cfg, const Vocabulary& vocab) {
  auto m = cfg.model;
  m.vocab_size = vocab.size();
  m.validate();
  return m;
}

void log_history(const std::vector<EpochRecord>& h, std::ostream& err) {
  for (const auto& r : h) {
    char buf[160];
    std::snprintf(buf, sizeof buf, "epoch %d lr %.3g train_loss %.4f eval_mse %.4f\n", r.epoch, r.lr, r.train_loss,
                  r.eval_mse);
    err << buf;
  }
}

void save_history(const std::string& path, const std::vector<EpochRecord>& h) {
  if (path.empty()) return;
  std::ostringstream s;
  write_history(s, h);
  write_text(path, s.str());
}

// Orientation comes from the fine-tuned checkpoint unless the run config names one.
Orientation resolve_orientation(const Common& common, const RunConfig& cfg, const Checkpoint& ck) {
  const auto it = ck.meta.find("berto.orientation");
  if (it == ck.meta.end()) return cfg.orientation;
  const auto stored = parse_orientation(it->second);
  if (common.orientation_explicit() && stored != cfg.orientation)
    throw CliError("checkpoint was fine-tuned with orientation '" + it->second + "' but the run config asks for '" +
                   std::string(orientation_name(cfg.orientation)) + "'");
  return stored;
}

struct ScenarioInputs {
  std::string berto_path;
  std::string baseline_path;
};

Scenario load_scenario(const Common& common, const ScenarioInputs& in, std::ostream& err) {
  const auto cfg = common.load();
  const auto vocab = Vocabulary::standard();
  if (!fs::exists(in.berto_path)) throw CliError("checkpoint not found: " + in.berto_path);
  const auto ck = Checkpoint::load(in.berto_path);
  auto berto = model_from_checkpoint(ck, vocab);
  std::optional<ModelWeights> baseline;
  if (!in.baseline_path.empty()) baseline = load_bert(in.baseline_path, vocab);
  const auto orientation = resolve_orientation(common, cfg, ck);
  return Scenario(dataset_for(cfg, err), vocab, std::move(berto), std::move(baseline), cfg.power, orientation);
}

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Preference-conditioned traffic prediction and cell on/off simulation", "berto"};
  app.require_subcommand(1);
  Common common;
  app.add_option("-c,--config", common.config_path, "run config (key = value lines)");
  app.add_option("--set", common.overrides, "override a config key, key=value")->take_all();
  app.add_option("--series", common.series_path, "load-series store to use as the data source");

  // synth
  std::string synth_out;
  auto* synth = app.add_subcommand("synth", "generate synthetic load series");
  synth->add_option("-o,--out", synth_out, "series store to write")->required();

  // ingest
  std::string cdr_path, ingest_out;
  auto* ingest = app.add_subcommand("ingest", "CDR file to a calibrated load-series store");
  ingest->add_option("cdr", cdr_path, "CDR file (cell, timestamp_ms, activity)")->required();
  ingest->add_option("-o,--out", ingest_out, "series store to write")->required();

  // train
  std::string train_model = "bert", train_out, train_loss, train_history;
  std::optional<std::uint64_t> train_seed;
  auto* train_cmd = app.add_subcommand("train", "train BERT_MSE or the FNN baseline");
  train_cmd->add_option("--model", train_model, "bert | fnn")->check(CLI::IsMember({"bert", "fnn"}));
  train_cmd->add_option("--seed", train_seed, "initialization and shuffling seed");
  train_cmd->add_option("--loss", train_loss, "mse | blf:<q> (bert only)");
  train_cmd->add_option("-o,--out", train_out, "checkpoint to write")->required();
  train_cmd->add_option("--history", train_history, "per-epoch CSV to write");

  // finetune
  std::string ft_init, ft_out, ft_history;
  std::optional<std::uint64_t> ft_seed;
  auto* finetune = app.add_subcommand("finetune", "fine-tune BERTO with preference clauses and BLF");
  finetune->add_option("--init", ft_init, "starting checkpoint (usually BERT_MSE); fresh weights if omitted");
  finetune->add_option("--seed", ft_seed, "shuffling and preference-sampling seed");
  finetune->add_option("-o,--out", ft_out, "checkpoint to write")->required();
  finetune->add_option("--history", ft_history, "per-epoch CSV to write");

  // evaluate
  std::string ev_bert, ev_fnn, ev_json;
  auto* evaluate_cmd = app.add_subcommand("evaluate", "test-set MSE of previous-value, FNN and BERT_MSE");
  evaluate_cmd->add_option("--bert", ev_bert, "BERT_MSE checkpoint")->required();
  evaluate_cmd->add_option("--fnn", ev_fnn, "FNN checkpoint")->required();
  evaluate_cmd->add_option("--json", ev_json, "write the table as JSON");

  // simulate
  ScenarioInputs sim_in;
  std::vector<std::string> sim_prefs;
  std::string sim_json;
  bool sim_pairs = false;
  auto* simulate_cmd = app.add_subcommand("simulate", "cell on/off simulation over the test period");
  simulate_cmd->add_option("--berto", sim_in.berto_path, "BERTO checkpoint")->required();
  simulate_cmd->add_option("--baseline", sim_in.baseline_path, "BERT_MSE checkpoint; all-on reference if omitted");
  simulate_cmd->add_option("-p,--preference", sim_prefs, "operator phrase; repeatable; default all five");
  simulate_cmd->add_flag("--per-pair", sim_pairs, "also print per-pair rows");
  simulate_cmd->add_option("--json", sim_json, "write the reports as JSON");

  // serve
  ScenarioInputs serve_in;
  auto* serve_cmd = app.add_subcommand("serve", "JSON service (listen address from BERTO_LISTEN)");
  serve_cmd->add_option("--berto", serve_in.berto_path, "BERTO checkpoint")->required();
  serve_cmd->add_option("--baseline", serve_in.baseline_path, "BERT_MSE checkpoint for savings");

  // report
  std::string report_path;
  auto* report = app.add_subcommand("report", "render a stored evaluate or simulate JSON file");
  report->add_option("input", report_path, "JSON written by evaluate --json or simulate --json")->required();

  try {
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    app.parse(reversed);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return 0;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return 0;
  } catch (const CLI::ParseError& e) {
    err << "berto: " << e.what() << '\n';
    return e.get_exit_code() ? e.get_exit_code() : 2;
  }

  try {
    const auto vocab = Vocabulary::standard();

    if (*synth) {
      const auto cfg = common.load();
      std::ostringstream s;
      write_series(s, synth_traffic(cfg.synth));
      write_text(synth_out, s.str());
      err << "wrote " << cfg.synth.num_cells << " series to " << synth_out << '\n';
    } else if (*ingest) {
      const auto cfg = common.load();
      if (!fs::exists(cdr_path)) throw CliError("CDR file not found: " + cdr_path);
      const auto series = ingest_cdr(cdr_path, cfg, &err);
      std::ostringstream s;
      write_series(s, series);
      write_text(ingest_out, s.str());
      err << "wrote " << series.size() << " series to " << ingest_out << '\n';
    } else if (*train_cmd) {
      auto cfg = common.load();
      if (train_seed) {
        cfg.train.seed = *train_seed;
        cfg.fnn.seed = *train_seed;
        cfg.model_seed = *train_seed;
      }
      const auto ds = dataset_for(cfg, err);
      Checkpoint ck;
      std::vector<EpochRecord> history;
      if (train_model == "fnn") {
        if (!train_loss.empty()) throw CliError("--loss applies to the bert model only");
        auto r = fnn_train(ds.train, cfg.fnn, cfg.fnn_hidden, ds.validation);
        history = r.history;
        ck = to_checkpoint(r.weights);
        ck.meta["train.seed"] = std::to_string(cfg.fnn.seed);
      } else {
        if (!train_loss.empty()) cfg.train.loss = LossSpec::parse(train_loss);
        auto init = init_model(model_config(cfg, vocab), cfg.model_seed);
        auto r = berto::train(std::move(init), ds.train, ds.validation, vocab, cfg.train);
        if (r.diverged) throw CliError("training diverged: " + r.diagnostic);
        history = r.history;
        ck = to_checkpoint(r.weights, vocab);
        ck.meta["train.loss"] = cfg.train.loss.to_string();
        ck.meta["train.seed"] = std::to_string(cfg.train.seed);
      }
      log_history(history, err);
      save_history(train_history, history);
      ck.save(train_out);
      err << "wrote " << train_out << '\n';
    } else if (*finetune) {
      auto cfg = common.load();
      if (ft_seed) cfg.finetune.seed = *ft_seed;
      const auto ds = dataset_for(cfg, err);
      auto init = ft_init.empty() ? init_model(model_config(cfg, vocab), cfg.model_seed) : load_bert(ft_init, vocab);
      FinetuneOptions opts;
      opts.orientation = cfg.orientation;
      auto r = finetune_berto(std::move(init), ds.train, ds.validation, vocab, cfg.finetune, opts);
      if (r.diverged) throw CliError("fine-tuning diverged: " + r.diagnostic);
      log_history(r.history, err);
      save_history(ft_history, r.history);
      auto ck = to_checkpoint(r.weights, vocab);
      ck.meta["berto.orientation"] = orientation_name(opts.orientation);
      ck.meta["train.seed"] = std::to_string(cfg.finetune.seed);
      ck.save(ft_out);
      err << "wrote " << ft_out << '\n';
    } else if (*evaluate_cmd) {
      const auto cfg = common.load();
      const auto ds = dataset_for(cfg, err);
      const auto bert = load_bert(ev_bert, vocab);
      if (!fs::exists(ev_fnn)) throw CliError("checkpoint not found: " + ev_fnn);
      const auto fnn = fnn_from_checkpoint(Checkpoint::load(ev_fnn));
      if (fnn.input_dim() != cfg.history + 2) throw CliError("fnn checkpoint was trained with a different history length");
      const auto rows = score_models({{"previous-value", previous_value_predictor()},
                                      {"fnn", fnn_predictor(fnn)},
                                      {"bert_mse", model_predictor(bert, vocab, std::nullopt)}},
                                     ds.test);
      out << render_score_table(rows);
      if (!ev_json.empty()) write_text(ev_json, json{{"kind", "evaluate"}, {"rows", to_json(rows)}}.dump(2) + "\n");
    } else if (*simulate_cmd) {
      const auto scenario = load_scenario(common, sim_in, err);
      std::vector<Preference> prefs;
      for (const auto& p : sim_prefs) prefs.push_back(parse_preference(p));
      if (prefs.empty()) prefs.assign(kAllPreferences.begin(), kAllPreferences.end());
      std::vector<PreferenceRun> runs;
      for (auto p : prefs) runs.push_back(scenario.run(p, TimeRange{}));
      out << render_tradeoff_table(runs, scenario.orientation(), scenario.baseline_label());
      if (sim_pairs)
        for (const auto& r : runs) out << "\n# " << phrase(r.preference) << '\n' << render_pair_table(r.report);
      if (!sim_json.empty()) {
        auto j = tradeoff_json(runs, scenario.orientation(), scenario.baseline_label());
        j["kind"] = "simulate";
        write_text(sim_json, j.dump(2) + "\n");
      }
    } else if (*serve_cmd) {
      const auto addr = listen_address_from_env();
      const auto scenario = load_scenario(common, serve_in, err);
      Service service(scenario);
      if (service.bind(addr) < 0)
        throw CliError("cannot listen on " + addr.host + ":" + std::to_string(addr.port));
      err << "listening on " << addr.host << ":" << addr.port << '\n';
      service.run();
    } else if (*report) {
      std::ifstream f(report_path);
      if (!f) throw CliError("cannot open " + report_path);
      const auto j = json::parse(f, nullptr, false);
      if (j.is_discarded() || !j.is_object() || !j.contains("kind")) throw CliError(report_path + " is not a stored report");
      if (j["kind"] == "evaluate") {
        std::vector<ModelScore> rows;
        for (const auto& r : j["rows"]) rows.push_back({r["model"], r["mse"], r["mean_signed_error"]});
        out << render_score_table(rows);
      } else if (j["kind"] == "simulate") {
        const auto orientation = parse_orientation(j["orientation"].get<std::string>());
        std::vector<PreferenceRun> runs;
        for (const auto& r : j["runs"]) {
          PreferenceRun run{parse_preference(r["preference"].get<std::string>()), r["q"], {}};
          run.report.total_savings_w = r["total_savings_w"];
          run.report.avg_throughput_loss_pct = r["avg_throughput_loss_pct"];
          run.report.off_decisions = r["off_decisions"];
          runs.push_back(std::move(run));
        }
        out << render_tradeoff_table(runs, orientation, j["baseline"].get<std::string>());
      } else {
        throw CliError("unknown report kind in " + report_path);
      }
    }
  } catch (const std::exception& e) {
    err << "berto: " << e.what() << '\n';
    return 1;
  }
  return 0;
}

}  // namespace berto
