#include <unistd.h>

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "berto/checkpoint.hpp"
#include "cli.hpp"
#include "doctest.h"
#include "json.hpp"

namespace fs = std::filesystem;
using berto::run_cli;

namespace {

const std::string kConfig = std::string(BERTO_SOURCE_DIR) + "/configs/smoke.cfg";

struct Run {
  int code;
  std::string out, err;
};

Run cli(std::vector<std::string> args) {
  std::ostringstream out, err;
  const int code = run_cli(args, out, err);
  return {code, out.str(), err.str()};
}

std::string slurp(const fs::path& p) {
  std::ifstream f(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(f), {}};
}

int lines(const std::string& s) { return static_cast<int>(std::count(s.begin(), s.end(), '\n')); }

struct TempDir {
  fs::path path;
  TempDir() : path(fs::temp_directory_path() / ("berto_cli_" + std::to_string(::getpid()))) { fs::create_directories(path); }
  ~TempDir() { fs::remove_all(path); }
  std::string operator/(const std::string& name) const { return (path / name).string(); }
};

}  // namespace

TEST_CASE("end to end on the smoke config") {
  TempDir dir;
  const auto bert = dir / "bert.ckpt", bert2 = dir / "bert2.ckpt", fnn = dir / "fnn.ckpt", berto = dir / "berto.ckpt";

  REQUIRE(cli({"-c", kConfig, "train", "--seed", "7", "-o", bert}).code == 0);
  REQUIRE(cli({"-c", kConfig, "train", "--seed", "7", "-o", bert2}).code == 0);
  CHECK(slurp(bert) == slurp(bert2));
  REQUIRE(cli({"-c", kConfig, "train", "--seed", "8", "-o", bert2}).code == 0);
  CHECK(slurp(bert) != slurp(bert2));

  REQUIRE(cli({"-c", kConfig, "train", "--model", "fnn", "-o", fnn}).code == 0);
  const auto ft = cli({"-c", kConfig, "finetune", "--init", bert, "-o", berto, "--history", dir / "ft.csv"});
  REQUIRE(ft.code == 0);
  CHECK(slurp(dir / "ft.csv").rfind("epoch,lr,train_loss,eval_mse\n", 0) == 0);

  SUBCASE("evaluate prints three rows sorted by mse") {
    const auto r = cli({"-c", kConfig, "evaluate", "--bert", bert, "--fnn", fnn, "--json", dir / "ev.json"});
    REQUIRE(r.code == 0);
    CHECK(lines(r.out) == 4);
    const auto j = nlohmann::json::parse(slurp(dir / "ev.json"));
    REQUIRE(j["rows"].size() == 3);
    CHECK(j["rows"][0]["mse"].get<double>() <= j["rows"][1]["mse"].get<double>());
    CHECK(j["rows"][1]["mse"].get<double>() <= j["rows"][2]["mse"].get<double>());
    const auto rep = cli({"report", dir / "ev.json"});
    CHECK(rep.code == 0);
    CHECK(rep.out == r.out);
  }

  SUBCASE("simulate one preference") {
    const auto r = cli({"-c", kConfig, "simulate", "--berto", berto, "--preference", "Focus highly on power savings"});
    REQUIRE(r.code == 0);
    CHECK(r.out.find("# orientation: table_consistent") != std::string::npos);
    CHECK(r.out.find("\"No specific focus\"=1") != std::string::npos);
    const auto row = r.out.substr(r.out.rfind("\"Focus highly on power savings\""));
    CHECK(row.find(" 0.1 ") != std::string::npos);
    CHECK(lines(row) == 1);
  }

  SUBCASE("simulate all five and re-render") {
    const auto r =
        cli({"-c", kConfig, "simulate", "--berto", berto, "--baseline", bert, "--json", dir / "sim.json"});
    REQUIRE(r.code == 0);
    const auto j = nlohmann::json::parse(slurp(dir / "sim.json"));
    CHECK(j["runs"].size() == 5);
    CHECK(j["baseline"] == "bert_mse");
    CHECK(cli({"report", dir / "sim.json"}).out == r.out);
  }

  SUBCASE("orientation conflict with the checkpoint") {
    const auto r = cli({"-c", kConfig, "--set", "orientation=direct", "simulate", "--berto", berto});
    CHECK(r.code != 0);
    CHECK(r.err.find("orientation") != std::string::npos);
  }

  SUBCASE("vocabulary hash mismatch") {
    auto ck = berto::Checkpoint::load(bert);
    ck.meta["vocab_hash"] = "0000000000000000";
    ck.save(dir / "bad.ckpt");
    const auto r = cli({"-c", kConfig, "evaluate", "--bert", dir / "bad.ckpt", "--fnn", fnn});
    CHECK(r.code != 0);
    CHECK(r.err.find("vocabulary hash mismatch") != std::string::npos);
    CHECK(lines(r.err) == 2);  // data summary, then the diagnostic
  }
}

TEST_CASE("ingest a CDR file and train from the store") {
  TempDir dir;
  {
    std::ofstream f(dir / "cdr.tsv");
    f << "cell\ttime\tinternet\n";
    for (int cell : {1, 2})
      for (int b = 0; b < 5 * 144; ++b)
        if (b % 17 != 3) f << cell << '\t' << 1383264000000LL + b * 600000LL << '\t' << 20 + 10 * ((b / 6) % 5) + cell << '\n';
  }
  const auto r = cli({"-c", kConfig, "ingest", dir / "cdr.tsv", "-o", dir / "series.csv"});
  REQUIRE(r.code == 0);
  CHECK(lines(slurp(dir / "series.csv")) == 2);
  CHECK(cli({"-c", kConfig, "--series", dir / "series.csv", "train", "--model", "fnn", "-o", dir / "f.ckpt"}).code == 0);
  CHECK(cli({"-c", kConfig, "synth", "-o", dir / "synth.csv"}).code == 0);
  CHECK(lines(slurp(dir / "synth.csv")) == 4);
}

TEST_CASE("errors exit nonzero with one line") {
  auto r = cli({"train", "--bogus", "-o", "x"});
  CHECK(r.code != 0);
  CHECK(lines(r.err) == 1);
  r = cli({"-c", "/nonexistent.cfg", "synth", "-o", "x"});
  CHECK(r.code != 0);
  CHECK(lines(r.err) == 1);
  CHECK(r.err.find("config") != std::string::npos);
  r = cli({"-c", kConfig, "serve", "--berto", "/nonexistent.ckpt"});
  CHECK(r.code != 0);
  CHECK(r.err.find("checkpoint not found") != std::string::npos);
  r = cli({"-c", kConfig, "simulate", "--berto", "/nonexistent.ckpt", "-p", "Save power"});
  CHECK(r.code != 0);
  r = cli({"--set", "model.colour=red", "synth", "-o", "x"});
  CHECK(r.code != 0);
  CHECK(lines(r.err) == 1);
  r = cli({});
  CHECK(r.code != 0);
  CHECK(cli({"--help"}).code == 0);
}
