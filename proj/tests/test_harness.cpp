#include <doctest.h>

#include <cstdlib>
#include <sys/wait.h>

#include <json.hpp>

#include "recl/error.hpp"
#include "recl/harness.hpp"
#include "support/oracles.hpp"
#include "support/tempdir.hpp"

using namespace recl;

namespace {

const char* kBlobConfig = R"(# small blob stream
dataset = blobs
scenario = CIL
strategy = finetune
n_tasks = 3
n_per_class = 20
hidden = 16
first_layer_scale = 0.1
epochs = 3
lr = 0.05
blob_classes = 6
blob_dim = 5
blob_test_per_class = 10
seeds = 0,1
)";

int run_cli(const std::string& args) {
  const std::string cmd = std::string(RECL_BINARY) + " " + args + " >/dev/null 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

std::string config_error(const std::string& text) {
  try {
    parse_config(text);
  } catch (const ConfigError& e) {
    return e.what();
  }
  return "";
}

}  // namespace

TEST_CASE("config defaults and required keys") {
  auto cfg = parse_config("dataset = splitmnist\nscenario = CIL\nstrategy = ewc\n");
  CHECK(cfg.train.batch_size == 64);
  CHECK(cfg.recon.n_rec == 1000);
  CHECK(cfg.recon.m == 0);
  CHECK(cfg.n_tasks == 3);
  CHECK_FALSE(cfg.recl);
  CHECK(cfg.tuning == TuningMode::kNaive);
  CHECK(config_error("dataset = blobs\nscenario = CIL\n").find("strategy") != std::string::npos);
}

TEST_CASE("config errors") {
  CHECK(config_error("dataset = blobs\nscenario = CIL\nstrategy = gpm\n").find("unsupported strategy") !=
        std::string::npos);
  const std::string unknown = config_error("dataset = blobs\n\nscenario = CIL\nlearning_rate = 0.1\nstrategy = er\n");
  CHECK(unknown.find("line 4") != std::string::npos);
  CHECK(unknown.find("learning_rate") != std::string::npos);
  CHECK(config_error("dataset = blobs\nscenario = CIL\nstrategy = er\nlr = 0.1\nlr = 0.2\n").find("line 5") !=
        std::string::npos);
  CHECK(config_error("dataset = blobs\nscenario = CIL\nstrategy = er\nepochs = many\n").find("line 4") !=
        std::string::npos);
  CHECK(config_error("dataset = blobs\nscenario = XIL\nstrategy = er\n").find("line 2") != std::string::npos);
  CHECK(config_error("dataset = blobs\nscenario = CIL\nstrategy = er\njust some words\n").find("line 4") !=
        std::string::npos);
  CHECK(config_error("dataset = blobs\nscenario = CIL\nstrategy = er\nblob_classes = 11\nblob_dim = 5\n") != "");
}

TEST_CASE("config comments, sections and round-trip") {
  auto cfg = parse_config(
      "[experiment]\n; comment\ndataset = blobs  # trailing\nscenario = DIL\nstrategy = lwf\nrecl = on\n"
      "tuning = supervised\nm = 40\nseeds = 3, 4\nhidden = 8,6\nclasses_per_task = 2\n");
  CHECK(cfg.scenario == Scenario::kDomainIncremental);
  CHECK(cfg.recl);
  CHECK(cfg.tuning == TuningMode::kSupervised);
  CHECK(cfg.recon.m == 40);
  CHECK(cfg.seeds == std::vector<std::uint64_t>{3, 4});
  CHECK(cfg.hidden == std::vector<std::size_t>{8, 6});
  CHECK(parse_config(serialize_config(cfg)) == cfg);
  auto base = parse_config(kBlobConfig);
  CHECK(parse_config(serialize_config(base)) == base);
}

TEST_CASE("fingerprint ignores seeds and output paths only") {
  auto a = parse_config(kBlobConfig);
  auto b = a;
  b.seeds = {9};
  b.out_dir = "elsewhere";
  b.manifest = "/tmp/m";
  CHECK(config_fingerprint(a) == config_fingerprint(b));
  CHECK(config_fingerprint(a).size() == 16);
  b.train.lr = 0.06;
  CHECK(config_fingerprint(a) != config_fingerprint(b));
}

TEST_CASE("aggregate uses the sample standard deviation") {
  auto agg = aggregate({1.0, 2.0, 3.0, 4.0});
  CHECK(agg.mean == doctest::Approx(2.5));
  CHECK(agg.std == doctest::Approx(std::sqrt(5.0 / 3.0)));
  CHECK(aggregate({7.0}).std == 0.0);
}

TEST_CASE("blob experiment writes consistent results") {
  auto cfg = parse_config(kBlobConfig);
  testutil::TempDir dir;
  RunResult r = run_experiment(cfg);
  REQUIRE(r.failed() == 0);
  emit_results(r, dir.path());
  for (const char* f : {"results.csv", "summary.json", "runtime.csv", "losses.csv"}) {
    CHECK_MESSAGE(std::filesystem::exists(dir / f), f);
  }
  CHECK_FALSE(std::filesystem::exists(dir / "tuning_log.csv"));

  const std::string csv = testutil::read_file(dir / "results.csv");
  CHECK(csv.rfind("config_fingerprint,strategy,recl,tuning,seed,T,tau,acc\n", 0) == 0);
  auto rows = parse_results_csv(csv);
  CHECK(rows.size() == 12);  // 2 seeds x (1 + 2 + 3)
  CHECK(results_csv(r) == csv);

  // Round trip: the rows rebuild each seed's matrix exactly.
  auto mats = matrices_from_rows(rows);
  REQUIRE(mats.size() == 2);
  for (std::size_t s = 0; s < 2; ++s) {
    CHECK(mats[s].first == r.seeds[s].seed);
    CHECK(mats[s].second.entries() == r.seeds[s].matrix.entries());
    CHECK(compute_acc(mats[s].second, 3) == r.seeds[s].acc);
  }

  auto j = nlohmann::json::parse(testutil::read_file(dir / "summary.json"));
  CHECK(j["config_fingerprint"] == r.fingerprint);
  CHECK(j["acc"]["mean"].get<double>() == doctest::Approx(100.0 * r.acc().mean));
  CHECK(j["bwt"]["std"].get<double>() == doctest::Approx(100.0 * r.bwt()->std));
  CHECK(j.contains("runtime"));

  // Same config and seed give the same summary apart from timings.
  RunResult again = run_experiment(cfg);
  auto j2 = nlohmann::json::parse(summary_json(again));
  j.erase("runtime");
  j2.erase("runtime");
  CHECK(j == j2);
}

TEST_CASE("results.csv parser rejects malformed input") {
  CHECK_THROWS_AS(parse_results_csv("wrong,header\n"), ParseError);
  CHECK_THROWS_AS(parse_results_csv("config_fingerprint,strategy,recl,tuning,seed,T,tau,acc\nabc,ft,0,naive,1,1,1\n"),
                  ParseError);
  CHECK_THROWS_AS(
      parse_results_csv("config_fingerprint,strategy,recl,tuning,seed,T,tau,acc\nabc,ft,0,naive,x,1,1,0.5\n"),
      ParseError);
}

TEST_CASE("ReCL with unsupervised tuning writes a tuning log") {
  auto cfg = parse_config(std::string(kBlobConfig) +
                          "recl = on\ntuning = unsupervised\nn_trials = 2\nn_rec = 5\nm = 10\n");
  cfg.seeds = {0};
  cfg.n_tasks = 2;
  cfg.blobs.classes = 4;
  testutil::TempDir dir;
  RunResult r = run_experiment(cfg);
  REQUIRE(r.failed() == 0);
  CHECK(r.seeds[0].tuning_log.size() == 2);  // one task with reconstruction, two trials
  emit_results(r, dir.path());
  const std::string log = testutil::read_file(dir / "tuning_log.csv");
  CHECK(log.rfind(tuning_log_header(), 0) == 0);
}

TEST_CASE("chart rendering") {
  std::vector<ChartEntry> entries{{"finetune", "vanilla", 40.5, 3.2},
                                  {"finetune", "+ReCL", 55.0, 6.1},
                                  {"ewc & co", "vanilla", 20.0, 0.0}};
  const std::string svg = render_chart(entries);
  std::string why;
  CHECK_MESSAGE(oracle::xml_well_formed(svg, &why), why);
  CHECK(svg.find("ewc &amp; co") != std::string::npos);
  std::size_t bars = 0;
  for (auto p = svg.find("class=\"bar\""); p != std::string::npos; p = svg.find("class=\"bar\"", p + 1)) ++bars;
  CHECK(bars == 3);
  CHECK_THROWS_AS(render_chart({}), ContractError);

  auto cfg = parse_config(kBlobConfig);
  cfg.seeds = {0};
  cfg.n_tasks = 2;
  cfg.blobs.classes = 4;
  RunResult r = run_experiment(cfg);
  ChartEntry e = chart_entry_from_summary(summary_json(r));
  CHECK(e.method == "finetune");
  CHECK(e.series == "vanilla");
  CHECK(e.acc_mean == doctest::Approx(100.0 * r.acc().mean));
  CHECK_THROWS(chart_entry_from_summary("{}"));
}

TEST_CASE("command line exit codes") {
  testutil::TempDir dir;
  testutil::write_file(dir / "ok.ini", kBlobConfig);
  testutil::write_file(dir / "bad.ini", std::string(kBlobConfig) + "colour = blue\n");
  testutil::write_file(dir / "gpm.ini", "dataset = blobs\nscenario = CIL\nstrategy = gpm\n");
  const std::string out = (dir / "out").string();
  CHECK(run_cli("run --config " + (dir / "ok.ini").string() + " --out " + out + " --seeds 0") == 0);
  CHECK(std::filesystem::exists(dir / "out" / "summary.json"));
  CHECK(run_cli("run --config " + (dir / "bad.ini").string()) == 2);
  CHECK(run_cli("run --config " + (dir / "gpm.ini").string()) == 2);
  CHECK(run_cli("run --config " + (dir / "missing.ini").string()) == 2);
  CHECK(run_cli("run --config " + (dir / "ok.ini").string() + " --seeds x") == 2);
  CHECK(run_cli("frobnicate") == 2);

  const std::string svg = (dir / "c.svg").string();
  CHECK(run_cli("chart --summary " + out + "/summary.json --out " + svg) == 0);
  CHECK(oracle::xml_well_formed(testutil::read_file(svg)));
}

TEST_CASE("reconstruct subcommand writes a candidate dump") {
  testutil::TempDir dir;
  MlpSpec spec{{5, 8, 3}, 1.0};
  save_checkpoint(dir / "m.ckpt", spec, init_mlp(spec, 1));
  testutil::write_file(dir / "r.ini", std::string(kBlobConfig) + "m = 6\nn_rec = 10\n");
  testutil::write_file(dir / "nom.ini", kBlobConfig);
  const std::string dump = (dir / "c.bin").string();
  CHECK(run_cli("reconstruct --model " + (dir / "m.ckpt").string() + " --config " + (dir / "r.ini").string() +
                " --out " + dump) == 0);
  CandidateSet c = load_candidates(dump);
  CHECK(c.size() == 6);
  CHECK(c.xs.cols() == 5);
  CHECK(c.lambdas.cols() == 2);
  CHECK(run_cli("reconstruct --model " + (dir / "m.ckpt").string() + " --config " + (dir / "nom.ini").string() +
                " --out " + dump) == 2);
  CHECK(run_cli("reconstruct --model " + (dir / "none.ckpt").string() + " --config " + (dir / "r.ini").string() +
                " --out " + dump) == 1);
}
