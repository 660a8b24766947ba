// recl: run experiments, draw charts, reconstruct from a checkpoint.

#include <cstdio>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "recl/error.hpp"
#include "recl/harness.hpp"
#include "recl/reconstruction.hpp"

namespace {

constexpr int kOk = 0;
constexpr int kFailed = 1;
constexpr int kConfig = 2;

std::string read_text(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw recl::ConfigError("cannot open " + path);
  std::stringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

std::vector<std::uint64_t> parse_seed_list(const std::string& text) {
  std::vector<std::uint64_t> seeds;
  std::stringstream in(text);
  std::string part;
  while (std::getline(in, part, ',')) {
    std::size_t used = 0;
    unsigned long long v = 0;
    try {
      v = std::stoull(part, &used);
    } catch (const std::exception&) {
      used = 0;
    }
    if (used == 0 || used != part.size() || part.front() == '-') {
      throw recl::ConfigError("--seeds: '" + part + "' is not a non-negative integer");
    }
    seeds.push_back(v);
  }
  if (seeds.empty()) throw recl::ConfigError("--seeds must not be empty");
  return seeds;
}

int cmd_run(const std::string& config_path, const std::string& out_dir, const std::string& seeds) {
  recl::ExperimentConfig cfg;
  try {
    cfg = recl::load_config(config_path);
    if (!seeds.empty()) cfg.seeds = parse_seed_list(seeds);
    if (!out_dir.empty()) cfg.out_dir = out_dir;
  } catch (const recl::ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kConfig;
  }

  recl::RunResult result;
  try {
    result = recl::run_experiment(cfg);
  } catch (const recl::ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kConfig;
  } catch (const recl::ParseError& e) {
    std::cerr << "dataset error: " << e.what() << "\n";
    return kConfig;
  }

  for (const auto& s : result.seeds) {
    if (!s.ok) {
      std::cerr << "seed " << s.seed << " failed: " << s.error << "\n";
      continue;
    }
    std::printf("seed %llu  ACC %.2f", static_cast<unsigned long long>(s.seed), 100.0 * s.acc);
    if (s.bwt) std::printf("  BWT %.2f", 100.0 * *s.bwt);
    std::printf("  (%.1fs)\n", s.seconds);
    for (const auto& w : s.warnings) std::cerr << "seed " << s.seed << " warning: " << w << "\n";
  }
  try {
    recl::emit_results(result, cfg.out_dir);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kFailed;
  }
  if (result.failed() < result.seeds.size()) {
    const auto acc = result.acc();
    std::printf("%s%s  ACC %.2f +/- %.2f", cfg.strategy.c_str(), cfg.recl ? "+ReCL" : "", 100.0 * acc.mean,
                100.0 * acc.std);
    if (auto bwt = result.bwt()) std::printf("  BWT %.2f +/- %.2f", 100.0 * bwt->mean, 100.0 * bwt->std);
    std::printf("\nwrote %s\n", cfg.out_dir.c_str());
  }
  return result.failed() ? kFailed : kOk;
}

int cmd_chart(const std::vector<std::string>& summaries, const std::string& out) {
  std::vector<recl::ChartEntry> entries;
  try {
    for (const auto& path : summaries) entries.push_back(recl::chart_entry_from_summary(read_text(path)));
    recl::emit_chart(entries, out);
  } catch (const recl::ConfigError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kConfig;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kFailed;
  }
  return kOk;
}

int cmd_reconstruct(const std::string& model_path, const std::string& config_path, const std::string& out) {
  recl::ExperimentConfig cfg;
  try {
    cfg = recl::load_config(config_path);
    if (cfg.recon.m == 0) throw recl::ConfigError("reconstruct needs an explicit m");
  } catch (const recl::ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kConfig;
  }
  try {
    auto [spec, theta] = recl::load_checkpoint(model_path);
    std::vector<std::size_t> classes(theta.num_classes());
    for (std::size_t c = 0; c < classes.size(); ++c) classes[c] = c;
    recl::ReconResult r = recl::reconstruct(theta, cfg.recon, classes, cfg.seeds.front());
    recl::save_candidates(out, r.candidates);
    const auto& first = r.trajectory.front();
    const auto& last = r.trajectory.back();
    std::printf("L_full %.6g -> %.6g (rec %.6g, lambda %.6g, prior %.6g); %zu candidates written to %s\n",
                first.full, last.full, last.rec, last.lambda, last.prior, r.candidates.size(), out.c_str());
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kFailed;
  }
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Continual learning with data reconstruction from trained models"};
  app.require_subcommand(1);

  std::string config, out, seeds, model;
  std::vector<std::string> summaries;

  auto* run = app.add_subcommand("run", "Run an experiment described by a config file");
  run->add_option("--config", config, "Experiment config")->required();
  run->add_option("--out", out, "Output directory (overrides the config)");
  run->add_option("--seeds", seeds, "Comma-separated seeds (overrides the config)");

  auto* chart = app.add_subcommand("chart", "Draw an ACC bar chart from summary.json files");
  chart->add_option("--summary", summaries, "summary.json (repeatable)")->required();
  chart->add_option("--out", out, "SVG output path")->required();

  auto* rec = app.add_subcommand("reconstruct", "Reconstruct training data from a checkpoint");
  rec->add_option("--model", model, "Checkpoint file")->required();
  rec->add_option("--config", config, "Config supplying the reconstruction settings")->required();
  rec->add_option("--out", out, "Candidate dump path")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kConfig;
  }

  if (run->parsed()) return cmd_run(config, out, seeds);
  if (chart->parsed()) return cmd_chart(summaries, out);
  return cmd_reconstruct(model, config, out);
}
