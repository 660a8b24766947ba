#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "recl/data.hpp"
#include "recl/metrics.hpp"
#include "recl/model.hpp"
#include "recl/reconstruction.hpp"
#include "recl/strategies.hpp"
#include "recl/tuning.hpp"

namespace recl {

enum class TuningMode { kNaive, kUnsupervised, kSupervised };

const char* tuning_name(TuningMode t);

/// Parameters of the built-in Gaussian blob dataset (dataset = blobs).
struct BlobSettings {
  std::size_t classes = 6;
  std::size_t dim = 20;
  double separation = 3.0;
  std::size_t test_per_class = 100;

  friend bool operator==(const BlobSettings&, const BlobSettings&) = default;
};

/// One experiment. Field names match the config keys.
struct ExperimentConfig {
  std::string dataset;
  Scenario scenario = Scenario::kClassIncremental;
  std::size_t n_tasks = 3;
  std::size_t n_per_class = 100;
  std::size_t classes_per_task = 0;  // 0: every class, split evenly
  std::vector<std::size_t> hidden{100, 100};
  double first_layer_scale = 1e-4;

  std::string strategy;
  bool recl = false;
  TuningMode tuning = TuningMode::kNaive;
  std::size_t n_trials = 10;
  std::size_t reference_k = 10;

  TrainConfig train;
  ReconHyperparams recon;  // recon.m == 0 means "sum of previous task sizes"
  StrategyParams strategy_params;

  std::vector<std::uint64_t> seeds{0};
  std::string out_dir = "results";
  std::string manifest;  // empty: the built-in default location
  BlobSettings blobs;

  friend bool operator==(const ExperimentConfig&, const ExperimentConfig&) = default;
};

/// Flat `key = value` lines. '#' and ';' start comments; `[section]` lines
/// are accepted and ignored. Errors carry the line number.
ExperimentConfig parse_config(const std::string& text);
ExperimentConfig load_config(const std::filesystem::path& path);
std::string serialize_config(const ExperimentConfig& cfg);

/// 16 hex digits of FNV-1a over the canonical text, excluding seeds and paths.
std::string config_fingerprint(const ExperimentConfig& cfg);

struct TaskTiming {
  double reconstruction_seconds = 0.0;
  double tuning_seconds = 0.0;
  double training_seconds = 0.0;
};

struct SeedResult {
  std::uint64_t seed = 0;
  bool ok = false;
  std::string error;
  AccuracyMatrix matrix;
  double acc = 0.0;
  std::optional<double> bwt;  // undefined for a single task
  double seconds = 0.0;
  std::vector<TaskTiming> timings;
  std::vector<std::vector<double>> train_losses;  // per task, per epoch
  std::vector<std::vector<double>> recon_losses;  // per task, L_full per step
  std::vector<std::string> tuning_log;            // CSV rows, see tuning_log_header()
  std::vector<std::string> warnings;
};

struct Aggregate {
  double mean = 0.0;
  double std = 0.0;  // sample standard deviation, 0 for a single value
  std::size_t count = 0;
};

struct RunResult {
  ExperimentConfig config;
  std::string fingerprint;
  std::vector<SeedResult> seeds;
  double seconds = 0.0;

  std::size_t failed() const;
  Aggregate acc() const;
  std::optional<Aggregate> bwt() const;
};

Aggregate aggregate(const std::vector<double>& values);

/// Either the manifest dataset named cfg.dataset or the built-in blobs.
TrainTestPair load_dataset(const ExperimentConfig& cfg);
std::filesystem::path default_manifest_path();

SeedResult run_seed(const ExperimentConfig& cfg, const TrainTestPair& data, std::uint64_t seed);
RunResult run_experiment(const ExperimentConfig& cfg);

std::string tuning_log_header();

/// results.csv, summary.json, runtime.csv, losses.csv and tuning_log.csv under `dir`.
void emit_results(const RunResult& result, const std::filesystem::path& dir);
std::string results_csv(const RunResult& result);
std::string summary_json(const RunResult& result);

/// One results.csv row.
struct ResultRow {
  std::string config_fingerprint;
  std::string strategy;
  bool recl = false;
  std::string tuning;
  std::uint64_t seed = 0;
  std::size_t T = 0;
  std::size_t tau = 0;
  double acc = 0.0;

  friend bool operator==(const ResultRow&, const ResultRow&) = default;
};

std::vector<ResultRow> parse_results_csv(const std::string& text);
/// Accuracy matrix per seed, in the order seeds first appear.
std::vector<std::pair<std::uint64_t, AccuracyMatrix>> matrices_from_rows(const std::vector<ResultRow>& rows);

/// What the chart needs from one summary.json.
struct ChartEntry {
  std::string method;  // strategy name
  std::string series;  // "vanilla" or "+ReCL" (tuning appended when not naive)
  double acc_mean = 0.0;
  double acc_std = 0.0;
};

ChartEntry chart_entry_from_summary(const std::string& json_text);
/// Grouped bar chart of ACC (percentage points) with std error bars.
std::string render_chart(const std::vector<ChartEntry>& entries);
void emit_chart(const std::vector<ChartEntry>& entries, const std::filesystem::path& path);

}  // namespace recl
