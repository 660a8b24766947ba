#include "recl/harness.hpp"

#include <algorithm>
#include <charconv>
#include <chrono>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <functional>
#include <iomanip>
#include <map>
#include <numeric>
#include <set>
#include <sstream>

#include <json.hpp>

#include "recl/error.hpp"
#include "recl/rng.hpp"
#include "textfmt.hpp"

#ifndef RECL_DEFAULT_MANIFEST
#define RECL_DEFAULT_MANIFEST "data/datasets.manifest"
#endif

namespace recl {

namespace {

using json = nlohmann::ordered_json;

// ---- value parsing --------------------------------------------------------

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

std::vector<std::string> split(const std::string& s, char sep) {
  std::vector<std::string> out;
  std::string cur;
  std::istringstream in(s);
  while (std::getline(in, cur, sep)) out.push_back(trim(cur));
  if (!s.empty() && s.back() == sep) out.emplace_back();
  return out;
}

std::uint64_t to_u64(const std::string& v) {
  std::uint64_t out = 0;
  const char* end = v.data() + v.size();
  auto res = std::from_chars(v.data(), end, out);
  if (v.empty() || res.ec != std::errc() || res.ptr != end) throw ConfigError("'" + v + "' is not a non-negative integer");
  return out;
}

std::size_t to_count(const std::string& v, std::size_t min) {
  const auto n = static_cast<std::size_t>(to_u64(v));
  if (n < min) throw ConfigError("value " + v + " is below the minimum " + std::to_string(min));
  return n;
}

double to_real(const std::string& v) {
  double out = 0.0;
  if (!textfmt::parse_number(v, out) || !std::isfinite(out)) throw ConfigError("'" + v + "' is not a finite number");
  return out;
}

double to_positive(const std::string& v) {
  const double x = to_real(v);
  if (!(x > 0.0)) throw ConfigError("value " + v + " must be positive");
  return x;
}

double to_nonnegative(const std::string& v) {
  const double x = to_real(v);
  if (x < 0.0) throw ConfigError("value " + v + " must not be negative");
  return x;
}

bool to_switch(const std::string& v) {
  if (v == "on" || v == "true" || v == "1" || v == "yes") return true;
  if (v == "off" || v == "false" || v == "0" || v == "no") return false;
  throw ConfigError("'" + v + "' is not on/off");
}

TuningMode to_tuning(const std::string& v) {
  if (v == "naive") return TuningMode::kNaive;
  if (v == "unsupervised") return TuningMode::kUnsupervised;
  if (v == "supervised") return TuningMode::kSupervised;
  throw ConfigError("unsupported tuning strategy '" + v + "' (expected naive, unsupervised or supervised)");
}

template <typename T>
std::string join(const std::vector<T>& xs) {
  std::string out;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    if (i) out += ',';
    out += std::to_string(xs[i]);
  }
  return out;
}

std::string num(double v) { return textfmt::number(v); }

// ---- key table ------------------------------------------------------------

struct KeySpec {
  const char* name;
  std::function<void(ExperimentConfig&, const std::string&)> set;
  std::function<std::string(const ExperimentConfig&)> get;
  bool in_fingerprint = true;
};

const std::vector<KeySpec>& key_table() {
  static const std::vector<KeySpec> table = {
      {"dataset", [](ExperimentConfig& c, const std::string& v) {
         if (v.empty()) throw ConfigError("dataset name is empty");
         c.dataset = v;
       }, [](const ExperimentConfig& c) { return c.dataset; }},
      {"scenario", [](ExperimentConfig& c, const std::string& v) { c.scenario = parse_scenario(v); },
       [](const ExperimentConfig& c) { return std::string(scenario_name(c.scenario)); }},
      {"n_tasks", [](ExperimentConfig& c, const std::string& v) { c.n_tasks = to_count(v, 1); },
       [](const ExperimentConfig& c) { return std::to_string(c.n_tasks); }},
      {"n_per_class", [](ExperimentConfig& c, const std::string& v) { c.n_per_class = to_count(v, 1); },
       [](const ExperimentConfig& c) { return std::to_string(c.n_per_class); }},
      {"classes_per_task",
       [](ExperimentConfig& c, const std::string& v) { c.classes_per_task = v == "all" ? 0 : to_count(v, 1); },
       [](const ExperimentConfig& c) {
         return c.classes_per_task == 0 ? std::string("all") : std::to_string(c.classes_per_task);
       }},
      {"hidden", [](ExperimentConfig& c, const std::string& v) {
         std::vector<std::size_t> h;
         for (const auto& part : split(v, ',')) h.push_back(to_count(part, 1));
         if (h.empty()) throw ConfigError("hidden needs at least one layer width");
         c.hidden = h;
       }, [](const ExperimentConfig& c) { return join(c.hidden); }},
      {"first_layer_scale", [](ExperimentConfig& c, const std::string& v) { c.first_layer_scale = to_positive(v); },
       [](const ExperimentConfig& c) { return num(c.first_layer_scale); }},
      {"strategy", [](ExperimentConfig& c, const std::string& v) {
         if (!is_supported_strategy(v)) throw ConfigError("unsupported strategy '" + v + "'");
         c.strategy = v;
       }, [](const ExperimentConfig& c) { return c.strategy; }},
      {"recl", [](ExperimentConfig& c, const std::string& v) { c.recl = to_switch(v); },
       [](const ExperimentConfig& c) { return std::string(c.recl ? "on" : "off"); }},
      {"tuning", [](ExperimentConfig& c, const std::string& v) { c.tuning = to_tuning(v); },
       [](const ExperimentConfig& c) { return std::string(tuning_name(c.tuning)); }},
      {"n_trials", [](ExperimentConfig& c, const std::string& v) { c.n_trials = to_count(v, 1); },
       [](const ExperimentConfig& c) { return std::to_string(c.n_trials); }},
      {"reference_k", [](ExperimentConfig& c, const std::string& v) { c.reference_k = to_count(v, 1); },
       [](const ExperimentConfig& c) { return std::to_string(c.reference_k); }},
      {"lr", [](ExperimentConfig& c, const std::string& v) { c.train.lr = to_positive(v); },
       [](const ExperimentConfig& c) { return num(c.train.lr); }},
      {"epochs", [](ExperimentConfig& c, const std::string& v) { c.train.epochs = to_count(v, 1); },
       [](const ExperimentConfig& c) { return std::to_string(c.train.epochs); }},
      {"batch", [](ExperimentConfig& c, const std::string& v) { c.train.batch_size = to_count(v, 1); },
       [](const ExperimentConfig& c) { return std::to_string(c.train.batch_size); }},
      {"n_rec", [](ExperimentConfig& c, const std::string& v) { c.recon.n_rec = to_count(v, 0); },
       [](const ExperimentConfig& c) { return std::to_string(c.recon.n_rec); }},
      {"m", [](ExperimentConfig& c, const std::string& v) { c.recon.m = v == "sum" ? 0 : to_count(v, 1); },
       [](const ExperimentConfig& c) { return c.recon.m == 0 ? std::string("sum") : std::to_string(c.recon.m); }},
      {"lambda_min", [](ExperimentConfig& c, const std::string& v) { c.recon.lambda_min = to_positive(v); },
       [](const ExperimentConfig& c) { return num(c.recon.lambda_min); }},
      {"sigma_x", [](ExperimentConfig& c, const std::string& v) { c.recon.sigma_x = to_positive(v); },
       [](const ExperimentConfig& c) { return num(c.recon.sigma_x); }},
      {"lr_x", [](ExperimentConfig& c, const std::string& v) { c.recon.lr_x = to_positive(v); },
       [](const ExperimentConfig& c) { return num(c.recon.lr_x); }},
      {"lr_lambda", [](ExperimentConfig& c, const std::string& v) { c.recon.lr_lambda = to_positive(v); },
       [](const ExperimentConfig& c) { return num(c.recon.lr_lambda); }},
      {"alpha", [](ExperimentConfig& c, const std::string& v) { c.recon.alpha = to_positive(v); },
       [](const ExperimentConfig& c) { return num(c.recon.alpha); }},
      {"ewc_lambda", [](ExperimentConfig& c, const std::string& v) { c.strategy_params.ewc_lambda = to_nonnegative(v); },
       [](const ExperimentConfig& c) { return num(c.strategy_params.ewc_lambda); }},
      {"er_fraction", [](ExperimentConfig& c, const std::string& v) {
         const double f = to_positive(v);
         if (f > 1.0) throw ConfigError("er_fraction must lie in (0, 1]");
         c.strategy_params.er_fraction = f;
       }, [](const ExperimentConfig& c) { return num(c.strategy_params.er_fraction); }},
      {"replay_finetune_epochs",
       [](ExperimentConfig& c, const std::string& v) { c.strategy_params.replay_finetune_epochs = to_count(v, 0); },
       [](const ExperimentConfig& c) { return std::to_string(c.strategy_params.replay_finetune_epochs); }},
      {"agem_patterns",
       [](ExperimentConfig& c, const std::string& v) { c.strategy_params.agem_patterns_per_experience = to_count(v, 1); },
       [](const ExperimentConfig& c) { return std::to_string(c.strategy_params.agem_patterns_per_experience); }},
      {"agem_reference_batch",
       [](ExperimentConfig& c, const std::string& v) { c.strategy_params.agem_reference_batch = to_count(v, 1); },
       [](const ExperimentConfig& c) { return std::to_string(c.strategy_params.agem_reference_batch); }},
      {"lwf_lambda", [](ExperimentConfig& c, const std::string& v) { c.strategy_params.lwf_lambda = to_nonnegative(v); },
       [](const ExperimentConfig& c) { return num(c.strategy_params.lwf_lambda); }},
      {"lwf_temperature",
       [](ExperimentConfig& c, const std::string& v) { c.strategy_params.lwf_temperature = to_positive(v); },
       [](const ExperimentConfig& c) { return num(c.strategy_params.lwf_temperature); }},
      {"blob_classes", [](ExperimentConfig& c, const std::string& v) { c.blobs.classes = to_count(v, 2); },
       [](const ExperimentConfig& c) { return std::to_string(c.blobs.classes); }},
      {"blob_dim", [](ExperimentConfig& c, const std::string& v) { c.blobs.dim = to_count(v, 1); },
       [](const ExperimentConfig& c) { return std::to_string(c.blobs.dim); }},
      {"blob_separation", [](ExperimentConfig& c, const std::string& v) { c.blobs.separation = to_positive(v); },
       [](const ExperimentConfig& c) { return num(c.blobs.separation); }},
      {"blob_test_per_class", [](ExperimentConfig& c, const std::string& v) { c.blobs.test_per_class = to_count(v, 1); },
       [](const ExperimentConfig& c) { return std::to_string(c.blobs.test_per_class); }},
      {"seeds", [](ExperimentConfig& c, const std::string& v) {
         std::vector<std::uint64_t> s;
         for (const auto& part : split(v, ',')) s.push_back(to_u64(part));
         if (s.empty()) throw ConfigError("seeds must not be empty");
         c.seeds = s;
       }, [](const ExperimentConfig& c) { return join(c.seeds); }, false},
      {"out", [](ExperimentConfig& c, const std::string& v) {
         if (v.empty()) throw ConfigError("out must not be empty");
         c.out_dir = v;
       }, [](const ExperimentConfig& c) { return c.out_dir; }, false},
      {"manifest", [](ExperimentConfig& c, const std::string& v) { c.manifest = v; },
       [](const ExperimentConfig& c) { return c.manifest; }, false},
  };
  return table;
}

const KeySpec* find_key(const std::string& name) {
  for (const auto& k : key_table())
    if (name == k.name) return &k;
  return nullptr;
}

void validate_config(const ExperimentConfig& c) {
  if (c.dataset == "blobs" && c.blobs.classes > 2 * c.blobs.dim) {
    throw ConfigError("blob_classes must not exceed 2 * blob_dim");
  }
}

std::string canonical_text(const ExperimentConfig& cfg, bool fingerprint_only) {
  std::string out;
  for (const auto& k : key_table()) {
    if (fingerprint_only && !k.in_fingerprint) continue;
    const std::string v = k.get(cfg);
    if (v.empty()) continue;
    out += k.name;
    out += " = ";
    out += v;
    out += '\n';
  }
  return out;
}

// ---- experiment -----------------------------------------------------------

double elapsed(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

std::vector<std::string> lines_of(const std::string& text) {
  std::vector<std::string> out;
  std::istringstream in(text);
  std::string line;
  while (std::getline(in, line)) out.push_back(line);
  return out;
}

void write_file(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot open " + path.string() + " for writing");
  out << text;
  out.flush();
  if (!out) throw std::runtime_error("write failed for " + path.string());
}

std::string xml_escape(const std::string& s) {
  std::string out;
  for (char ch : s) {
    switch (ch) {
      case '&': out += "&amp;"; break;
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '"': out += "&quot;"; break;
      case '\'': out += "&apos;"; break;
      default: out += ch;
    }
  }
  return out;
}

std::string fixed(double v, int digits) {
  std::ostringstream os;
  os.imbue(std::locale::classic());
  os << std::fixed << std::setprecision(digits) << v;
  return os.str();
}

json aggregate_json(const std::optional<Aggregate>& a, const std::vector<double>& per_seed) {
  json j;
  if (!a) {
    j["mean"] = nullptr;
    j["std"] = nullptr;
  } else {
    j["mean"] = a->mean;
    j["std"] = a->std;
  }
  j["per_seed"] = per_seed;
  return j;
}

}  // namespace

const char* tuning_name(TuningMode t) {
  switch (t) {
    case TuningMode::kNaive: return "naive";
    case TuningMode::kUnsupervised: return "unsupervised";
    case TuningMode::kSupervised: return "supervised";
  }
  return "naive";
}

ExperimentConfig parse_config(const std::string& text) {
  ExperimentConfig cfg;
  std::set<std::string> seen;
  std::istringstream in(text);
  std::string raw;
  std::size_t line_no = 0;
  while (std::getline(in, raw)) {
    ++line_no;
    const auto cut = raw.find_first_of("#;");
    const std::string line = trim(cut == std::string::npos ? raw : raw.substr(0, cut));
    if (line.empty()) continue;
    if (line.front() == '[') {
      if (line.back() != ']') throw ConfigError("line " + std::to_string(line_no) + ": malformed section header");
      continue;
    }
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw ConfigError("line " + std::to_string(line_no) + ": expected 'key = value'");
    }
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    const KeySpec* spec = find_key(key);
    if (!spec) throw ConfigError("line " + std::to_string(line_no) + ": unknown key '" + key + "'");
    if (!seen.insert(key).second) throw ConfigError("line " + std::to_string(line_no) + ": duplicate key '" + key + "'");
    try {
      spec->set(cfg, value);
    } catch (const ConfigError& e) {
      throw ConfigError("line " + std::to_string(line_no) + ": " + key + ": " + e.what());
    }
  }
  for (const char* required : {"dataset", "scenario", "strategy"}) {
    if (!seen.count(required)) throw ConfigError(std::string("missing required key '") + required + "'");
  }
  validate_config(cfg);
  return cfg;
}

ExperimentConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot open config " + path.string());
  std::stringstream buf;
  buf << in.rdbuf();
  ExperimentConfig cfg = parse_config(buf.str());
  // A relative manifest path is relative to the config file.
  if (!cfg.manifest.empty() && std::filesystem::path(cfg.manifest).is_relative()) {
    cfg.manifest = (path.parent_path() / cfg.manifest).lexically_normal().string();
  }
  return cfg;
}

std::string serialize_config(const ExperimentConfig& cfg) { return canonical_text(cfg, false); }

std::string config_fingerprint(const ExperimentConfig& cfg) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char ch : canonical_text(cfg, true)) {
    h ^= ch;
    h *= 0x100000001b3ULL;
  }
  std::ostringstream os;
  os << std::hex << std::setw(16) << std::setfill('0') << h;
  return os.str();
}

Aggregate aggregate(const std::vector<double>& values) {
  Aggregate a;
  a.count = values.size();
  if (values.empty()) return a;
  a.mean = std::accumulate(values.begin(), values.end(), 0.0) / static_cast<double>(values.size());
  if (values.size() > 1) {
    double ss = 0.0;
    for (double v : values) ss += (v - a.mean) * (v - a.mean);
    a.std = std::sqrt(ss / static_cast<double>(values.size() - 1));
  }
  return a;
}

std::size_t RunResult::failed() const {
  return static_cast<std::size_t>(std::count_if(seeds.begin(), seeds.end(), [](const SeedResult& s) { return !s.ok; }));
}

Aggregate RunResult::acc() const {
  std::vector<double> v;
  for (const auto& s : seeds)
    if (s.ok) v.push_back(s.acc);
  return aggregate(v);
}

std::optional<Aggregate> RunResult::bwt() const {
  std::vector<double> v;
  for (const auto& s : seeds)
    if (s.ok && s.bwt) v.push_back(*s.bwt);
  if (v.empty()) return std::nullopt;
  return aggregate(v);
}

std::filesystem::path default_manifest_path() {
  if (const char* env = std::getenv("RECL_DATA_DIR"); env && *env) {
    std::filesystem::path p = std::filesystem::path(env) / "datasets.manifest";
    if (std::filesystem::exists(p)) return p;
  }
  return RECL_DEFAULT_MANIFEST;
}

TrainTestPair load_dataset(const ExperimentConfig& cfg) {
  if (cfg.dataset == "blobs") {
    const auto& b = cfg.blobs;
    return {make_blobs(cfg.n_per_class, b.classes, b.dim, b.separation, 0x7452),
            make_blobs(b.test_per_class, b.classes, b.dim, b.separation, 0x7453)};
  }
  const std::filesystem::path manifest =
      cfg.manifest.empty() ? default_manifest_path() : std::filesystem::path(cfg.manifest);
  const auto entries = load_manifest(manifest);
  auto it = entries.find(cfg.dataset);
  if (it == entries.end()) {
    throw ConfigError("dataset '" + cfg.dataset + "' is not listed in " + manifest.string());
  }
  return load_idx_dataset(it->second);
}

SeedResult run_seed(const ExperimentConfig& cfg, const TrainTestPair& data, std::uint64_t seed) {
  const auto t_start = std::chrono::steady_clock::now();
  SeedResult res;
  res.seed = seed;
  res.matrix = AccuracyMatrix(cfg.n_tasks);

  const TaskStream stream =
      build_task_stream(data.train, data.test, cfg.scenario, cfg.n_tasks, cfg.n_per_class, seed,
                        cfg.classes_per_task);

  MlpSpec spec;
  spec.layer_sizes.push_back(data.train.dim());
  spec.layer_sizes.insert(spec.layer_sizes.end(), cfg.hidden.begin(), cfg.hidden.end());
  spec.layer_sizes.push_back(stream.head_size_after(0));
  spec.first_layer_scale = cfg.first_layer_scale;
  ParamVector model = init_mlp(spec, Rng::derive(seed, 0x494E4954).next_u64());  // "INIT"

  auto strategy = make_strategy(cfg.strategy, cfg.strategy_params, Rng::derive(seed, 0x53545241).next_u64());
  SampleCounter counter;
  ReferenceBuffer references(cfg.reference_k);
  const SearchSpace space;
  const std::vector<double> mean(stream.normalization_mean.values().begin(), stream.normalization_mean.values().end());

  for (std::size_t t = 0; t < stream.tasks.size(); ++t) {
    const Task& task = stream.tasks[t];
    TaskTiming timing;
    std::vector<double> recon_curve;

    if (cfg.recl) {
      ReconHyperparams hp = cfg.recon;
      if (hp.m == 0) hp.m = counter.total();
      if (t > 0) {
        const auto t_tune = std::chrono::steady_clock::now();
        const std::uint64_t tune_seed = Rng::derive(seed, 0x54554E45, t).next_u64();  // "TUNE"
        std::optional<TuningReport> report;
        if (cfg.tuning == TuningMode::kNaive) {
          hp = tune_naive(hp);
        } else if (cfg.tuning == TuningMode::kUnsupervised) {
          report = tune_unsupervised(model, space, cfg.n_trials, hp, counter.seen_classes, tune_seed);
        } else {
          report = tune_supervised(model, references, space, cfg.n_trials, hp, counter.seen_classes, mean, tune_seed);
        }
        if (report) {
          hp = report->selected;
          if (report->fell_back) res.warnings.push_back("task " + std::to_string(t + 1) + ": " + report->warning);
          std::ostringstream rows;
          const std::string prefix[] = {std::to_string(seed), std::to_string(t + 1)};
          write_tuning_rows(rows, prefix, *report);
          for (auto& line : lines_of(rows.str())) res.tuning_log.push_back(line);
        }
        timing.tuning_seconds = elapsed(t_tune);
      }
      ReclTaskOutcome out = recl_train_task(model, task, t, *strategy, hp, cfg.scenario, counter, cfg.train, seed);
      timing.reconstruction_seconds = out.reconstruction_seconds;
      timing.training_seconds = out.training_seconds;
      if (out.reconstruction) {
        for (const auto& c : out.reconstruction->trajectory) recon_curve.push_back(c.full);
      }
      model = std::move(out.model);
      res.train_losses.push_back(std::move(out.epoch_losses));
    } else {
      const auto t_train = std::chrono::steady_clock::now();
      ParamVector grown = grow_head(model, task, t, cfg.scenario, seed);
      TaskContext ctx{t, &task.train, cfg.scenario, seed};
      TrainOutcome out = train_task(grown, task.train, *strategy, cfg.train, ctx);
      timing.training_seconds = elapsed(t_train);
      model = std::move(out.model);
      res.train_losses.push_back(std::move(out.epoch_losses));
    }
    res.recon_losses.push_back(std::move(recon_curve));
    res.timings.push_back(timing);

    counter.add_task(task);
    if (cfg.recl && cfg.tuning == TuningMode::kSupervised) references.add_task(task.train, seed);

    for (std::size_t tau = 0; tau <= t; ++tau) {
      res.matrix.record(t + 1, tau + 1, evaluate(model, stream.tasks[tau].test, cfg.scenario));
    }
  }

  const std::size_t T = stream.tasks.size();
  res.acc = compute_acc(res.matrix, T);
  if (T >= 2) res.bwt = compute_bwt(res.matrix, T);
  res.ok = true;
  res.seconds = elapsed(t_start);
  return res;
}

RunResult run_experiment(const ExperimentConfig& cfg) {
  const auto t0 = std::chrono::steady_clock::now();
  RunResult result;
  result.config = cfg;
  result.fingerprint = config_fingerprint(cfg);
  const TrainTestPair data = load_dataset(cfg);
  for (std::uint64_t seed : cfg.seeds) {
    try {
      result.seeds.push_back(run_seed(cfg, data, seed));
    } catch (const ConfigError&) {
      throw;
    } catch (const std::exception& e) {
      SeedResult failed;
      failed.seed = seed;
      failed.error = e.what();
      result.seeds.push_back(std::move(failed));
    }
  }
  result.seconds = elapsed(t0);
  return result;
}

std::string tuning_log_header() {
  std::ostringstream os;
  const std::string prefix[] = {"seed", "task"};
  write_tuning_header(os, prefix);
  std::string h = os.str();
  h.pop_back();
  return h;
}

std::string results_csv(const RunResult& result) {
  const auto& cfg = result.config;
  std::string out = "config_fingerprint,strategy,recl,tuning,seed,T,tau,acc\n";
  for (const auto& s : result.seeds) {
    if (!s.ok) continue;
    for (const auto& [key, acc] : s.matrix.entries()) {
      out += result.fingerprint + ',' + cfg.strategy + ',' + (cfg.recl ? "on" : "off") + ',' +
             tuning_name(cfg.tuning) + ',' + std::to_string(s.seed) + ',' + std::to_string(key.first) + ',' +
             std::to_string(key.second) + ',' + textfmt::number(acc) + '\n';
    }
  }
  return out;
}

std::string summary_json(const RunResult& result) {
  const auto& cfg = result.config;
  json j;
  j["config_fingerprint"] = result.fingerprint;
  j["dataset"] = cfg.dataset;
  j["scenario"] = scenario_name(cfg.scenario);
  j["strategy"] = cfg.strategy;
  j["recl"] = cfg.recl;
  j["tuning"] = tuning_name(cfg.tuning);
  j["n_tasks"] = cfg.n_tasks;
  j["units"] = "percentage points";

  std::vector<std::uint64_t> ok_seeds;
  std::vector<double> acc, bwt;
  json failures = json::array();
  for (const auto& s : result.seeds) {
    if (s.ok) {
      ok_seeds.push_back(s.seed);
      acc.push_back(100.0 * s.acc);
      if (s.bwt) bwt.push_back(100.0 * *s.bwt);
    } else {
      failures.push_back({{"seed", s.seed}, {"error", s.error}});
    }
  }
  j["seeds"] = ok_seeds;
  j["failed_seeds"] = failures;
  j["acc"] = aggregate_json(acc.empty() ? std::nullopt : std::optional<Aggregate>(aggregate(acc)), acc);
  j["bwt"] = aggregate_json(bwt.empty() ? std::nullopt : std::optional<Aggregate>(aggregate(bwt)), bwt);

  json rt;
  double rec = 0.0, tune = 0.0, train = 0.0;
  json per_seed = json::array();
  for (const auto& s : result.seeds) {
    double sr = 0.0, st = 0.0, sn = 0.0;
    for (const auto& t : s.timings) {
      sr += t.reconstruction_seconds;
      st += t.tuning_seconds;
      sn += t.training_seconds;
    }
    rec += sr;
    tune += st;
    train += sn;
    per_seed.push_back({{"seed", s.seed}, {"seconds", s.seconds}});
  }
  rt["total_seconds"] = result.seconds;
  rt["reconstruction_seconds"] = rec;
  rt["tuning_seconds"] = tune;
  rt["training_seconds"] = train;
  rt["per_seed"] = per_seed;
  j["runtime"] = rt;
  return j.dump(2) + "\n";
}

void emit_results(const RunResult& result, const std::filesystem::path& dir) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw std::runtime_error("cannot create " + dir.string() + ": " + ec.message());
  write_file(dir / "results.csv", results_csv(result));
  write_file(dir / "summary.json", summary_json(result));

  std::string runtime = "seed,task,tuning_seconds,reconstruction_seconds,training_seconds\n";
  std::string losses = "seed,task,kind,step,value\n";
  std::string tuning = tuning_log_header() + "\n";
  for (const auto& s : result.seeds) {
    for (std::size_t t = 0; t < s.timings.size(); ++t) {
      const auto& tm = s.timings[t];
      runtime += std::to_string(s.seed) + ',' + std::to_string(t + 1) + ',' + textfmt::number(tm.tuning_seconds) +
                 ',' + textfmt::number(tm.reconstruction_seconds) + ',' + textfmt::number(tm.training_seconds) + '\n';
    }
    auto dump = [&](const std::vector<std::vector<double>>& curves, const char* kind) {
      for (std::size_t t = 0; t < curves.size(); ++t)
        for (std::size_t k = 0; k < curves[t].size(); ++k)
          losses += std::to_string(s.seed) + ',' + std::to_string(t + 1) + ',' + kind + ',' + std::to_string(k) + ',' +
                    textfmt::number(curves[t][k]) + '\n';
    };
    dump(s.train_losses, "train");
    dump(s.recon_losses, "reconstruction");
    for (const auto& row : s.tuning_log) tuning += row + '\n';
  }
  write_file(dir / "runtime.csv", runtime);
  write_file(dir / "losses.csv", losses);
  if (result.config.recl && result.config.tuning != TuningMode::kNaive) write_file(dir / "tuning_log.csv", tuning);
}

std::vector<ResultRow> parse_results_csv(const std::string& text) {
  const auto lines = lines_of(text);
  if (lines.empty() || lines[0] != "config_fingerprint,strategy,recl,tuning,seed,T,tau,acc") {
    throw ParseError("results.csv: missing or unexpected header");
  }
  std::vector<ResultRow> rows;
  for (std::size_t i = 1; i < lines.size(); ++i) {
    if (lines[i].empty()) continue;
    const auto f = split(lines[i], ',');
    const std::string where = "results.csv line " + std::to_string(i + 1);
    if (f.size() != 8) throw ParseError(where + ": expected 8 fields, got " + std::to_string(f.size()));
    ResultRow r;
    try {
      r.config_fingerprint = f[0];
      r.strategy = f[1];
      r.recl = to_switch(f[2]);
      r.tuning = f[3];
      r.seed = to_u64(f[4]);
      r.T = static_cast<std::size_t>(to_u64(f[5]));
      r.tau = static_cast<std::size_t>(to_u64(f[6]));
    } catch (const ConfigError& e) {
      throw ParseError(where + ": " + e.what());
    }
    if (!textfmt::parse_number(f[7], r.acc)) throw ParseError(where + ": bad accuracy '" + f[7] + "'");
    rows.push_back(std::move(r));
  }
  return rows;
}

std::vector<std::pair<std::uint64_t, AccuracyMatrix>> matrices_from_rows(const std::vector<ResultRow>& rows) {
  std::vector<std::pair<std::uint64_t, AccuracyMatrix>> out;
  std::map<std::uint64_t, std::size_t> slot;
  std::map<std::uint64_t, std::size_t> max_t;
  for (const auto& r : rows) max_t[r.seed] = std::max(max_t[r.seed], r.T);
  for (const auto& r : rows) {
    auto [it, fresh] = slot.emplace(r.seed, out.size());
    if (fresh) out.emplace_back(r.seed, AccuracyMatrix(max_t[r.seed]));
    out[it->second].second.record(r.T, r.tau, r.acc);
  }
  return out;
}

ChartEntry chart_entry_from_summary(const std::string& json_text) {
  json j;
  try {
    j = json::parse(json_text);
  } catch (const json::exception& e) {
    throw ParseError(std::string("summary.json: ") + e.what());
  }
  try {
    ChartEntry e;
    e.method = j.at("strategy").get<std::string>();
    const bool recl = j.at("recl").get<bool>();
    const std::string tuning = j.at("tuning").get<std::string>();
    e.series = !recl ? "vanilla" : tuning == "naive" ? "+ReCL" : "+ReCL (" + tuning + ")";
    const auto& acc = j.at("acc");
    if (acc.at("mean").is_null()) throw ParseError("summary.json: no successful seeds to chart");
    e.acc_mean = acc.at("mean").get<double>();
    e.acc_std = acc.at("std").get<double>();
    return e;
  } catch (const json::exception& ex) {
    throw ParseError(std::string("summary.json: ") + ex.what());
  }
}

std::string render_chart(const std::vector<ChartEntry>& entries) {
  if (entries.empty()) throw ContractError("emit_chart: nothing to draw");
  std::vector<std::string> methods, series;
  for (const auto& e : entries) {
    if (std::find(methods.begin(), methods.end(), e.method) == methods.end()) methods.push_back(e.method);
    if (std::find(series.begin(), series.end(), e.series) == series.end()) series.push_back(e.series);
  }
  std::stable_sort(series.begin(), series.end(),
                   [](const std::string& a, const std::string& b) { return a == "vanilla" && b != "vanilla"; });

  const double left = 60, top = 30, plot_h = 300, bar_w = 28, gap = 24;
  const double group_w = bar_w * static_cast<double>(series.size()) + gap;
  const double plot_w = group_w * static_cast<double>(methods.size()) + gap;
  const double width = left + plot_w + 160, height = top + plot_h + 60;
  static const char* palette[] = {"#4c72b0", "#dd8452", "#55a868", "#c44e52", "#8172b3", "#937860"};
  auto y_of = [&](double pp) { return top + plot_h * (1.0 - std::clamp(pp, 0.0, 100.0) / 100.0); };

  std::ostringstream svg;
  svg << "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n"
      << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << fixed(width, 0) << "\" height=\"" << fixed(height, 0)
      << "\" viewBox=\"0 0 " << fixed(width, 0) << ' ' << fixed(height, 0) << "\">\n"
      << "<rect x=\"0\" y=\"0\" width=\"100%\" height=\"100%\" fill=\"white\"/>\n"
      << "<g font-family=\"sans-serif\" font-size=\"11\">\n";
  for (int tick = 0; tick <= 100; tick += 20) {
    const double y = y_of(tick);
    svg << "<line x1=\"" << fixed(left, 1) << "\" y1=\"" << fixed(y, 1) << "\" x2=\"" << fixed(left + plot_w, 1)
        << "\" y2=\"" << fixed(y, 1) << "\" stroke=\"#dddddd\"/>\n"
        << "<text x=\"" << fixed(left - 6, 1) << "\" y=\"" << fixed(y + 4, 1) << "\" text-anchor=\"end\">" << tick
        << "</text>\n";
  }
  svg << "<text x=\"14\" y=\"" << fixed(top + plot_h / 2, 1) << "\" transform=\"rotate(-90 14 "
      << fixed(top + plot_h / 2, 1) << ")\" text-anchor=\"middle\">ACC (%)</text>\n";

  for (std::size_t mi = 0; mi < methods.size(); ++mi) {
    const double gx = left + gap + group_w * static_cast<double>(mi);
    for (std::size_t si = 0; si < series.size(); ++si) {
      auto it = std::find_if(entries.begin(), entries.end(),
                             [&](const ChartEntry& e) { return e.method == methods[mi] && e.series == series[si]; });
      if (it == entries.end()) continue;
      const double x = gx + bar_w * static_cast<double>(si);
      const double y = y_of(it->acc_mean);
      svg << "<rect class=\"bar\" x=\"" << fixed(x, 2) << "\" y=\"" << fixed(y, 2) << "\" width=\""
          << fixed(bar_w - 2, 2) << "\" height=\"" << fixed(top + plot_h - y, 2) << "\" fill=\""
          << palette[si % 6] << "\"><title>" << xml_escape(it->method + " " + it->series) << ": "
          << fixed(it->acc_mean, 2) << " +/- " << fixed(it->acc_std, 2) << "</title></rect>\n";
      const double cx = x + (bar_w - 2) / 2;
      const double y_hi = y_of(it->acc_mean + it->acc_std), y_lo = y_of(it->acc_mean - it->acc_std);
      svg << "<path class=\"errorbar\" d=\"M" << fixed(cx, 2) << ' ' << fixed(y_lo, 2) << " V" << fixed(y_hi, 2)
          << " M" << fixed(cx - 5, 2) << ' ' << fixed(y_hi, 2) << " H" << fixed(cx + 5, 2) << " M"
          << fixed(cx - 5, 2) << ' ' << fixed(y_lo, 2) << " H" << fixed(cx + 5, 2)
          << "\" stroke=\"black\" fill=\"none\"/>\n";
    }
    svg << "<text x=\"" << fixed(gx + bar_w * static_cast<double>(series.size()) / 2, 1) << "\" y=\""
        << fixed(top + plot_h + 18, 1) << "\" text-anchor=\"middle\">" << xml_escape(methods[mi]) << "</text>\n";
  }
  svg << "<line x1=\"" << fixed(left, 1) << "\" y1=\"" << fixed(top + plot_h, 1) << "\" x2=\""
      << fixed(left + plot_w, 1) << "\" y2=\"" << fixed(top + plot_h, 1) << "\" stroke=\"black\"/>\n";
  for (std::size_t si = 0; si < series.size(); ++si) {
    const double lx = left + plot_w + 20, ly = top + 10 + 20 * static_cast<double>(si);
    svg << "<rect x=\"" << fixed(lx, 1) << "\" y=\"" << fixed(ly - 10, 1) << "\" width=\"12\" height=\"12\" fill=\""
        << palette[si % 6] << "\"/>\n"
        << "<text x=\"" << fixed(lx + 18, 1) << "\" y=\"" << fixed(ly, 1) << "\">" << xml_escape(series[si])
        << "</text>\n";
  }
  svg << "</g>\n</svg>\n";
  return svg.str();
}

void emit_chart(const std::vector<ChartEntry>& entries, const std::filesystem::path& path) {
  const std::string svg = render_chart(entries);
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  write_file(path, svg);
}

}  // namespace recl
