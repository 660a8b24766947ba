// Acceptance suite: one PASS/FAIL line per criterion, nonzero exit on any
// failure. Pass criterion numbers as arguments to run a subset.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "recl/data.hpp"
#include "recl/harness.hpp"
#include "recl/metrics.hpp"
#include "recl/model.hpp"
#include "recl/reconstruction.hpp"
#include "recl/rng.hpp"
#include "recl/strategies.hpp"
#include "recl/tuning.hpp"
#include "support/oracles.hpp"
#include "support/tempdir.hpp"

using namespace recl;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

struct Criterion {
  int id;
  const char* name;
  double budget_seconds;
  std::function<Outcome()> run;
};

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

Tensor gaussian(Shape shape, Rng& rng, double sd = 1.0) {
  Tensor t(std::move(shape));
  for (auto& v : t.values()) v = rng.normal(0.0, sd);
  return t;
}

// ---- 1 ---------------------------------------------------------------------

std::vector<double> loop_forward(const ParamVector& p, std::vector<double> h) {
  for (std::size_t l = 0; l < p.num_layers(); ++l) {
    const Tensor& W = p.layer(l);
    std::vector<double> next(W.rows(), 0.0);
    for (std::size_t i = 0; i < W.rows(); ++i) {
      for (std::size_t j = 0; j < W.cols(); ++j) next[i] += W.at(i, j) * h[j];
      if (l + 1 < p.num_layers()) next[i] = std::max(next[i], 0.0);
    }
    h = std::move(next);
  }
  return h;
}

Outcome homogeneity() {
  Rng rng(0x484F4D);
  std::size_t checks = 0, bad = 0;
  double worst = 0.0;
  for (int net = 0; net < 100; ++net) {
    const std::size_t depth = 2 + static_cast<std::size_t>(net % 3);
    std::vector<std::size_t> sizes{2 + rng.below(8)};
    for (std::size_t l = 1; l < depth; ++l) sizes.push_back(2 + rng.below(16));
    sizes.push_back(2 + rng.below(5));
    ParamVector p = init_mlp(MlpSpec{sizes, 1.0}, rng.next_u64());
    Tensor x = gaussian({sizes.front()}, rng);
    const std::vector<double> xv(x.values().begin(), x.values().end());
    const auto base = loop_forward(p, xv);
    for (double c : {0.5, 2.0, 10.0}) {
      auto [lhs, rhs] = homogeneity_check(p, x, c);
      const double factor = std::pow(c, static_cast<double>(depth));
      for (std::size_t k = 0; k < lhs.size(); ++k) {
        const double ref = factor * base[k];
        const double err = std::abs(lhs[k] - ref);
        const double rel = err / std::max(std::abs(ref), 1e-300);
        ++checks;
        if (err > 1e-5 * std::abs(ref) || std::abs(rhs[k] - ref) > 1e-5 * std::abs(ref)) ++bad;
        if (ref != 0.0) worst = std::max(worst, rel);
      }
    }
  }
  return {bad == 0, fmt("%zu outputs over 100 nets, %zu outside rtol 1e-5, worst rel %.2e", checks, bad, worst)};
}

// ---- 2 ---------------------------------------------------------------------

bool preactivations_clear(const ParamVector& p, const Tensor& X, double margin) {
  Tensor h = X;
  for (std::size_t l = 0; l + 1 < p.num_layers(); ++l) {
    Tensor z = forward(ParamVector({p.layer(l)}), h);
    for (double v : z.values())
      if (std::abs(v) < margin) return false;
    for (auto& v : z.values()) v = std::max(v, 0.0);
    h = std::move(z);
  }
  return true;
}

Outcome differentiation() {
  Rng rng(0x44494646);
  std::size_t cases = 0, failures = 0, entries = 0, max_params = 0;
  double worst = -1e300;
  std::string first_failure;
  auto record = [&](const oracle::FdReport& rep, const char* kind) {
    ++cases;
    entries += rep.checked;
    worst = std::max(worst, rep.worst_excess);
    if (!rep.ok) {
      ++failures;
      if (first_failure.empty()) first_failure = std::string(kind) + ": " + rep.detail;
    }
  };

  // Training losses: cross-entropy alone, with the EWC penalty, with LwF.
  while (cases < 30) {
    const std::size_t d = 2 + rng.below(5), h = 3 + rng.below(10), c = 2 + rng.below(3), n = 2 + rng.below(5);
    const std::vector<std::size_t> sizes = rng.below(2) ? std::vector<std::size_t>{d, h, c}
                                                        : std::vector<std::size_t>{d, h, h, c};
    ParamVector theta = init_mlp(MlpSpec{sizes, 1.0}, rng.next_u64());
    if (theta.size() > 500) continue;
    Tensor X = gaussian({n, d}, rng);
    if (!preactivations_clear(theta, X, 1e-3)) continue;
    max_params = std::max(max_params, theta.size());
    std::vector<std::size_t> labels;
    for (std::size_t i = 0; i < n; ++i) labels.push_back(rng.below(c));
    const int kind = static_cast<int>(cases % 3);
    EwcState ewc{init_mlp(MlpSpec{sizes, 1.0}, rng.next_u64()), ParamVector::zeros_like(theta), 10.0};
    for (auto& t : ewc.fisher.matrices())
      for (auto& v : t.values()) v = rng.uniform();
    Tensor recorded = gaussian({n, c}, rng);
    auto f = [&](const std::vector<ad::Var>& w) {
      ad::Var logits = forward_graph(w, ad::Var::constant(X));
      ad::Var loss = ad::cross_entropy_rows(logits, labels);
      if (kind == 1) loss = ad::add(loss, ewc_penalty(w, ewc));
      if (kind == 2) loss = ad::add(loss, lwf_loss(logits, recorded, 2.0, 1.0));
      return loss;
    };
    record(oracle::check_gradients(f, theta.matrices(), 1e-3, 1e-6, 1e-6), "training loss");
  }

  // L_full in x and lambda, where the smooth step matches the ReLU forward.
  std::size_t full_cases = 0;
  while (full_cases < 30) {
    const std::size_t d = 2 + rng.below(4), h = 4 + rng.below(12), c = 2 + rng.below(3), m = 2 + rng.below(4);
    ParamVector theta = init_mlp(MlpSpec{{d, h, c}, 1.0}, rng.next_u64());
    if (theta.size() > 500) continue;
    Tensor xs({m, d});
    for (auto& v : xs.values()) {
      v = rng.uniform(-0.95, 0.95);
      if (std::abs(std::abs(v) - 1.0) < 0.02) v *= 0.5;
    }
    if (!preactivations_clear(theta, xs, 0.25)) continue;
    Tensor lam({m, c - 1});
    for (auto& v : lam.values()) v = rng.uniform(0.12, 1.0);
    std::vector<std::size_t> labels;
    for (std::size_t i = 0; i < m; ++i) labels.push_back(rng.below(c));
    ++full_cases;
    max_params = std::max(max_params, theta.size());
    auto f = [&](const std::vector<ad::Var>& v) {
      return loss_full(theta, v[0], v[1], labels, ReconHyperparams{}).total;
    };
    record(oracle::check_gradients(f, {xs, lam}, 1e-3, 1e-6, 1e-6), "L_full");
  }
  std::string detail = fmt("%zu cases (%zu entries, nets up to %zu params), %zu failed", cases, entries,
                           max_params, failures);
  if (!first_failure.empty()) detail += "; first: " + first_failure;
  return {failures == 0 && cases >= 50, detail};
}

// ---- 3 ---------------------------------------------------------------------

Outcome exact_values() {
  std::vector<std::string> wrong;
  auto expect = [&](const char* what, double got, double want) {
    if (std::abs(got - want) > 1e-12) wrong.push_back(fmt("%s=%.17g (want %g)", what, got, want));
  };
  auto prior = [](std::initializer_list<double> v) {
    return loss_prior(ad::Var::constant(Tensor::vector(v))).value().item();
  };
  expect("prior(0.5,-0.5)", prior({0.5, -0.5}), 0.0);
  expect("prior(1.5)", prior({1.5}), 0.5);
  expect("prior(-2,0.3)", prior({-2.0, 0.3}), 1.0);
  expect("L_lambda", loss_lambda(ad::Var::constant(Tensor::vector({0.5, 0.05})), 0.1).value().item(), -0.15);

  ParamVector theta = init_mlp(MlpSpec{{5, 9, 4}, 1.0}, 3);
  CandidateSet c = init_candidates(6, 5, std::vector<std::size_t>{0, 1, 2, 3}, ReconHyperparams{}, 1);
  c.lambdas = Tensor(c.lambdas.shape(), 0.0);
  const double rec = loss_rec(theta, c, 100.0);
  double norm = 0.0;
  for (const auto& t : theta.matrices())
    for (double v : t.values()) norm += v * v;
  if (std::abs(rec - norm) > 1e-12 * norm) wrong.push_back(fmt("L_rec(lambda=0)=%.17g vs %.17g", rec, norm));

  AccuracyMatrix m(2);
  m.record(1, 1, 0.99);
  m.record(2, 1, 0.80);
  m.record(2, 2, 0.95);
  expect("ACC", compute_acc(m, 2), 0.875);
  expect("BWT", compute_bwt(m, 2), -0.19);

  std::string detail = "prior x3, L_lambda, L_rec(lambda=0), ACC, BWT";
  for (const auto& w : wrong) detail += "; " + w;
  return {wrong.empty(), detail};
}

// ---- 4 ---------------------------------------------------------------------

struct OracleTask {
  LabeledDataset data;
  ParamVector theta;
  double train_accuracy = 0.0;
};

// Two well-separated blobs, 5 points each, centred and scaled into the box
// the prior favours; a 2-32-2 net trained full-batch to convergence.
OracleTask make_oracle_task(std::uint64_t seed) {
  LabeledDataset d = make_blobs(5, 2, 2, 10.0, seed);
  Tensor X = d.features;
  const std::size_t n = X.rows();
  for (std::size_t k = 0; k < 2; ++k) {
    double mean = 0.0;
    for (std::size_t i = 0; i < n; ++i) mean += X.at(i, k);
    mean /= static_cast<double>(n);
    for (std::size_t i = 0; i < n; ++i) X.at(i, k) -= mean;
  }
  double mx = 0.0;
  for (double v : X.values()) mx = std::max(mx, std::abs(v));
  for (auto& v : X.values()) v *= 0.4 / mx;
  OracleTask task{LabeledDataset::make(X, d.labels), init_mlp(MlpSpec{{2, 32, 2}}, seed), 0.0};
  for (int e = 0; e < 10000; ++e) task.theta = sgd_step(task.theta, cross_entropy_grad(task.theta, task.data), 0.5);
  // Margin-correct: the true logit beats every other logit strictly.
  const Tensor logits = forward(task.theta, task.data.features);
  std::size_t correct = 0;
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t y = task.data.labels[i];
    bool ok = true;
    for (std::size_t j = 0; j < logits.cols(); ++j) ok = ok && (j == y || logits.at(i, y) - logits.at(i, j) > 0.0);
    correct += ok;
  }
  task.train_accuracy = static_cast<double>(correct) / static_cast<double>(n);
  return task;
}

Outcome reconstruction_oracle() {
  int wins = 0;
  std::string detail;
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    OracleTask task = make_oracle_task(seed);
    ReconHyperparams hp = tune_naive();
    hp.n_rec = 10000;
    hp.m = 20;
    const std::vector<std::size_t> classes{0, 1};
    CandidateSet init = init_candidates(hp.m, 2, classes, hp, seed, 2);
    const double before = oracle::mean_nearest_distance(task.data.features, init.xs);
    ReconResult r = reconstruct(task.theta, init, hp);
    const double after = oracle::mean_nearest_distance(task.data.features, r.candidates.xs);
    const bool win = task.train_accuracy >= 0.99 && after <= 0.5 * before;
    wins += win;
    detail += fmt("%sseed %llu acc %.2f ratio %.3f", seed ? "; " : "", static_cast<unsigned long long>(seed),
                  task.train_accuracy, after / before);
  }
  return {wins >= 4, fmt("%d/5 seeds at <= 0.5x initial NN distance: ", wins) + detail};
}

// ---- 5 and 6 -----------------------------------------------------------------

std::optional<RunResult> g_finetune;

RunResult run_config(const char* name) {
  ExperimentConfig cfg = load_config(std::filesystem::path(RECL_SOURCE_DIR) / "configs" / name);
  return run_experiment(cfg);
}

std::string per_seed(const RunResult& r) {
  std::string s;
  for (const auto& seed : r.seeds) {
    if (!s.empty()) s += " ";
    s += seed.ok ? fmt("%.1f/%.1f", 100.0 * seed.acc, 100.0 * seed.bwt.value_or(0.0)) : std::string("failed");
  }
  return s;
}

Outcome cil_ordering() {
  if (!g_finetune) g_finetune = run_config("splitmnist_finetune.ini");
  RunResult recl = run_config("splitmnist_finetune_recl.ini");
  if (g_finetune->failed() || recl.failed()) return {false, "a seed failed"};
  const double gap = 100.0 * (recl.acc().mean - g_finetune->acc().mean);
  const double bwt_ft = 100.0 * g_finetune->bwt()->mean, bwt_recl = 100.0 * recl.bwt()->mean;
  return {gap >= 5.0 && bwt_recl > bwt_ft,
          fmt("ACC FT %.2f, FT+ReCL %.2f (gap %.2f pp); BWT FT %.2f, FT+ReCL %.2f; per seed ACC/BWT FT [",
              100.0 * g_finetune->acc().mean, 100.0 * recl.acc().mean, gap, bwt_ft, bwt_recl) +
              per_seed(*g_finetune) + "] ReCL [" + per_seed(recl) + "]"};
}

Outcome forgetting() {
  if (!g_finetune) g_finetune = run_config("splitmnist_finetune.ini");
  int below = 0;
  std::string bwts;
  for (const auto& s : g_finetune->seeds) {
    if (s.ok && s.bwt && 100.0 * *s.bwt < -10.0) ++below;
    bwts += fmt(" %.2f", s.ok && s.bwt ? 100.0 * *s.bwt : NAN);
  }
  return {below == 3 && g_finetune->seeds.size() == 3, fmt("%d/3 seeds with BWT < -10 pp:", below) + bwts};
}

// ---- 7 -----------------------------------------------------------------------

Outcome strategy_properties() {
  std::vector<std::string> problems;
  Rng rng(0x53545250);

  double worst_dot = 0.0;
  for (int i = 0; i < 10000; ++i) {
    std::vector<Tensor> g, r;
    for (Shape s : {Shape{6, 4}, Shape{3, 6}}) {
      g.push_back(gaussian(s, rng));
      r.push_back(gaussian(s, rng));
    }
    ParamVector ref(std::move(r));
    worst_dot = std::min(worst_dot, agem_project(ParamVector(std::move(g)), ref).dot(ref));
  }
  if (worst_dot < -1e-9) problems.push_back(fmt("AGEM min dot %.3g", worst_dot));

  ParamVector anchor = init_mlp(MlpSpec{{4, 6, 3}, 1.0}, 1);
  ParamVector fisher = ParamVector::zeros_like(anchor);
  for (auto& t : fisher.matrices())
    for (auto& v : t.values()) v = rng.uniform();
  const double at_anchor = ewc_penalty(param_leaves(anchor), EwcState{anchor, fisher, 100.0}).value().item();
  if (at_anchor != 0.0) problems.push_back(fmt("EWC penalty at anchor %.3g", at_anchor));

  ReplayStrategy er(0.1, 0, 3);
  std::size_t expected = 0, t = 0;
  for (std::size_t n : {200u, 155u, 37u}) {
    LabeledDataset task = make_blobs(n, 1, 3, 1.0, n);
    er.after_task(ParamVector{}, TaskContext{t++, &task, Scenario::kClassIncremental, 0});
    expected += static_cast<std::size_t>(std::floor(0.1 * static_cast<double>(n)));
  }
  if (er.buffer().samples.size() != expected) {
    problems.push_back(fmt("ER buffer %zu, expected %zu", er.buffer().samples.size(), expected));
  }

  Tensor logits = gaussian({8, 4}, rng, 3.0);
  ad::Var cur = ad::Var::leaf(logits);
  const ad::Var wrt[] = {cur};
  double max_grad = 0.0;
  const auto lwf_grad = ad::grad(lwf_loss(cur, logits, 2.0, 1.0), wrt);
  for (double v : lwf_grad[0].value().values()) max_grad = std::max(max_grad, std::abs(v));
  if (max_grad > 1e-12) problems.push_back(fmt("LwF gradient %.3g at matching logits", max_grad));

  std::string detail = fmt("AGEM min dot %.2e over 1e4 pairs; EWC %.1f at anchor; ER %zu = %zu; LwF max |grad| %.1e",
                           worst_dot, at_anchor, er.buffer().samples.size(), expected, max_grad);
  return {problems.empty(), detail};
}

// ---- 8 -----------------------------------------------------------------------

Outcome tuning_contracts() {
  std::vector<std::string> problems;
  Rng rng(0x54554E);

  double worst_self = 0.0;
  for (int i = 0; i < 100; ++i) {
    Tensor a = gaussian({1 + rng.below(784)}, rng);
    worst_self = std::max(worst_self, std::abs(ssim(a, a) - 1.0));
  }
  if (worst_self > 1e-12) problems.push_back(fmt("ssim(x,x) off by %.2e", worst_self));

  int mismatches = 0;
  for (int i = 0; i < 200; ++i) {
    const std::size_t r = 1 + rng.below(50), m = 1 + rng.below(50), d = 1 + rng.below(10);
    Tensor refs = gaussian({r, d}, rng), cands = gaussian({m, d}, rng);
    mismatches += match_nearest(refs, cands) != oracle::brute_force_match(refs, cands);
  }
  if (mismatches) problems.push_back(fmt("match_nearest differs from brute force %d times", mismatches));

  OracleTask task = make_oracle_task(0);
  ReconHyperparams base = tune_naive();
  base.n_rec = 10000;
  base.m = 20;
  const std::vector<std::size_t> classes{0, 1};
  auto uns = tune_unsupervised(task.theta, SearchSpace{}, 10, base, classes, 1);
  std::size_t argmin = 0;
  for (std::size_t t = 0; t < uns.trials.size(); ++t)
    if (uns.trials[t].score < uns.trials[argmin].score) argmin = t;
  if (uns.fell_back || uns.trials.size() != 10 || !(uns.selected == uns.trials[argmin].hp)) {
    problems.push_back("unsupervised selection is not the argmin");
  }

  ReferenceBuffer refs(10);
  refs.add_task(task.data, 1);
  const std::vector<double> mean(2, 0.0);
  auto sup = tune_supervised(task.theta, refs, SearchSpace{}, 10, base, classes, mean, 1);
  std::size_t argmax = 0;
  for (std::size_t t = 0; t < sup.trials.size(); ++t)
    if (sup.trials[t].score > sup.trials[argmax].score) argmax = t;
  if (sup.fell_back || sup.trials.size() != 10 || !(sup.selected == sup.trials[argmax].hp)) {
    problems.push_back("supervised selection is not the argmax");
  }

  std::string detail = fmt("ssim self err %.1e; match vs brute force 200 cases, %d differ; unsupervised best trial "
                           "%zu (L_full %.4g); supervised best trial %zu (SSIM %.4f)",
                           worst_self, mismatches, uns.best_trial, uns.trials[uns.best_trial].score, sup.best_trial,
                           sup.trials[sup.best_trial].score);
  for (const auto& p : problems) detail += "; " + p;
  return {problems.empty(), detail};
}

// ---- 9 -----------------------------------------------------------------------

Outcome determinism_io() {
  std::vector<std::string> problems;
  ExperimentConfig cfg = parse_config(
      "dataset = blobs\nscenario = CIL\nstrategy = er\nrecl = on\nn_tasks = 2\nn_per_class = 20\nhidden = 16\n"
      "epochs = 3\nlr = 0.05\nn_rec = 20\nblob_classes = 4\nblob_dim = 6\nblob_test_per_class = 10\nseeds = 5\n");
  testutil::TempDir dir;
  RunResult a = run_experiment(cfg);
  RunResult b = run_experiment(cfg);
  emit_results(a, dir / "a");
  emit_results(b, dir / "b");
  auto ja = nlohmann::ordered_json::parse(testutil::read_file(dir / "a" / "summary.json"));
  auto jb = nlohmann::ordered_json::parse(testutil::read_file(dir / "b" / "summary.json"));
  ja.erase("runtime");
  jb.erase("runtime");
  if (ja.dump() != jb.dump()) problems.push_back("summary.json differs between identical runs");
  if (a.failed()) problems.push_back("run failed: " + a.seeds[0].error);

  const std::string csv = testutil::read_file(dir / "a" / "results.csv");
  auto rows = parse_results_csv(csv);
  auto mats = matrices_from_rows(rows);
  if (rows.size() != 3 || mats.size() != 1 || mats[0].second.entries() != a.seeds[0].matrix.entries()) {
    problems.push_back("results.csv does not round-trip");
  }

  std::vector<std::uint8_t> pixels(5 * 7 * 3), labels(5);
  Rng rng(9);
  for (auto& p : pixels) p = static_cast<std::uint8_t>(rng.below(256));
  for (auto& l : labels) l = static_cast<std::uint8_t>(rng.below(10));
  IdxData img = parse_idx(encode_idx_images(pixels, 5, 7, 3));
  bool idx_ok = img.image_rows == 7 && img.image_cols == 3 && img.values.shape() == Shape{5, 21};
  for (std::size_t i = 0; idx_ok && i < pixels.size(); ++i)
    idx_ok = static_cast<std::uint8_t>(std::lround(img.values[i] * 255.0)) == pixels[i];
  auto lab = parse_idx(encode_idx_labels(labels)).labels();
  idx_ok = idx_ok && std::equal(lab.begin(), lab.end(), labels.begin(), labels.end());
  if (!idx_ok) problems.push_back("IDX does not round-trip");

  std::vector<ChartEntry> entries{chart_entry_from_summary(summary_json(a))};
  cfg.recl = false;
  entries.push_back(chart_entry_from_summary(summary_json(run_experiment(cfg))));
  emit_chart(entries, dir / "chart.svg");
  std::string why;
  if (!oracle::xml_well_formed(testutil::read_file(dir / "chart.svg"), &why)) problems.push_back("SVG: " + why);

  std::string detail = "summary.json identical, results.csv and IDX round-trip, SVG well-formed";
  if (!problems.empty()) {
    detail.clear();
    for (const auto& p : problems) detail += (detail.empty() ? "" : "; ") + p;
  }
  return {problems.empty(), detail};
}

}  // namespace

int main(int argc, char** argv) {
  const std::vector<Criterion> all{
      {1, "homogeneity", 5.0, homogeneity},
      {2, "differentiation", 60.0, differentiation},
      {3, "exact loss values", 10.0, exact_values},
      {4, "reconstruction oracle", 300.0, reconstruction_oracle},
      {5, "CIL ordering", 900.0, cil_ordering},
      {6, "forgetting", 900.0, forgetting},
      {7, "strategy properties", 30.0, strategy_properties},
      {8, "tuning", 120.0, tuning_contracts},
      {9, "determinism and I/O", 30.0, determinism_io},
  };
  std::set<int> wanted;
  for (int i = 1; i < argc; ++i) wanted.insert(std::atoi(argv[i]));

  int failed = 0;
  for (const auto& c : all) {
    if (!wanted.empty() && !wanted.count(c.id)) continue;
    const auto t0 = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = c.run();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    const bool in_time = secs <= c.budget_seconds;
    const bool pass = o.pass && in_time;
    failed += !pass;
    std::printf("%s criterion %d (%s): %s [%.1fs of %.0fs%s]\n", pass ? "PASS" : "FAIL", c.id, c.name,
                o.detail.c_str(), secs, c.budget_seconds, in_time ? "" : ", over budget");
    std::fflush(stdout);
  }
  return failed ? 1 : 0;
}
