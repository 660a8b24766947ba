#include "recl/reconstruction.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <set>
#include <sstream>

#include "binio.hpp"
#include "recl/error.hpp"
#include "recl/rng.hpp"

namespace recl {

namespace {

constexpr double kLambdaInit = 0.1;

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

}  // namespace

void ReconHyperparams::validate() const {
  auto positive = [](double v, const char* what) {
    if (!(v > 0.0) || !std::isfinite(v)) throw ContractError(std::string(what) + " must be positive");
  };
  positive(lambda_min, "lambda_min");
  positive(sigma_x, "sigma_x");
  positive(lr_x, "lr_x");
  positive(lr_lambda, "lr_lambda");
  positive(alpha, "alpha");
}

CandidateSet init_candidates(std::size_t m, std::size_t d, std::span<const std::size_t> target_classes,
                             const ReconHyperparams& hp, std::uint64_t seed, std::size_t head_size) {
  if (target_classes.empty()) throw ContractError("init_candidates: no target classes");
  if (m == 0 || d == 0) throw ContractError("init_candidates: m and d must be positive");
  std::set<std::size_t> sorted(target_classes.begin(), target_classes.end());
  std::vector<std::size_t> classes(sorted.begin(), sorted.end());
  if (head_size == 0) head_size = classes.back() + 1;
  if (classes.back() >= head_size) throw ContractError("init_candidates: target class outside head");
  if (head_size < 2) throw ContractError("init_candidates: reconstruction needs a head with at least two classes");

  Rng rng = Rng::derive(seed, 0x43414E44);  // "CAND"
  CandidateSet c;
  c.xs = Tensor({m, d}, 0.0);
  for (auto& v : c.xs.values()) v = rng.normal(0.0, hp.sigma_x);
  c.labels.reserve(m);
  for (std::size_t i = 0; i < m; ++i) c.labels.push_back(classes[i % classes.size()]);
  c.lambdas = Tensor({m, head_size - 1}, kLambdaInit);
  return c;
}

ad::Var loss_rec(const ParamVector& theta, const ad::Var& xs, const ad::Var& lambdas,
                 std::span<const std::size_t> labels, double alpha) {
  const std::size_t classes = theta.num_classes();
  if (lambdas.value().cols() + 1 != classes || lambdas.value().rows() != labels.size()) {
    throw ContractError("loss_rec: lambdas " + shape_str(lambdas.shape()) + " do not fit a head of " +
                        std::to_string(classes) + " classes and " + std::to_string(labels.size()) + " candidates");
  }
  auto w = param_leaves(theta, true);
  ad::Var logits = forward_graph(w, xs, ad::SurrogateConfig{alpha});
  ad::Var weighted = ad::sum(ad::mul(ad::kkt_scatter(lambdas, labels, classes), logits));
  auto grads = ad::grad(weighted, w, /*build_graph=*/true);
  ad::Var total;
  for (std::size_t l = 0; l < grads.size(); ++l) {
    ad::Var term = ad::squared_norm(ad::sub(ad::Var::constant(theta.layer(l)), grads[l]));
    total = total.defined() ? ad::add(total, term) : term;
  }
  return total;
}

double loss_rec(const ParamVector& theta, const CandidateSet& cands, double alpha) {
  return loss_rec(theta, ad::Var::leaf(cands.xs), ad::Var::leaf(cands.lambdas), cands.labels, alpha)
      .value()
      .item();
}

ad::Var loss_lambda(const ad::Var& lambdas, double lambda_min) {
  if (!(lambda_min > 0.0)) throw ContractError("lambda_min must be positive");
  return ad::sum(ad::max_scalar(ad::neg(lambdas), -lambda_min));
}

ad::Var loss_prior(const ad::Var& xs) {
  // At most one of the two hinges is non-zero per coordinate.
  ad::Var above = ad::relu(ad::add_scalar(xs, -1.0));
  ad::Var below = ad::relu(ad::add_scalar(ad::neg(xs), -1.0));
  return ad::sum(ad::add(above, below));
}

LossComponents FullLoss::values() const {
  return {rec.value().item(), lambda.value().item(), prior.value().item(), total.value().item()};
}

FullLoss loss_full(const ParamVector& theta, const ad::Var& xs, const ad::Var& lambdas,
                   std::span<const std::size_t> labels, const ReconHyperparams& hp) {
  FullLoss f;
  f.rec = loss_rec(theta, xs, lambdas, labels, hp.alpha);
  f.lambda = loss_lambda(lambdas, hp.lambda_min);
  f.prior = loss_prior(xs);
  f.total = ad::add(ad::add(f.rec, f.lambda), f.prior);
  return f;
}

ReconResult reconstruct(const ParamVector& theta_frozen, CandidateSet init, const ReconHyperparams& hp) {
  hp.validate();
  if (init.xs.cols() != theta_frozen.layer(0).cols()) {
    throw ShapeError("reconstruct: candidate dimension " + std::to_string(init.xs.cols()) +
                     " does not match model input " + std::to_string(theta_frozen.layer(0).cols()));
  }
  ReconResult result{std::move(init), {}};
  result.trajectory.reserve(hp.n_rec + 1);
  CandidateSet& c = result.candidates;

  auto check = [](const LossComponents& v, std::size_t step) {
    if (!std::isfinite(v.full)) {
      std::ostringstream os;
      os << "reconstruction loss is not finite at step " << step << " (rec=" << v.rec << ", lambda=" << v.lambda
         << ", prior=" << v.prior << ")";
      throw NumericError(os.str());
    }
  };

  for (std::size_t step = 0; step < hp.n_rec; ++step) {
    ad::Var xs = ad::Var::leaf(c.xs);
    ad::Var lam = ad::Var::leaf(c.lambdas);
    FullLoss loss = loss_full(theta_frozen, xs, lam, c.labels, hp);
    LossComponents v = loss.values();
    check(v, step);
    result.trajectory.push_back(v);
    const ad::Var wrt[] = {xs, lam};
    auto g = ad::grad(loss.total, wrt);
    auto dx = g[0].value().values();
    auto dl = g[1].value().values();
    auto x = c.xs.values();
    auto l = c.lambdas.values();
    for (std::size_t k = 0; k < x.size(); ++k) x[k] -= hp.lr_x * dx[k];
    for (std::size_t k = 0; k < l.size(); ++k) l[k] -= hp.lr_lambda * dl[k];
  }

  {
    ad::Var xs = ad::Var::leaf(c.xs);
    ad::Var lam = ad::Var::leaf(c.lambdas);
    LossComponents v = loss_full(theta_frozen, xs, lam, c.labels, hp).values();
    check(v, hp.n_rec);
    result.trajectory.push_back(v);
  }
  return result;
}

ReconResult reconstruct(const ParamVector& theta_frozen, const ReconHyperparams& hp,
                        std::span<const std::size_t> target_classes, std::uint64_t seed) {
  if (hp.m == 0) throw ContractError("reconstruct: hp.m must be positive");
  CandidateSet init = init_candidates(hp.m, theta_frozen.layer(0).cols(), target_classes, hp, seed,
                                      theta_frozen.num_classes());
  return reconstruct(theta_frozen, std::move(init), hp);
}

std::size_t SampleCounter::total() const {
  std::size_t n = 0;
  for (auto c : per_task) n += c;
  return n;
}

void SampleCounter::add_task(const Task& task) {
  per_task.push_back(task.train.size());
  std::set<std::size_t> s(seen_classes.begin(), seen_classes.end());
  s.insert(task.head_classes.begin(), task.head_classes.end());
  seen_classes.assign(s.begin(), s.end());
}

ReclTaskOutcome recl_train_task(const ParamVector& model, const Task& task, std::size_t task_index,
                                Strategy& strategy, const ReconHyperparams& hp, Scenario scenario,
                                const SampleCounter& counter, const TrainConfig& train_cfg, std::uint64_t seed) {
  ReclTaskOutcome out;
  ParamVector current = model;
  LabeledDataset train_set = task.train;

  if (task_index > 0) {
    if (counter.seen_classes.empty() || counter.per_task.empty()) {
      throw ContractError("recl_train_task: no record of earlier tasks");
    }
    ReconHyperparams run_hp = hp;
    if (run_hp.m == 0) run_hp.m = counter.total();
    const auto t0 = std::chrono::steady_clock::now();
    const std::uint64_t rec_seed = Rng::derive(seed, 0x5245434E, task_index).next_u64();  // "RECN"
    ReconResult rec = reconstruct(model, run_hp, counter.seen_classes, rec_seed);
    out.reconstruction_seconds = seconds_since(t0);
    out.reconstructed = rec.candidates.size();
    train_set = rec.candidates.as_dataset().concat(task.train);
    out.reconstruction = std::move(rec);
  }

  current = grow_head(current, task, task_index, scenario, seed);

  // Shuffling happens per epoch inside the batch iterator.
  TaskContext ctx{task_index, &task.train, scenario, seed};
  const auto t1 = std::chrono::steady_clock::now();
  TrainOutcome trained = train_task(current, train_set, strategy, train_cfg, ctx);
  out.training_seconds = seconds_since(t1);
  out.model = std::move(trained.model);
  out.epoch_losses = std::move(trained.epoch_losses);
  return out;
}

void save_candidates(const std::filesystem::path& path, const CandidateSet& cands) {
  binio::Writer w(path);
  w.magic("RECLCND1");
  w.u64(cands.size());
  w.u64(cands.xs.cols());
  for (auto y : cands.labels) w.u64(y);
  for (double v : cands.xs.values()) w.f64(v);
  for (double v : cands.lambdas.values()) w.f64(v);
  w.finish();
}

CandidateSet load_candidates(const std::filesystem::path& path) {
  binio::Reader r(path);
  r.expect_magic("RECLCND1");
  const auto m = static_cast<std::size_t>(r.u64());
  const auto d = static_cast<std::size_t>(r.u64());
  if (m == 0 || d == 0) throw ParseError(path.string() + ": empty candidate set");
  if (r.remaining() / 8 < m + m * d) throw ParseError(path.string() + ": truncated candidate payload");
  CandidateSet c;
  c.labels.resize(m);
  for (auto& y : c.labels) y = static_cast<std::size_t>(r.u64());
  std::vector<double> xs(m * d);
  for (auto& v : xs) v = r.f64();
  c.xs = Tensor({m, d}, std::move(xs));
  const std::size_t rest = r.remaining() / 8;
  if (r.remaining() % 8 != 0 || rest % m != 0 || rest == 0) {
    throw ParseError(path.string() + ": lambda block does not divide into " + std::to_string(m) + " rows");
  }
  std::vector<double> lam(rest);
  for (auto& v : lam) v = r.f64();
  c.lambdas = Tensor({m, rest / m}, std::move(lam));
  return c;
}

}  // namespace recl
