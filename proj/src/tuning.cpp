#include "recl/tuning.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <map>

#include "recl/error.hpp"
#include "textfmt.hpp"

namespace recl {

namespace {

constexpr double kC1 = 0.01 * 0.01;
constexpr double kC2 = 0.03 * 0.03;

// Trial t draws from its own stream so a trial's sample does not depend on
// how many trials ran before it.
ReconHyperparams trial_sample(const SearchSpace& space, const ReconHyperparams& base, std::uint64_t seed,
                              std::size_t t) {
  Rng rng = Rng::derive(seed, 0x54524941, t);  // "TRIA"
  return space.sample(rng, base);
}

std::uint64_t trial_seed(std::uint64_t seed, std::size_t t) { return Rng::derive(seed, 0x54524543, t).next_u64(); }

template <typename Better>
TuningReport run_search(std::size_t n_trials, const SearchSpace& space, const ReconHyperparams& hp_base,
                        std::uint64_t seed, double worst, Better better,
                        const std::function<double(const ReconHyperparams&, std::uint64_t)>& score_trial) {
  if (n_trials == 0) throw ContractError("tuning needs at least one trial");
  space.validate();
  TuningReport report;
  report.trials.reserve(n_trials);
  bool any = false;
  double best = worst;
  for (std::size_t t = 0; t < n_trials; ++t) {
    TrialRecord rec{t, trial_sample(space, hp_base, seed, t), worst};
    try {
      double s = score_trial(rec.hp, trial_seed(seed, t));
      if (std::isfinite(s)) rec.score = s;
    } catch (const NumericError&) {
      // Diverged trial keeps the worst score.
    }
    // Strict comparison keeps the lowest trial index on ties.
    if (std::isfinite(rec.score) && (!any || better(rec.score, best))) {
      any = true;
      best = rec.score;
      report.best_trial = t;
    }
    report.trials.push_back(rec);
  }
  if (!any) {
    report.fell_back = true;
    report.selected = tune_naive(hp_base);
    report.warning = "all " + std::to_string(n_trials) + " tuning trials diverged; using naive defaults";
  } else {
    report.selected = report.trials[report.best_trial].hp;
  }
  return report;
}

}  // namespace

void SearchSpace::validate() const {
  for (const LogRange* r : {&lambda_min, &sigma_x, &lr_x, &lr_lambda}) {
    if (!(r->lo > 0.0) || !(r->lo < r->hi)) throw ContractError("search range needs 0 < lower < upper");
  }
}

bool SearchSpace::contains(const ReconHyperparams& hp) const {
  return lambda_min.contains(hp.lambda_min) && sigma_x.contains(hp.sigma_x) && lr_x.contains(hp.lr_x) &&
         lr_lambda.contains(hp.lr_lambda);
}

ReconHyperparams SearchSpace::sample(Rng& rng, const ReconHyperparams& base) const {
  ReconHyperparams hp = base;
  hp.lambda_min = lambda_min.sample(rng);
  hp.sigma_x = sigma_x.sample(rng);
  hp.lr_x = lr_x.sample(rng);
  hp.lr_lambda = lr_lambda.sample(rng);
  return hp;
}

ReconHyperparams tune_naive(const ReconHyperparams& base) {
  ReconHyperparams hp = base;
  hp.lambda_min = 0.1;
  hp.sigma_x = 1e-3;
  hp.lr_x = 0.01;
  hp.lr_lambda = 0.01;
  hp.alpha = 100.0;
  return hp;
}

TuningReport tune_unsupervised(const ParamVector& theta_frozen, const SearchSpace& space, std::size_t n_trials,
                               const ReconHyperparams& hp_base, std::span<const std::size_t> target_classes,
                               std::uint64_t seed) {
  return run_search(
      n_trials, space, hp_base, seed, std::numeric_limits<double>::infinity(), std::less<double>{},
      [&](const ReconHyperparams& hp, std::uint64_t s) {
        return reconstruct(theta_frozen, hp, target_classes, s).final_loss();
      });
}

std::vector<std::size_t> match_nearest(const Tensor& references, const Tensor& candidates) {
  if (references.rows() == 0 || candidates.rows() == 0) throw ContractError("match_nearest: empty input");
  if (references.cols() != candidates.cols()) {
    throw ShapeError("match_nearest: dimension " + std::to_string(references.cols()) + " vs " +
                     std::to_string(candidates.cols()));
  }
  const std::size_t r = references.rows(), m = candidates.rows(), d = references.cols();
  std::vector<double> mean(d, 0.0), inv_sd(d, 1.0);
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t k = 0; k < d; ++k) mean[k] += references.at(i, k);
  for (auto& v : mean) v /= static_cast<double>(r);
  for (std::size_t k = 0; k < d; ++k) {
    double var = 0.0;
    for (std::size_t i = 0; i < r; ++i) {
      const double e = references.at(i, k) - mean[k];
      var += e * e;
    }
    const double sd = std::sqrt(var / static_cast<double>(r));
    inv_sd[k] = sd > 0.0 ? 1.0 / sd : 1.0;
  }
  auto standardize = [&](const Tensor& t) {
    Tensor out = t;
    auto v = out.values();
    for (std::size_t i = 0; i < t.rows(); ++i)
      for (std::size_t k = 0; k < d; ++k) v[i * d + k] = (v[i * d + k] - mean[k]) * inv_sd[k];
    return out;
  };
  const Tensor a = standardize(references);
  const Tensor b = standardize(candidates);
  std::vector<std::size_t> pairing(r);
  for (std::size_t i = 0; i < r; ++i) {
    double best = std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j < m; ++j) {
      double dist = 0.0;
      for (std::size_t k = 0; k < d; ++k) {
        const double e = a.at(i, k) - b.at(j, k);
        dist += e * e;
      }
      if (dist < best) {
        best = dist;
        pairing[i] = j;
      }
    }
  }
  return pairing;
}

double ssim(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size() || a.empty()) {
    throw ContractError("ssim: images must have the same non-zero size (" + std::to_string(a.size()) + " vs " +
                        std::to_string(b.size()) + ")");
  }
  const double n = static_cast<double>(a.size());
  double ma = 0.0, mb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    ma += a[i];
    mb += b[i];
  }
  ma /= n;
  mb /= n;
  double va = 0.0, vb = 0.0, cov = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double da = a[i] - ma, db = b[i] - mb;
    va += da * da;
    vb += db * db;
    cov += da * db;
  }
  va /= n;
  vb /= n;
  cov /= n;
  const double num = (2.0 * ma * mb + kC1) * (2.0 * cov + kC2);
  const double den = (ma * ma + mb * mb + kC1) * (va + vb + kC2);
  return std::clamp(num / den, -1.0, 1.0);
}

double ssim(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) {
    throw ContractError("ssim: shape mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  }
  return ssim(std::span<const double>(a.values()), std::span<const double>(b.values()));
}

void ReferenceBuffer::add_task(const LabeledDataset& task_train, std::uint64_t seed) {
  std::map<std::size_t, std::vector<std::size_t>> by_class;
  Rng rng = Rng::derive(seed, 0x52454642, samples_.size());  // "REFB"
  for (std::size_t i : rng.permutation(task_train.size())) {
    auto& rows = by_class[task_train.labels[i]];
    if (rows.size() < k_) rows.push_back(i);
  }
  std::vector<std::size_t> picked;
  for (auto& [cls, rows] : by_class) {
    std::sort(rows.begin(), rows.end());
    picked.insert(picked.end(), rows.begin(), rows.end());
  }
  samples_ = samples_.concat(task_train.subset(picked));
}

double reference_similarity(const Tensor& references, const Tensor& candidates, std::span<const double> mean) {
  const std::size_t d = references.cols();
  if (!mean.empty() && mean.size() != d) throw ShapeError("reference_similarity: mean has the wrong length");
  const auto pairing = match_nearest(references, candidates);
  std::vector<double> ref(d), cand(d);
  double total = 0.0;
  for (std::size_t i = 0; i < references.rows(); ++i) {
    const std::size_t j = pairing[i];
    double lo = std::numeric_limits<double>::infinity(), hi = -lo;
    for (std::size_t k = 0; k < d; ++k) {
      const double mk = mean.empty() ? 0.0 : mean[k];
      ref[k] = references.at(i, k) + mk;
      cand[k] = candidates.at(j, k) + mk;
      lo = std::min(lo, ref[k]);
      hi = std::max(hi, ref[k]);
    }
    if (hi > lo)
      for (auto& v : ref) v = (v - lo) / (hi - lo);
    total += ssim(ref, cand);
  }
  return total / static_cast<double>(references.rows());
}

TuningReport tune_supervised(const ParamVector& theta_frozen, const ReferenceBuffer& buffer, const SearchSpace& space,
                             std::size_t n_trials, const ReconHyperparams& hp_base,
                             std::span<const std::size_t> target_classes, std::span<const double> mean,
                             std::uint64_t seed) {
  if (buffer.empty()) {
    throw ContractError("supervised tuning needs reference samples; use the naive or unsupervised strategy instead");
  }
  const Tensor& refs = buffer.samples().features;
  return run_search(
      n_trials, space, hp_base, seed, -std::numeric_limits<double>::infinity(), std::greater<double>{},
      [&](const ReconHyperparams& hp, std::uint64_t s) {
        ReconResult r = reconstruct(theta_frozen, hp, target_classes, s);
        if (!r.candidates.xs.all_finite()) return -std::numeric_limits<double>::infinity();
        return reference_similarity(refs, r.candidates.xs, mean);
      });
}

void write_tuning_header(std::ostream& os, std::span<const std::string> prefix_names) {
  for (const auto& p : prefix_names) os << p << ',';
  os << "trial,lambda_min,sigma_x,lr_x,lr_lambda,score\n";
}

void write_tuning_rows(std::ostream& os, std::span<const std::string> prefix_values, const TuningReport& report) {
  for (const auto& t : report.trials) {
    for (const auto& p : prefix_values) os << p << ',';
    os << t.index << ',' << textfmt::number(t.hp.lambda_min) << ',' << textfmt::number(t.hp.sigma_x) << ','
       << textfmt::number(t.hp.lr_x) << ',' << textfmt::number(t.hp.lr_lambda) << ','
       << textfmt::number(t.score) << '\n';
  }
}

}  // namespace recl
