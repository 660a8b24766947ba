#pragma once

#include <cstdint>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include "recl/data.hpp"
#include "recl/model.hpp"
#include "recl/reconstruction.hpp"
#include "recl/rng.hpp"

namespace recl {

/// Closed interval sampled log-uniformly.
struct LogRange {
  double lo;
  double hi;

  double sample(Rng& rng) const { return rng.log_uniform(lo, hi); }
  bool contains(double v) const { return v >= lo && v <= hi; }
};

struct SearchSpace {
  LogRange lambda_min{0.01, 0.5};
  LogRange sigma_x{1e-5, 1.0};
  LogRange lr_x{1e-5, 1.0};
  LogRange lr_lambda{1e-5, 1.0};

  void validate() const;
  bool contains(const ReconHyperparams& hp) const;
  /// Draws the four searched values; everything else comes from `base`.
  ReconHyperparams sample(Rng& rng, const ReconHyperparams& base) const;
};

/// Defaults for the searched values; n_rec, m and alpha are taken from `base`.
ReconHyperparams tune_naive(const ReconHyperparams& base = {});

struct TrialRecord {
  std::size_t index = 0;
  ReconHyperparams hp;
  double score = 0.0;  // final L_full (unsupervised) or mean SSIM (supervised)
};

struct TuningReport {
  ReconHyperparams selected;
  std::vector<TrialRecord> trials;
  std::size_t best_trial = 0;
  bool fell_back = false;  // no usable trial, naive defaults returned
  std::string warning;
};

/// Random search minimizing the final L_full. Non-finite trials score +inf.
TuningReport tune_unsupervised(const ParamVector& theta_frozen, const SearchSpace& space, std::size_t n_trials,
                               const ReconHyperparams& hp_base, std::span<const std::size_t> target_classes,
                               std::uint64_t seed);

/// Reference index -> nearest candidate index after standardizing both sets
/// with the references' per-coordinate mean and standard deviation.
std::vector<std::size_t> match_nearest(const Tensor& references, const Tensor& candidates);

/// Global single-window SSIM with C1 = 0.01^2 and C2 = 0.03^2.
double ssim(std::span<const double> a, std::span<const double> b);
double ssim(const Tensor& a, const Tensor& b);

/// Real samples kept for supervised tuning, k per class and task.
class ReferenceBuffer {
 public:
  explicit ReferenceBuffer(std::size_t k_per_class = 10) : k_(k_per_class) {}
  void add_task(const LabeledDataset& task_train, std::uint64_t seed);
  bool empty() const noexcept { return samples_.empty(); }
  std::size_t size() const noexcept { return samples_.size(); }
  const LabeledDataset& samples() const noexcept { return samples_; }
  std::size_t k_per_class() const noexcept { return k_; }

 private:
  std::size_t k_;
  LabeledDataset samples_;
};

/// Mean SSIM between every reference and its nearest candidate, after adding
/// `mean` back to both and min-max stretching each reference to [0, 1].
double reference_similarity(const Tensor& references, const Tensor& candidates, std::span<const double> mean);

/// Random search maximizing reference_similarity. Non-finite trials score -inf.
TuningReport tune_supervised(const ParamVector& theta_frozen, const ReferenceBuffer& buffer, const SearchSpace& space,
                             std::size_t n_trials, const ReconHyperparams& hp_base,
                             std::span<const std::size_t> target_classes, std::span<const double> mean,
                             std::uint64_t seed);

/// CSV header and rows for a tuning log; `prefix` columns come first.
void write_tuning_header(std::ostream& os, std::span<const std::string> prefix_names);
void write_tuning_rows(std::ostream& os, std::span<const std::string> prefix_values, const TuningReport& report);

}  // namespace recl
