#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "recl/autodiff.hpp"
#include "recl/data.hpp"
#include "recl/model.hpp"
#include "recl/strategies.hpp"

namespace recl {

/// Knobs of the data reconstruction problem.
struct ReconHyperparams {
  double lambda_min = 0.1;
  double sigma_x = 1e-3;
  double lr_x = 0.01;
  double lr_lambda = 0.01;
  std::size_t n_rec = 1000;
  std::size_t m = 0;  // 0: decided by the caller (sum of previous task sizes)
  double alpha = 100.0;

  void validate() const;
  friend bool operator==(const ReconHyperparams&, const ReconHyperparams&) = default;
};

/// Candidates x_i with fixed labels y_i and one coefficient per (i, j != y_i).
struct CandidateSet {
  Tensor xs;                        // m x d
  std::vector<std::size_t> labels;  // m
  Tensor lambdas;                   // m x (C - 1)

  std::size_t size() const noexcept { return labels.size(); }
  std::size_t head_size() const { return lambdas.cols() + 1; }
  LabeledDataset as_dataset() const { return LabeledDataset::make(xs, labels); }
};

struct LossComponents {
  double rec = 0.0;
  double lambda = 0.0;
  double prior = 0.0;
  double full = 0.0;
};

/// xs ~ N(0, sigma_x^2 I); labels round-robin over the sorted target classes;
/// every lambda starts at 0.1. `head_size` defaults to max(target) + 1.
CandidateSet init_candidates(std::size_t m, std::size_t d, std::span<const std::size_t> target_classes,
                             const ReconHyperparams& hp, std::uint64_t seed, std::size_t head_size = 0);

/// || theta - sum_i sum_{j != y_i} lambda_ij grad_theta (Phi_{y_i}(x_i) - Phi_j(x_i)) ||^2.
/// theta is a constant; the result is differentiable in xs and lambdas.
ad::Var loss_rec(const ParamVector& theta, const ad::Var& xs, const ad::Var& lambdas,
                 std::span<const std::size_t> labels, double alpha);
double loss_rec(const ParamVector& theta, const CandidateSet& cands, double alpha);

/// sum max(-lambda, -lambda_min).
ad::Var loss_lambda(const ad::Var& lambdas, double lambda_min);
/// sum over coordinates of the distance outside [-1, 1].
ad::Var loss_prior(const ad::Var& xs);

struct FullLoss {
  ad::Var total;
  ad::Var rec;
  ad::Var lambda;
  ad::Var prior;

  LossComponents values() const;
};

FullLoss loss_full(const ParamVector& theta, const ad::Var& xs, const ad::Var& lambdas,
                   std::span<const std::size_t> labels, const ReconHyperparams& hp);

struct ReconResult {
  CandidateSet candidates;
  /// Loss before each step plus the loss after the last step (n_rec + 1 entries).
  std::vector<LossComponents> trajectory;

  double final_loss() const { return trajectory.back().full; }
};

/// Full-batch SGD on L_full with separate step sizes for xs and lambdas.
/// Throws NumericError naming the step when the loss stops being finite.
ReconResult reconstruct(const ParamVector& theta_frozen, CandidateSet init, const ReconHyperparams& hp);
/// Initialize hp.m candidates over `target_classes`, then optimize.
ReconResult reconstruct(const ParamVector& theta_frozen, const ReconHyperparams& hp,
                        std::span<const std::size_t> target_classes, std::uint64_t seed);

/// Per-task sample counts: reconstruction sizes come from counts, not data.
struct SampleCounter {
  std::vector<std::size_t> per_task;
  std::vector<std::size_t> seen_classes;  // head indices seen so far, ascending

  std::size_t total() const;
  void add_task(const Task& task);
};

struct ReclTaskOutcome {
  ParamVector model;
  std::vector<double> epoch_losses;
  std::optional<ReconResult> reconstruction;
  std::size_t reconstructed = 0;
  double reconstruction_seconds = 0.0;
  double training_seconds = 0.0;
};

/// One task with ReCL on top of `strategy`: reconstruct from the previous
/// model (skipped for the first task), expand the head in CIL, train on the
/// union of reconstructed and current data. `counter` must describe the
/// tasks seen before this one. hp.m == 0 selects m = counter.total().
ReclTaskOutcome recl_train_task(const ParamVector& model, const Task& task, std::size_t task_index,
                                Strategy& strategy, const ReconHyperparams& hp, Scenario scenario,
                                const SampleCounter& counter, const TrainConfig& train_cfg, std::uint64_t seed);

/// Candidate dump: "RECLCND1", u64 m, u64 d, m u64 labels, m*d f64 xs, then
/// the lambdas (m x (C-1) f64). All little-endian.
void save_candidates(const std::filesystem::path& path, const CandidateSet& cands);
CandidateSet load_candidates(const std::filesystem::path& path);

}  // namespace recl
