#pragma once

#include <cstddef>
#include <map>
#include <optional>
#include <utility>

#include "recl/data.hpp"
#include "recl/model.hpp"

namespace recl {

/// acc[T][tau]: accuracy on task tau after training through task T.
/// Tasks are numbered from 1 as in the usual CL notation; entries exist only
/// for tau <= T.
class AccuracyMatrix {
 public:
  explicit AccuracyMatrix(std::size_t n_tasks = 0) : n_tasks_(n_tasks) {}

  void record(std::size_t trained_through, std::size_t evaluated, double accuracy);
  std::optional<double> get(std::size_t trained_through, std::size_t evaluated) const;
  /// Throws ContractError naming (T, tau) when absent.
  double at(std::size_t trained_through, std::size_t evaluated) const;

  std::size_t n_tasks() const noexcept { return n_tasks_; }
  std::size_t entry_count() const noexcept { return entries_.size(); }
  const std::map<std::pair<std::size_t, std::size_t>, double>& entries() const noexcept { return entries_; }

  friend bool operator==(const AccuracyMatrix&, const AccuracyMatrix&) = default;

 private:
  std::size_t n_tasks_;
  std::map<std::pair<std::size_t, std::size_t>, double> entries_;
};

/// Fraction of rows whose argmax logit (lowest index on ties) equals the label.
double evaluate(const ParamVector& model, const LabeledDataset& testset, Scenario scenario);

/// Mean of acc[T][tau] over tau = 1..T.
double compute_acc(const AccuracyMatrix& m, std::size_t T);
/// Mean of acc[T][tau] - acc[tau][tau] over tau = 1..T-1. Needs T >= 2.
double compute_bwt(const AccuracyMatrix& m, std::size_t T);

}  // namespace recl
