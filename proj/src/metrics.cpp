#include "recl/metrics.hpp"

#include <string>

#include "recl/error.hpp"

namespace recl {

void AccuracyMatrix::record(std::size_t trained_through, std::size_t evaluated, double accuracy) {
  if (evaluated == 0 || trained_through == 0 || evaluated > trained_through) {
    throw ContractError("accuracy entries need 1 <= tau <= T");
  }
  if (n_tasks_ && trained_through > n_tasks_) throw ContractError("task index beyond matrix size");
  if (!(accuracy >= 0.0 && accuracy <= 1.0)) throw ContractError("accuracy must lie in [0, 1]");
  entries_[{trained_through, evaluated}] = accuracy;
}

std::optional<double> AccuracyMatrix::get(std::size_t trained_through, std::size_t evaluated) const {
  auto it = entries_.find({trained_through, evaluated});
  if (it == entries_.end()) return std::nullopt;
  return it->second;
}

double AccuracyMatrix::at(std::size_t trained_through, std::size_t evaluated) const {
  auto v = get(trained_through, evaluated);
  if (!v) {
    throw ContractError("missing accuracy entry (T=" + std::to_string(trained_through) +
                        ", tau=" + std::to_string(evaluated) + ")");
  }
  return *v;
}

double evaluate(const ParamVector& model, const LabeledDataset& testset, Scenario /*scenario*/) {
  if (testset.empty()) throw ContractError("evaluate: empty test set");
  const std::size_t classes = model.num_classes();
  for (auto y : testset.labels) {
    if (y >= classes) {
      throw ContractError("evaluate: label " + std::to_string(y) + " outside head of " + std::to_string(classes));
    }
  }
  const Tensor logits = forward(model, testset.features);
  std::size_t correct = 0;
  for (std::size_t i = 0; i < testset.size(); ++i) {
    std::size_t best = 0;
    for (std::size_t j = 1; j < classes; ++j) {
      if (logits.at(i, j) > logits.at(i, best)) best = j;
    }
    if (best == testset.labels[i]) ++correct;
  }
  return static_cast<double>(correct) / static_cast<double>(testset.size());
}

double compute_acc(const AccuracyMatrix& m, std::size_t T) {
  if (T == 0) throw ContractError("compute_acc: T must be at least 1");
  double total = 0.0;
  for (std::size_t tau = 1; tau <= T; ++tau) total += m.at(T, tau);
  return total / static_cast<double>(T);
}

double compute_bwt(const AccuracyMatrix& m, std::size_t T) {
  if (T < 2) throw ContractError("compute_bwt: backward transfer is undefined for fewer than two tasks");
  double total = 0.0;
  for (std::size_t tau = 1; tau < T; ++tau) total += m.at(T, tau) - m.at(tau, tau);
  return total / static_cast<double>(T - 1);
}

}  // namespace recl
