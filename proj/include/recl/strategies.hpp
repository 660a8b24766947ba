#pragma once

#include <cstdint>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "recl/autodiff.hpp"
#include "recl/data.hpp"
#include "recl/model.hpp"

namespace recl {

/// What a strategy sees about the task being trained.
struct TaskContext {
  std::size_t index = 0;                      // 0-based task position
  const LabeledDataset* task_train = nullptr; // real data of this task only
  Scenario scenario = Scenario::kClassIncremental;
  std::uint64_t seed = 0;
};

struct TrainConfig {
  std::size_t epochs = 20;
  double lr = 0.2;
  std::size_t batch_size = 64;

  friend bool operator==(const TrainConfig&, const TrainConfig&) = default;
};

struct StrategyParams {
  double ewc_lambda = 100.0;
  double er_fraction = 0.1;
  std::size_t replay_finetune_epochs = 0;
  std::size_t agem_patterns_per_experience = 50;
  std::size_t agem_reference_batch = 64;
  double lwf_lambda = 1.0;
  double lwf_temperature = 2.0;

  friend bool operator==(const StrategyParams&, const StrategyParams&) = default;
};

/// Lifecycle hooks shared by every continual-learning strategy. Hooks a
/// strategy does not override leave training unchanged.
class Strategy {
 public:
  virtual ~Strategy() = default;
  virtual std::string name() const = 0;

  /// Training set actually iterated (replay strategies append their buffer).
  virtual LabeledDataset augment(const LabeledDataset& train) { return train; }
  virtual void prepare_task(const ParamVector& /*model*/, const LabeledDataset& /*train_set*/,
                            const TaskContext& /*ctx*/) {}
  /// Extra loss term for a batch; an undefined Var means none.
  virtual ad::Var loss_penalty(std::span<const ad::Var> /*weights*/, const Batch& /*batch*/,
                               const ad::Var& /*logits*/) {
    return {};
  }
  virtual ParamVector transform_grad(ParamVector grad, const ParamVector& /*model*/) { return grad; }
  virtual void after_task(const ParamVector& /*model*/, const TaskContext& /*ctx*/) {}

  /// Optional epochs over a buffer alone after the main epochs.
  virtual std::size_t finetune_epochs() const { return 0; }
  virtual const LabeledDataset* finetune_set() const { return nullptr; }
};

std::unique_ptr<Strategy> make_strategy(const std::string& name, const StrategyParams& params, std::uint64_t seed);
bool is_supported_strategy(const std::string& name);

class FinetuneStrategy final : public Strategy {
 public:
  std::string name() const override { return "finetune"; }
};

// ---- EWC ------------------------------------------------------------------

struct EwcState {
  ParamVector anchor;
  ParamVector fisher;
  double ewc_lambda = 100.0;
};

/// Diagonal empirical Fisher: mean squared gradient of log p(y | x).
ParamVector ewc_fisher(const ParamVector& model, const LabeledDataset& data);

/// (lambda / 2) * sum fisher * (theta - anchor)^2. Output rows added after the
/// anchor was taken carry zero importance.
ad::Var ewc_penalty(std::span<const ad::Var> weights, const EwcState& state);

class EwcStrategy final : public Strategy {
 public:
  explicit EwcStrategy(double ewc_lambda) : lambda_(ewc_lambda) {}
  std::string name() const override { return "ewc"; }
  ad::Var loss_penalty(std::span<const ad::Var> weights, const Batch& batch, const ad::Var& logits) override;
  void after_task(const ParamVector& model, const TaskContext& ctx) override;
  const std::vector<EwcState>& states() const { return states_; }

 private:
  double lambda_;
  std::vector<EwcState> states_;
};

// ---- ER -------------------------------------------------------------------

struct ReplayBuffer {
  LabeledDataset samples;
  double capacity_fraction = 0.1;
};

/// Append a uniform floor(fraction * n) subset of `task_train`.
ReplayBuffer er_update(const ReplayBuffer& buffer, const LabeledDataset& task_train, std::uint64_t seed);

class ReplayStrategy final : public Strategy {
 public:
  ReplayStrategy(double fraction, std::size_t finetune_epochs, std::uint64_t seed);
  std::string name() const override { return "er"; }
  LabeledDataset augment(const LabeledDataset& train) override;
  void after_task(const ParamVector& model, const TaskContext& ctx) override;
  std::size_t finetune_epochs() const override { return finetune_epochs_; }
  const LabeledDataset* finetune_set() const override { return &buffer_.samples; }
  const ReplayBuffer& buffer() const { return buffer_; }

 private:
  ReplayBuffer buffer_;
  std::size_t finetune_epochs_;
  std::uint64_t seed_;
};

// ---- AGEM -----------------------------------------------------------------

/// Project g so it does not conflict with g_ref:
/// g if g.g_ref >= 0, else g - (g.g_ref / g_ref.g_ref) g_ref.
ParamVector agem_project(const ParamVector& g, const ParamVector& g_ref);

class AgemStrategy final : public Strategy {
 public:
  AgemStrategy(std::size_t patterns_per_experience, std::size_t reference_batch, std::uint64_t seed);
  std::string name() const override { return "agem"; }
  ParamVector transform_grad(ParamVector grad, const ParamVector& model) override;
  void after_task(const ParamVector& model, const TaskContext& ctx) override;
  const LabeledDataset& memory() const { return memory_; }

 private:
  std::size_t patterns_;
  std::size_t reference_batch_;
  std::uint64_t seed_;
  std::uint64_t steps_ = 0;
  LabeledDataset memory_;
};

// ---- LwF ------------------------------------------------------------------

/// Logits of `model` on every row of `data` (n x C).
Tensor lwf_record(const ParamVector& model, const LabeledDataset& data);

/// lwf_lambda * T^2 * mean_i CE(softmax(recorded_i / T), softmax(current_i / T)).
/// When `current` has more columns than `recorded`, only the leading
/// recorded.cols() columns take part.
ad::Var lwf_loss(const ad::Var& current, const Tensor& recorded, double temperature, double lwf_lambda);

class LwfStrategy final : public Strategy {
 public:
  LwfStrategy(double lwf_lambda, double temperature);
  std::string name() const override { return "lwf"; }
  void prepare_task(const ParamVector& model, const LabeledDataset& train_set, const TaskContext& ctx) override;
  ad::Var loss_penalty(std::span<const ad::Var> weights, const Batch& batch, const ad::Var& logits) override;

 private:
  double lambda_;
  double temperature_;
  std::optional<Tensor> recorded_;
};

// ---- training loop --------------------------------------------------------

struct TrainOutcome {
  ParamVector model;
  std::vector<double> epoch_losses;  // mean batch loss per epoch
};

/// Mini-batch SGD on cross-entropy plus the strategy penalty. Calls
/// prepare_task first and after_task last.
TrainOutcome train_task(const ParamVector& model, const LabeledDataset& train_set, Strategy& strategy,
                        const TrainConfig& cfg, const TaskContext& ctx);

/// CIL: append output rows until the head covers the task's labels.
/// DIL heads never change.
ParamVector grow_head(const ParamVector& model, const Task& task, std::size_t task_index, Scenario scenario,
                      std::uint64_t seed);

/// Full-batch gradient of mean cross-entropy on `data`.
ParamVector cross_entropy_grad(const ParamVector& model, const LabeledDataset& data);

}  // namespace recl
