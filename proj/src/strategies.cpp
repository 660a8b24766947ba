#include "recl/strategies.hpp"

#include <algorithm>
#include <cmath>

#include "recl/error.hpp"
#include "recl/rng.hpp"

namespace recl {

namespace {

ParamVector grads_to_params(const std::vector<ad::Var>& grads) { return params_from_vars(grads); }

// Zero-pad each matrix of `p` to the shapes of `target`. Only extra output
// rows of the last layer are allowed to differ.
ParamVector pad_to(const ParamVector& p, std::span<const ad::Var> target) {
  if (p.num_layers() != target.size()) throw ContractError("EWC: layer count differs from anchor");
  std::vector<Tensor> out;
  for (std::size_t l = 0; l < target.size(); ++l) {
    const Tensor& src = p.layer(l);
    const Tensor& dst = target[l].value();
    const bool last = l + 1 == target.size();
    if (src.shape() == dst.shape()) {
      out.push_back(src);
      continue;
    }
    if (!last || src.cols() != dst.cols() || src.rows() > dst.rows()) {
      throw ContractError("EWC: feature layer " + std::to_string(l) + " layout " + shape_str(src.shape()) +
                          " does not match " + shape_str(dst.shape()));
    }
    Tensor padded(dst.shape(), 0.0);
    std::copy(src.storage().begin(), src.storage().end(), padded.data());
    out.push_back(std::move(padded));
  }
  return ParamVector(std::move(out));
}

}  // namespace

bool is_supported_strategy(const std::string& name) {
  return name == "finetune" || name == "ewc" || name == "er" || name == "agem" || name == "lwf";
}

std::unique_ptr<Strategy> make_strategy(const std::string& name, const StrategyParams& p, std::uint64_t seed) {
  if (name == "finetune") return std::make_unique<FinetuneStrategy>();
  if (name == "ewc") return std::make_unique<EwcStrategy>(p.ewc_lambda);
  if (name == "er") return std::make_unique<ReplayStrategy>(p.er_fraction, p.replay_finetune_epochs, seed);
  if (name == "agem") {
    return std::make_unique<AgemStrategy>(p.agem_patterns_per_experience, p.agem_reference_batch, seed);
  }
  if (name == "lwf") return std::make_unique<LwfStrategy>(p.lwf_lambda, p.lwf_temperature);
  throw ConfigError("unsupported strategy '" + name + "'");
}

ParamVector grow_head(const ParamVector& model, const Task& task, std::size_t task_index, Scenario scenario,
                      std::uint64_t seed) {
  if (scenario != Scenario::kClassIncremental || task.head_classes.empty()) return model;
  const std::size_t needed = *std::max_element(task.head_classes.begin(), task.head_classes.end()) + 1;
  if (needed <= model.num_classes()) return model;
  return expand_head(model, needed - model.num_classes(), Rng::derive(seed, 0x48454144, task_index).next_u64());
}

ParamVector cross_entropy_grad(const ParamVector& model, const LabeledDataset& data) {
  if (data.empty()) return ParamVector::zeros_like(model);
  auto w = param_leaves(model);
  ad::Var loss = ad::cross_entropy_rows(forward_graph(w, ad::Var::constant(data.features)), data.labels);
  return grads_to_params(ad::grad(loss, w));
}

// ---- EWC ------------------------------------------------------------------

ParamVector ewc_fisher(const ParamVector& model, const LabeledDataset& data) {
  ParamVector fisher = ParamVector::zeros_like(model);
  if (data.empty()) return fisher;
  for (std::size_t i = 0; i < data.size(); ++i) {
    auto w = param_leaves(model);
    ad::Var logits = forward_graph(w, ad::Var::constant(data.features.row(i)));
    // Gradient of -log p(y|x); squaring removes the sign.
    auto g = ad::grad(ad::cross_entropy_logits(logits, data.labels[i]), w);
    for (std::size_t l = 0; l < g.size(); ++l) {
      auto dst = fisher.layer(l).values();
      const auto src = g[l].value().values();
      for (std::size_t k = 0; k < dst.size(); ++k) dst[k] += src[k] * src[k];
    }
  }
  return fisher.scaled(1.0 / static_cast<double>(data.size()));
}

ad::Var ewc_penalty(std::span<const ad::Var> weights, const EwcState& state) {
  ParamVector anchor = pad_to(state.anchor, weights);
  ParamVector fisher = pad_to(state.fisher, weights);
  ad::Var total;
  for (std::size_t l = 0; l < weights.size(); ++l) {
    ad::Var diff = ad::sub(weights[l], ad::Var::constant(anchor.layer(l)));
    ad::Var term = ad::sum(ad::mul(ad::Var::constant(fisher.layer(l)), ad::mul(diff, diff)));
    total = total.defined() ? ad::add(total, term) : term;
  }
  return ad::scale(total, 0.5 * state.ewc_lambda);
}

ad::Var EwcStrategy::loss_penalty(std::span<const ad::Var> weights, const Batch&, const ad::Var&) {
  ad::Var total;
  for (const auto& s : states_) {
    ad::Var term = ewc_penalty(weights, s);
    total = total.defined() ? ad::add(total, term) : term;
  }
  return total;
}

void EwcStrategy::after_task(const ParamVector& model, const TaskContext& ctx) {
  if (!ctx.task_train) throw ContractError("EWC needs the task's training data");
  states_.push_back(EwcState{model, ewc_fisher(model, *ctx.task_train), lambda_});
}

// ---- ER -------------------------------------------------------------------

ReplayBuffer er_update(const ReplayBuffer& buffer, const LabeledDataset& task_train, std::uint64_t seed) {
  if (!(buffer.capacity_fraction > 0.0 && buffer.capacity_fraction <= 1.0)) {
    throw ContractError("replay capacity fraction must lie in (0, 1]");
  }
  ReplayBuffer out = buffer;
  const auto k = static_cast<std::size_t>(std::floor(buffer.capacity_fraction * static_cast<double>(task_train.size())));
  if (k == 0) return out;
  Rng rng = Rng::derive(seed, 0x5245504C, task_train.size());  // "REPL"
  auto picks = rng.sample_without_replacement(task_train.size(), k);
  out.samples = out.samples.concat(task_train.subset(picks));
  return out;
}

ReplayStrategy::ReplayStrategy(double fraction, std::size_t finetune_epochs, std::uint64_t seed)
    : finetune_epochs_(finetune_epochs), seed_(seed) {
  buffer_.capacity_fraction = fraction;
}

LabeledDataset ReplayStrategy::augment(const LabeledDataset& train) { return train.concat(buffer_.samples); }

void ReplayStrategy::after_task(const ParamVector&, const TaskContext& ctx) {
  if (!ctx.task_train) throw ContractError("ER needs the task's training data");
  buffer_ = er_update(buffer_, *ctx.task_train, seed_ ^ (ctx.index * 0x9E3779B97F4A7C15ull));
}

// ---- AGEM -----------------------------------------------------------------

ParamVector agem_project(const ParamVector& g, const ParamVector& g_ref) {
  if (!g.same_layout(g_ref)) throw ShapeError("agem_project: gradient layouts differ");
  const double ref_norm = g_ref.squared_norm();
  if (ref_norm == 0.0) return g;
  const double d = g.dot(g_ref);
  if (d >= 0.0) return g;
  return g.axpy(-d / ref_norm, g_ref);
}

AgemStrategy::AgemStrategy(std::size_t patterns_per_experience, std::size_t reference_batch, std::uint64_t seed)
    : patterns_(patterns_per_experience), reference_batch_(reference_batch), seed_(seed) {
  if (patterns_ == 0 || reference_batch_ == 0) throw ContractError("AGEM memory sizes must be positive");
}

ParamVector AgemStrategy::transform_grad(ParamVector grad, const ParamVector& model) {
  if (memory_.empty()) return grad;
  Rng rng = Rng::derive(seed_, 0x4147454D, steps_++);  // "AGEM"
  const std::size_t k = std::min(reference_batch_, memory_.size());
  auto picks = rng.sample_without_replacement(memory_.size(), k);
  return agem_project(grad, cross_entropy_grad(model, memory_.subset(picks)));
}

void AgemStrategy::after_task(const ParamVector&, const TaskContext& ctx) {
  if (!ctx.task_train) throw ContractError("AGEM needs the task's training data");
  const std::size_t k = std::min(patterns_, ctx.task_train->size());
  Rng rng = Rng::derive(seed_, 0x4D454D, ctx.index);  // "MEM"
  auto picks = rng.sample_without_replacement(ctx.task_train->size(), k);
  memory_ = memory_.concat(ctx.task_train->subset(picks));
}

// ---- LwF ------------------------------------------------------------------

Tensor lwf_record(const ParamVector& model, const LabeledDataset& data) {
  if (data.empty()) throw ContractError("lwf_record: empty dataset");
  return forward(model, data.features);
}

ad::Var lwf_loss(const ad::Var& current, const Tensor& recorded, double temperature, double lwf_lambda) {
  if (!(temperature > 0.0)) throw ContractError("LwF temperature must be positive");
  if (lwf_lambda < 0.0) throw ContractError("LwF lambda must be non-negative");
  const std::size_t n = recorded.rows();
  const std::size_t c_old = recorded.cols();
  if (current.value().rows() != n || current.value().cols() < c_old) {
    throw ShapeError("lwf_loss: current logits " + shape_str(current.shape()) + " vs recorded " +
                     shape_str(recorded.shape()));
  }
  ad::Var cur = current.value().cols() == c_old ? current : ad::slice_cols(current, c_old);
  Tensor targets({n, c_old}, 0.0);
  {
    ad::GradModeGuard no_graph(false);
    Tensor rec2d = recorded.reshaped({n, c_old});
    targets = ad::exp(ad::log_softmax_rows(ad::scale(ad::Var::constant(rec2d), 1.0 / temperature))).value();
  }
  ad::Var log_q = ad::log_softmax_rows(ad::scale(cur, 1.0 / temperature));
  ad::Var ce = ad::sum(ad::mul(ad::Var::constant(std::move(targets)), log_q));
  return ad::scale(ce, -lwf_lambda * temperature * temperature / static_cast<double>(n));
}

LwfStrategy::LwfStrategy(double lwf_lambda, double temperature) : lambda_(lwf_lambda), temperature_(temperature) {
  if (!(temperature > 0.0)) throw ContractError("LwF temperature must be positive");
}

void LwfStrategy::prepare_task(const ParamVector& model, const LabeledDataset& train_set, const TaskContext& ctx) {
  recorded_.reset();
  if (ctx.index == 0 || train_set.empty()) return;
  recorded_ = lwf_record(model, train_set);
}

ad::Var LwfStrategy::loss_penalty(std::span<const ad::Var>, const Batch& batch, const ad::Var& logits) {
  if (!recorded_) return {};
  return lwf_loss(logits, recorded_->take_rows(batch.indices), temperature_, lambda_);
}

// ---- training loop --------------------------------------------------------

namespace {

double run_epoch(ParamVector& model, const LabeledDataset& data, Strategy& strategy, const TrainConfig& cfg,
                 std::uint64_t seed, std::uint64_t epoch, bool with_penalty) {
  double total = 0.0;
  auto batches = batch_iter(data, cfg.batch_size, seed, epoch);
  for (const auto& batch : batches) {
    auto w = param_leaves(model);
    ad::Var logits = forward_graph(w, ad::Var::constant(batch.features));
    ad::Var loss = ad::cross_entropy_rows(logits, batch.labels);
    if (with_penalty) {
      if (ad::Var pen = strategy.loss_penalty(w, batch, logits); pen.defined()) loss = ad::add(loss, pen);
    }
    if (!std::isfinite(loss.value().item())) {
      throw NumericError("training loss became non-finite at epoch " + std::to_string(epoch));
    }
    total += loss.value().item();
    ParamVector g = grads_to_params(ad::grad(loss, w));
    g = strategy.transform_grad(std::move(g), model);
    model = sgd_step(model, g, cfg.lr);
  }
  return batches.empty() ? 0.0 : total / static_cast<double>(batches.size());
}

}  // namespace

TrainOutcome train_task(const ParamVector& model, const LabeledDataset& train_set, Strategy& strategy,
                        const TrainConfig& cfg, const TaskContext& ctx) {
  if (!(cfg.lr > 0.0)) throw ConfigError("learning rate must be positive");
  if (cfg.batch_size == 0) throw ConfigError("batch size must be positive");
  TrainOutcome out{model, {}};
  LabeledDataset data = strategy.augment(train_set);
  for (auto y : data.labels) {
    if (y >= model.num_classes()) {
      throw ContractError("train_task: label " + std::to_string(y) + " exceeds head size " +
                          std::to_string(model.num_classes()) + " (expand the head first)");
    }
  }
  strategy.prepare_task(out.model, data, ctx);
  const std::uint64_t seed = ctx.seed ^ (0xA24BAED4963EE407ull * (ctx.index + 1));
  for (std::size_t e = 0; e < cfg.epochs; ++e) {
    out.epoch_losses.push_back(run_epoch(out.model, data, strategy, cfg, seed, e, true));
  }
  if (const LabeledDataset* buffer = strategy.finetune_set(); buffer && !buffer->empty()) {
    FinetuneStrategy plain;
    for (std::size_t e = 0; e < strategy.finetune_epochs(); ++e) {
      out.epoch_losses.push_back(run_epoch(out.model, *buffer, plain, cfg, seed, cfg.epochs + e, false));
    }
  }
  strategy.after_task(out.model, ctx);
  return out;
}

}  // namespace recl
