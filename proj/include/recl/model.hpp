#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <utility>
#include <vector>

#include "recl/autodiff.hpp"
#include "recl/tensor.hpp"

namespace recl {

/// Bias-free MLP layout [D, h_1, ..., h_k, C].
struct MlpSpec {
  std::vector<std::size_t> layer_sizes;
  double first_layer_scale = 1e-4;

  /// Number of weight matrices (the homogeneity degree L).
  std::size_t depth() const noexcept { return layer_sizes.empty() ? 0 : layer_sizes.size() - 1; }
  std::size_t input_dim() const { return layer_sizes.front(); }
  std::size_t num_classes() const { return layer_sizes.back(); }
  void validate() const;

  friend bool operator==(const MlpSpec&, const MlpSpec&) = default;
};

/// Offsets of one weight matrix inside the flat parameter view.
struct LayerSlot {
  std::size_t offset;
  std::size_t rows;
  std::size_t cols;
};

/// Trainable parameters of a bias-free MLP: one [out x in] matrix per layer.
class ParamVector {
 public:
  ParamVector() = default;
  explicit ParamVector(std::vector<Tensor> matrices);

  static ParamVector zeros_like(const ParamVector& other);
  /// Rebuild matrices from a flat vector using `layout`.
  static ParamVector unflatten(std::span<const double> flat, std::span<const LayerSlot> layout);

  const std::vector<Tensor>& matrices() const noexcept { return matrices_; }
  std::vector<Tensor>& matrices() noexcept { return matrices_; }
  std::size_t num_layers() const noexcept { return matrices_.size(); }
  const Tensor& layer(std::size_t i) const { return matrices_.at(i); }
  Tensor& layer(std::size_t i) { return matrices_.at(i); }

  std::vector<LayerSlot> layout() const;
  std::size_t size() const;
  std::vector<double> flatten() const;
  bool same_layout(const ParamVector& other) const;

  /// Layer sizes implied by the matrices, [D, ..., C].
  std::vector<std::size_t> layer_sizes() const;
  std::size_t num_classes() const { return matrices_.back().rows(); }

  double dot(const ParamVector& other) const;
  double squared_norm() const;
  /// this + c * other
  ParamVector axpy(double c, const ParamVector& other) const;
  ParamVector scaled(double c) const;

  friend bool operator==(const ParamVector&, const ParamVector&) = default;

 private:
  std::vector<Tensor> matrices_;
};

/// theta - lr * g. Plain SGD without momentum or weight decay.
ParamVector sgd_step(const ParamVector& params, const ParamVector& grads, double lr);

/// Gaussian weights with std 1/sqrt(fan_in); the first layer is then scaled
/// by spec.first_layer_scale.
ParamVector init_mlp(const MlpSpec& spec, std::uint64_t seed);

/// Graph leaves for every weight matrix.
std::vector<ad::Var> param_leaves(const ParamVector& params, bool requires_grad = true);
ParamVector params_from_vars(std::span<const ad::Var> vars);

/// Logits for a batch X[n x D] (or a single x[D]) as a graph. ReLU after every
/// layer but the last; `surrogate` switches the ReLU backward to the smooth form.
ad::Var forward_graph(std::span<const ad::Var> weights, const ad::Var& x,
                      const std::optional<ad::SurrogateConfig>& surrogate = std::nullopt);

/// Logits without graph recording. Rank-1 input gives rank-1 output [C];
/// an n x D matrix gives n x C.
Tensor forward(const ParamVector& params, const Tensor& x,
               const std::optional<ad::SurrogateConfig>& surrogate = std::nullopt);

/// (Phi(c theta; x), c^L Phi(theta; x)).
std::pair<Tensor, Tensor> homogeneity_check(const ParamVector& params, const Tensor& x, double c);

/// Append `extra_classes` freshly initialized rows to the output layer.
/// Existing rows are copied bit-exactly.
ParamVector expand_head(const ParamVector& params, std::size_t extra_classes, std::uint64_t seed);

/// Checkpoint file: "RECLMDL1", u64 layer count, u64 sizes, f64 first_layer_scale,
/// then every matrix row-major. All little-endian.
void save_checkpoint(const std::filesystem::path& path, const MlpSpec& spec, const ParamVector& params);
std::pair<MlpSpec, ParamVector> load_checkpoint(const std::filesystem::path& path);

}  // namespace recl
