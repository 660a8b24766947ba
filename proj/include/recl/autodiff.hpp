#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <vector>

#include "recl/tensor.hpp"

namespace recl::ad {

/// Sharpness of the smooth ReLU used in reconstruction backward passes.
struct SurrogateConfig {
  double alpha = 100.0;

  void validate() const;
};

class Var;
using BackwardFn = std::function<std::vector<Var>(const Var& grad_out)>;

/// One vertex of the computation graph. Values are computed eagerly and never
/// change afterwards.
struct Node {
  Tensor value;
  bool requires_grad = false;
  std::vector<Var> inputs;
  BackwardFn backward;
};

/// Handle to a graph node. Copies share the node.
class Var {
 public:
  Var() = default;

  /// A value that never receives gradients.
  static Var constant(Tensor value);
  /// A leaf that gradients can be taken with respect to.
  static Var leaf(Tensor value, bool requires_grad = true);

  bool defined() const noexcept { return static_cast<bool>(node_); }
  const Tensor& value() const { return node_->value; }
  const Shape& shape() const { return node_->value.shape(); }
  bool requires_grad() const noexcept { return node_ && node_->requires_grad; }
  Node* node() const noexcept { return node_.get(); }

  /// Create a node; parents are only recorded when graph recording is on and
  /// at least one input requires a gradient.
  static Var make(Tensor value, std::vector<Var> inputs, BackwardFn backward);

 private:
  explicit Var(std::shared_ptr<Node> n) : node_(std::move(n)) {}
  std::shared_ptr<Node> node_;
};

/// Whether newly created nodes record their inputs (thread-local).
bool grad_enabled() noexcept;

/// Scoped override of graph recording on the current thread.
class GradModeGuard {
 public:
  explicit GradModeGuard(bool enabled);
  ~GradModeGuard();
  GradModeGuard(const GradModeGuard&) = delete;
  GradModeGuard& operator=(const GradModeGuard&) = delete;

 private:
  bool previous_;
};

// Matrix products. Rank-1 operands are treated as columns.
Var matmul(const Var& a, const Var& b);     // a * b
Var matmul_nt(const Var& a, const Var& b);  // a * b^T
Var matmul_tn(const Var& a, const Var& b);  // a^T * b
Var transpose(const Var& a);

// Elementwise arithmetic on equal shapes.
Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);
Var neg(const Var& a);
Var scale(const Var& a, double c);
Var add_scalar(const Var& a, double c);
Var exp(const Var& a);
/// Elementwise max(a, floor).
Var max_scalar(const Var& a, double floor);

/// max(x, 0) with the exact step derivative (0 at x = 0).
Var relu(const Var& x);
/// max(x, 0) whose backward uses sigmoid(alpha * x) instead of the step.
Var relu(const Var& x, const SurrogateConfig& surrogate);
/// sigmoid(alpha * x).
Var sigmoid_scaled(const Var& x, double alpha);

/// Sum of all entries, as a one-element tensor.
Var sum(const Var& a);
/// Broadcast a one-element tensor to `shape`.
Var expand(const Var& scalar, Shape shape);
/// n x c -> n x 1 row sums.
Var row_sum(const Var& a);
/// n x 1 -> n x c by repeating each row value.
Var broadcast_cols(const Var& column, std::size_t cols);
/// Columns [0, count) of a matrix.
Var slice_cols(const Var& a, std::size_t count);
/// Append zero columns up to `cols`.
Var pad_cols(const Var& a, std::size_t cols);
/// Row-wise log-softmax of a matrix.
Var log_softmax_rows(const Var& logits);

/// Expand per-pair coefficients lambda[m x (C-1)] into a logit weight matrix
/// W[m x C] with W[i, y_i] = sum_j lambda[i, j] and W[i, other_j] = -lambda[i, j],
/// where other_j enumerates the classes != y_i in ascending order.
Var kkt_scatter(const Var& lambdas, std::span<const std::size_t> labels, std::size_t classes);
/// Adjoint of kkt_scatter: out[i, j] = W[i, y_i] - W[i, other_j].
Var kkt_gather(const Var& weights, std::span<const std::size_t> labels);

/// y = W x for W[out x in] and x[in].
Var linear_forward(const Var& weights, const Var& x);
/// -log softmax(logits)[label] for a single logit vector.
Var cross_entropy_logits(const Var& logits, std::size_t label);
/// Mean cross-entropy over the rows of an n x C logit matrix.
Var cross_entropy_rows(const Var& logits, std::span<const std::size_t> labels);
/// Sum of squared entries.
Var squared_norm(const Var& a);

/// Gradients of a scalar `output` with respect to each of `wrt`.
///
/// Unreachable inputs receive zeros. With `build_graph` the returned
/// gradients are graph nodes and may be differentiated again.
std::vector<Var> grad(const Var& output, std::span<const Var> wrt, bool build_graph = false);

inline Var operator+(const Var& a, const Var& b) { return add(a, b); }
inline Var operator-(const Var& a, const Var& b) { return sub(a, b); }
inline Var operator*(const Var& a, const Var& b) { return mul(a, b); }
inline Var operator-(const Var& a) { return neg(a); }

}  // namespace recl::ad
