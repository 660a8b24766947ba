#include "recl/autodiff.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <unordered_map>
#include <unordered_set>

#include "recl/error.hpp"

namespace recl::ad {

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using ConstMap = Eigen::Map<const RowMat>;
using MutMap = Eigen::Map<RowMat>;

thread_local bool g_grad_enabled = true;
// Nodes on a path to the requested inputs of the running grad() call.
thread_local const std::unordered_set<Node*>* g_needed = nullptr;

// Whether a backward rule should produce the gradient for input `v`.
bool wants(const Var& v) { return v.requires_grad() && (!g_needed || g_needed->count(v.node())); }

ConstMap as_mat(const Tensor& t) {
  return ConstMap(t.data(), static_cast<Eigen::Index>(t.rows()), static_cast<Eigen::Index>(t.cols()));
}

Tensor like(const Tensor& t) { return Tensor(t.shape(), 0.0); }

void require_same_shape(const Var& a, const Var& b, const char* op) {
  if (a.value().size() != b.value().size() || a.value().rows() != b.value().rows()) {
    throw ShapeError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                     shape_str(b.shape()));
  }
}

template <class F>
Tensor map_unary(const Tensor& x, F f) {
  Tensor out = like(x);
  const double* in = x.data();
  double* o = out.data();
  for (std::size_t i = 0; i < x.size(); ++i) o[i] = f(in[i]);
  return out;
}

template <class F>
Tensor map_binary(const Tensor& a, const Tensor& b, F f) {
  Tensor out = like(a);
  const double* pa = a.data();
  const double* pb = b.data();
  double* o = out.data();
  for (std::size_t i = 0; i < a.size(); ++i) o[i] = f(pa[i], pb[i]);
  return out;
}

Tensor product(const Tensor& a, bool ta, const Tensor& b, bool tb) {
  const std::size_t ar = ta ? a.cols() : a.rows();
  const std::size_t ac = ta ? a.rows() : a.cols();
  const std::size_t br = tb ? b.cols() : b.rows();
  const std::size_t bc = tb ? b.rows() : b.cols();
  if (ac != br) {
    throw ShapeError("matmul: inner dimensions disagree for " + shape_str(a.shape()) + " and " +
                     shape_str(b.shape()));
  }
  Tensor out({ar, bc}, 0.0);
  MutMap o(out.data(), static_cast<Eigen::Index>(ar), static_cast<Eigen::Index>(bc));
  auto ma = as_mat(a);
  auto mb = as_mat(b);
  if (!ta && !tb) {
    o.noalias() = ma * mb;
  } else if (!ta && tb) {
    o.noalias() = ma * mb.transpose();
  } else if (ta && !tb) {
    o.noalias() = ma.transpose() * mb;
  } else {
    o.noalias() = ma.transpose() * mb.transpose();
  }
  return out;
}

Var reshape(const Var& a, Shape shape) {
  Shape original = a.shape();
  return Var::make(a.value().reshaped(std::move(shape)), {a},
                   [original](const Var& g) { return std::vector<Var>{reshape(g, original)}; });
}

Var as_matrix_view(const Var& a) {
  if (a.value().rank() == 2) return a;
  return reshape(a, {a.value().rows(), a.value().cols()});
}

}  // namespace

void SurrogateConfig::validate() const {
  if (!(alpha > 0.0) || !std::isfinite(alpha)) {
    throw ContractError("surrogate alpha must be positive, got " + std::to_string(alpha));
  }
}

Var Var::constant(Tensor value) {
  auto n = std::make_shared<Node>();
  n->value = std::move(value);
  return Var(std::move(n));
}

Var Var::leaf(Tensor value, bool requires_grad) {
  auto n = std::make_shared<Node>();
  n->value = std::move(value);
  n->requires_grad = requires_grad;
  return Var(std::move(n));
}

Var Var::make(Tensor value, std::vector<Var> inputs, BackwardFn backward) {
  auto n = std::make_shared<Node>();
  n->value = std::move(value);
  const bool track =
      g_grad_enabled && std::any_of(inputs.begin(), inputs.end(), [](const Var& v) { return v.requires_grad(); });
  if (track) {
    n->requires_grad = true;
    n->inputs = std::move(inputs);
    n->backward = std::move(backward);
  }
  return Var(std::move(n));
}

bool grad_enabled() noexcept { return g_grad_enabled; }

GradModeGuard::GradModeGuard(bool enabled) : previous_(g_grad_enabled) { g_grad_enabled = enabled; }
GradModeGuard::~GradModeGuard() { g_grad_enabled = previous_; }

Var matmul(const Var& a, const Var& b) {
  return Var::make(product(a.value(), false, b.value(), false), {a, b}, [a, b](const Var& g) {
    std::vector<Var> out(2);
    if (wants(a)) out[0] = reshape(matmul_nt(g, b), a.shape());
    if (wants(b)) out[1] = reshape(matmul_tn(a, g), b.shape());
    return out;
  });
}

Var matmul_nt(const Var& a, const Var& b) {
  return Var::make(product(a.value(), false, b.value(), true), {a, b}, [a, b](const Var& g) {
    std::vector<Var> out(2);
    if (wants(a)) out[0] = reshape(matmul(g, b), a.shape());
    if (wants(b)) out[1] = reshape(matmul_tn(g, a), b.shape());
    return out;
  });
}

Var matmul_tn(const Var& a, const Var& b) {
  return Var::make(product(a.value(), true, b.value(), false), {a, b}, [a, b](const Var& g) {
    std::vector<Var> out(2);
    if (wants(a)) out[0] = reshape(matmul_nt(b, g), a.shape());
    if (wants(b)) out[1] = reshape(matmul(a, g), b.shape());
    return out;
  });
}

Var transpose(const Var& a) {
  const Tensor& v = a.value();
  Tensor out({v.cols(), v.rows()}, 0.0);
  MutMap(out.data(), static_cast<Eigen::Index>(v.cols()), static_cast<Eigen::Index>(v.rows())) =
      as_mat(v).transpose();
  Shape original = a.shape();
  return Var::make(std::move(out), {a}, [original](const Var& g) {
    return std::vector<Var>{reshape(transpose(g), original)};
  });
}

Var add(const Var& a, const Var& b) {
  require_same_shape(a, b, "add");
  return Var::make(map_binary(a.value(), b.value(), std::plus<>()), {a, b},
                   [](const Var& g) { return std::vector<Var>{g, g}; });
}

Var sub(const Var& a, const Var& b) {
  require_same_shape(a, b, "sub");
  return Var::make(map_binary(a.value(), b.value(), std::minus<>()), {a, b}, [b](const Var& g) {
    std::vector<Var> out{g, Var()};
    if (wants(b)) out[1] = neg(g);
    return out;
  });
}

Var mul(const Var& a, const Var& b) {
  require_same_shape(a, b, "mul");
  return Var::make(map_binary(a.value(), b.value(), std::multiplies<>()), {a, b}, [a, b](const Var& g) {
    std::vector<Var> out(2);
    if (wants(a)) out[0] = mul(g, b);
    if (wants(b)) out[1] = mul(g, a);
    return out;
  });
}

Var neg(const Var& a) { return scale(a, -1.0); }

Var scale(const Var& a, double c) {
  return Var::make(map_unary(a.value(), [c](double x) { return c * x; }), {a},
                   [c](const Var& g) { return std::vector<Var>{scale(g, c)}; });
}

Var add_scalar(const Var& a, double c) {
  return Var::make(map_unary(a.value(), [c](double x) { return x + c; }), {a},
                   [](const Var& g) { return std::vector<Var>{g}; });
}

Var exp(const Var& a) {
  return Var::make(map_unary(a.value(), [](double x) { return std::exp(x); }), {a},
                   [a](const Var& g) { return std::vector<Var>{mul(g, exp(a))}; });
}

Var max_scalar(const Var& a, double floor) {
  return Var::make(map_unary(a.value(), [floor](double x) { return std::max(x, floor); }), {a},
                   [a, floor](const Var& g) {
                     Var mask = Var::constant(map_unary(a.value(), [floor](double x) { return x > floor ? 1.0 : 0.0; }));
                     return std::vector<Var>{mul(g, mask)};
                   });
}

Var relu(const Var& x) {
  return Var::make(map_unary(x.value(), [](double v) { return v > 0.0 ? v : 0.0; }), {x}, [x](const Var& g) {
    Var mask = Var::constant(map_unary(x.value(), [](double v) { return v > 0.0 ? 1.0 : 0.0; }));
    return std::vector<Var>{mul(g, mask)};
  });
}

Var relu(const Var& x, const SurrogateConfig& surrogate) {
  surrogate.validate();
  const double alpha = surrogate.alpha;
  return Var::make(map_unary(x.value(), [](double v) { return v > 0.0 ? v : 0.0; }), {x},
                   [x, alpha](const Var& g) { return std::vector<Var>{mul(g, sigmoid_scaled(x, alpha))}; });
}

Var sigmoid_scaled(const Var& x, double alpha) {
  auto sig = [alpha](double v) {
    const double z = alpha * v;
    if (z >= 0.0) return 1.0 / (1.0 + std::exp(-z));
    const double e = std::exp(z);
    return e / (1.0 + e);
  };
  return Var::make(map_unary(x.value(), sig), {x}, [x, alpha](const Var& g) {
    // d/dx sigmoid(alpha x) = alpha * s * (1 - s)
    Var s = sigmoid_scaled(x, alpha);
    Var ds = scale(mul(s, add_scalar(neg(s), 1.0)), alpha);
    return std::vector<Var>{mul(g, ds)};
  });
}

Var sum(const Var& a) {
  double total = 0.0;
  for (double v : a.value().values()) total += v;
  Shape shape = a.shape();
  return Var::make(Tensor::scalar(total), {a},
                   [shape](const Var& g) { return std::vector<Var>{expand(g, shape)}; });
}

Var expand(const Var& scalar, Shape shape) {
  if (scalar.value().size() != 1) throw ShapeError("expand needs a one-element tensor");
  return Var::make(Tensor(std::move(shape), scalar.value()[0]), {scalar},
                   [](const Var& g) { return std::vector<Var>{sum(g)}; });
}

Var row_sum(const Var& a) {
  const Tensor& v = a.value();
  const std::size_t r = v.rows();
  const std::size_t c = v.cols();
  Tensor out({r, 1}, 0.0);
  for (std::size_t i = 0; i < r; ++i) {
    double s = 0.0;
    for (std::size_t j = 0; j < c; ++j) s += v[i * c + j];
    out[i] = s;
  }
  return Var::make(std::move(out), {a}, [c](const Var& g) { return std::vector<Var>{broadcast_cols(g, c)}; });
}

Var broadcast_cols(const Var& column, std::size_t cols) {
  const Tensor& v = column.value();
  if (v.cols() != 1) throw ShapeError("broadcast_cols expects an n x 1 column, got " + shape_str(v.shape()));
  const std::size_t r = v.rows();
  Tensor out({r, cols}, 0.0);
  for (std::size_t i = 0; i < r; ++i) {
    for (std::size_t j = 0; j < cols; ++j) out[i * cols + j] = v[i];
  }
  Shape original = column.shape();
  return Var::make(std::move(out), {column},
                   [original](const Var& g) { return std::vector<Var>{reshape(row_sum(g), original)}; });
}

Var slice_cols(const Var& a, std::size_t count) {
  const Tensor& v = a.value();
  const std::size_t r = v.rows();
  const std::size_t c = v.cols();
  if (count == 0 || count > c) throw ShapeError("slice_cols: bad column count");
  Tensor out({r, count}, 0.0);
  for (std::size_t i = 0; i < r; ++i) {
    for (std::size_t j = 0; j < count; ++j) out[i * count + j] = v[i * c + j];
  }
  return Var::make(std::move(out), {a}, [c](const Var& g) { return std::vector<Var>{pad_cols(g, c)}; });
}

Var pad_cols(const Var& a, std::size_t cols) {
  const Tensor& v = a.value();
  const std::size_t r = v.rows();
  const std::size_t c = v.cols();
  if (cols < c) throw ShapeError("pad_cols: target narrower than input");
  Tensor out({r, cols}, 0.0);
  for (std::size_t i = 0; i < r; ++i) {
    for (std::size_t j = 0; j < c; ++j) out[i * cols + j] = v[i * c + j];
  }
  return Var::make(std::move(out), {a}, [c](const Var& g) { return std::vector<Var>{slice_cols(g, c)}; });
}

Var log_softmax_rows(const Var& logits) {
  Var m = as_matrix_view(logits);
  const Tensor& v = m.value();
  const std::size_t r = v.rows();
  const std::size_t c = v.cols();
  Tensor out({r, c}, 0.0);
  for (std::size_t i = 0; i < r; ++i) {
    const double* row = v.data() + i * c;
    const double mx = *std::max_element(row, row + c);
    double s = 0.0;
    for (std::size_t j = 0; j < c; ++j) s += std::exp(row[j] - mx);
    const double lse = mx + std::log(s);
    for (std::size_t j = 0; j < c; ++j) out[i * c + j] = row[j] - lse;
  }
  return Var::make(std::move(out), {m}, [m, c](const Var& g) {
    // g - softmax * rowsum(g)
    Var softmax = exp(log_softmax_rows(m));
    return std::vector<Var>{sub(g, mul(softmax, broadcast_cols(row_sum(g), c)))};
  });
}

Var kkt_scatter(const Var& lambdas, std::span<const std::size_t> labels, std::size_t classes) {
  const Tensor& l = lambdas.value();
  const std::size_t m = labels.size();
  if (classes < 2) throw ContractError("kkt_scatter needs at least two classes");
  if (l.rows() != m || l.cols() != classes - 1) {
    throw ContractError("lambda shape " + shape_str(l.shape()) + " does not match " + std::to_string(m) + " x " +
                        std::to_string(classes - 1));
  }
  Tensor out({m, classes}, 0.0);
  for (std::size_t i = 0; i < m; ++i) {
    const std::size_t y = labels[i];
    if (y >= classes) throw ContractError("kkt_scatter: label out of range");
    double total = 0.0;
    std::size_t k = 0;
    for (std::size_t j = 0; j < classes; ++j) {
      if (j == y) continue;
      const double lam = l[i * (classes - 1) + k];
      out[i * classes + j] = -lam;
      total += lam;
      ++k;
    }
    out[i * classes + y] = total;
  }
  std::vector<std::size_t> lab(labels.begin(), labels.end());
  return Var::make(std::move(out), {lambdas},
                   [lab](const Var& g) { return std::vector<Var>{kkt_gather(g, lab)}; });
}

Var kkt_gather(const Var& weights, std::span<const std::size_t> labels) {
  const Tensor& w = weights.value();
  const std::size_t m = labels.size();
  const std::size_t classes = w.cols();
  if (w.rows() != m || classes < 2) throw ShapeError("kkt_gather: shape " + shape_str(w.shape()));
  Tensor out({m, classes - 1}, 0.0);
  for (std::size_t i = 0; i < m; ++i) {
    const std::size_t y = labels[i];
    std::size_t k = 0;
    for (std::size_t j = 0; j < classes; ++j) {
      if (j == y) continue;
      out[i * (classes - 1) + k] = w[i * classes + y] - w[i * classes + j];
      ++k;
    }
  }
  std::vector<std::size_t> lab(labels.begin(), labels.end());
  return Var::make(std::move(out), {weights},
                   [lab, classes](const Var& g) { return std::vector<Var>{kkt_scatter(g, lab, classes)}; });
}

Var linear_forward(const Var& weights, const Var& x) {
  const Tensor& w = weights.value();
  if (w.rank() != 2) throw ShapeError("linear_forward: weights must be a matrix, got " + shape_str(w.shape()));
  if (x.value().rank() != 1 || w.cols() != x.value().size()) {
    throw ShapeError("linear_forward: weights " + shape_str(w.shape()) + " incompatible with input " +
                     shape_str(x.shape()));
  }
  return reshape(matmul(weights, x), {w.rows()});
}

Var cross_entropy_logits(const Var& logits, std::size_t label) {
  const std::size_t c = logits.value().size();
  if (label >= c) {
    throw std::out_of_range("cross_entropy_logits: label " + std::to_string(label) + " outside " +
                            std::to_string(c) + " classes");
  }
  Var row = reshape(logits, {1, c});
  const std::size_t labels[] = {label};
  return cross_entropy_rows(row, labels);
}

Var cross_entropy_rows(const Var& logits, std::span<const std::size_t> labels) {
  const std::size_t n = logits.value().rows();
  const std::size_t c = logits.value().cols();
  if (labels.size() != n) throw ShapeError("cross_entropy_rows: label count differs from rows");
  Tensor onehot({n, c}, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    if (labels[i] >= c) {
      throw std::out_of_range("cross_entropy: label " + std::to_string(labels[i]) + " outside " +
                              std::to_string(c) + " classes");
    }
    onehot[i * c + labels[i]] = 1.0;
  }
  Var picked = sum(mul(log_softmax_rows(logits), Var::constant(std::move(onehot))));
  return scale(picked, -1.0 / static_cast<double>(n));
}

Var squared_norm(const Var& a) { return sum(mul(a, a)); }

std::vector<Var> grad(const Var& output, std::span<const Var> wrt, bool build_graph) {
  if (!output.defined() || output.value().size() != 1) {
    throw ContractError("grad: output must be a scalar, got " +
                        (output.defined() ? shape_str(output.shape()) : std::string("undefined")));
  }

  // Post-order DFS over nodes that carry gradients.
  std::vector<Node*> order;
  if (output.requires_grad()) {
    std::unordered_set<Node*> visited;
    std::vector<std::pair<Node*, std::size_t>> stack{{output.node(), 0}};
    visited.insert(output.node());
    while (!stack.empty()) {
      auto& [node, next] = stack.back();
      if (next < node->inputs.size()) {
        Node* child = node->inputs[next++].node();
        if (child->requires_grad && visited.insert(child).second) stack.emplace_back(child, 0);
      } else {
        order.push_back(node);
        stack.pop_back();
      }
    }
  }

  // Keep only nodes from which some requested input is reachable; children
  // precede parents in `order`.
  std::unordered_set<Node*> needed;
  for (const Var& w : wrt)
    if (w.defined()) needed.insert(w.node());
  for (Node* node : order) {
    if (needed.count(node)) continue;
    for (const Var& in : node->inputs) {
      if (needed.count(in.node())) {
        needed.insert(node);
        break;
      }
    }
  }
  struct NeededScope {
    const std::unordered_set<Node*>* saved = g_needed;
    ~NeededScope() { g_needed = saved; }
  } scope;
  g_needed = &needed;

  GradModeGuard mode(build_graph);
  std::unordered_map<Node*, Var> grads;
  if (output.requires_grad()) grads[output.node()] = Var::constant(Tensor(output.shape(), 1.0));

  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node* node = *it;
    auto found = grads.find(node);
    if (found == grads.end() || !node->backward || !needed.count(node)) continue;
    const Var g = found->second;
    std::vector<Var> parts = node->backward(g);
    for (std::size_t i = 0; i < node->inputs.size(); ++i) {
      const Var& input = node->inputs[i];
      if (!needed.count(input.node()) || i >= parts.size() || !parts[i].defined()) continue;
      auto [slot, inserted] = grads.try_emplace(input.node(), parts[i]);
      if (!inserted) slot->second = add(slot->second, parts[i]);
    }
  }

  std::vector<Var> result;
  result.reserve(wrt.size());
  for (const Var& w : wrt) {
    auto found = grads.find(w.node());
    if (found != grads.end()) {
      result.push_back(found->second);
    } else {
      result.push_back(Var::constant(Tensor(w.shape(), 0.0)));
    }
  }
  return result;
}

}  // namespace recl::ad
