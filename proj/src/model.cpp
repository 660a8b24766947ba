#include "recl/model.hpp"

#include <cmath>

#include "binio.hpp"
#include "recl/error.hpp"
#include "recl/rng.hpp"

namespace recl {

namespace {

constexpr std::uint64_t kHeadStream = 0x48454144;  // "HEAD"

Tensor gaussian_matrix(std::size_t rows, std::size_t cols, Rng& rng) {
  const double stddev = 1.0 / std::sqrt(static_cast<double>(cols));
  Tensor w({rows, cols}, 0.0);
  for (auto& v : w.values()) v = rng.normal(0.0, stddev);
  return w;
}

}  // namespace

void MlpSpec::validate() const {
  if (layer_sizes.size() < 2) throw ContractError("MLP needs at least input and output sizes");
  for (auto s : layer_sizes) {
    if (s == 0) throw ContractError("MLP layer sizes must be positive");
  }
  if (!(first_layer_scale > 0.0)) throw ContractError("first_layer_scale must be positive");
}

ParamVector::ParamVector(std::vector<Tensor> matrices) : matrices_(std::move(matrices)) {
  for (std::size_t i = 0; i < matrices_.size(); ++i) {
    if (matrices_[i].rank() != 2) throw ShapeError("parameter " + std::to_string(i) + " is not a matrix");
    if (i > 0 && matrices_[i].cols() != matrices_[i - 1].rows()) {
      throw ShapeError("layer " + std::to_string(i) + " input " + std::to_string(matrices_[i].cols()) +
                       " does not match previous output " + std::to_string(matrices_[i - 1].rows()));
    }
  }
}

ParamVector ParamVector::zeros_like(const ParamVector& other) {
  std::vector<Tensor> m;
  m.reserve(other.matrices_.size());
  for (const auto& t : other.matrices_) m.emplace_back(t.shape(), 0.0);
  return ParamVector(std::move(m));
}

ParamVector ParamVector::unflatten(std::span<const double> flat, std::span<const LayerSlot> layout) {
  std::vector<Tensor> m;
  std::size_t expected = 0;
  for (const auto& slot : layout) {
    if (slot.offset != expected || slot.offset + slot.rows * slot.cols > flat.size()) {
      throw ShapeError("unflatten: layout does not fit flat vector of " + std::to_string(flat.size()));
    }
    m.emplace_back(Shape{slot.rows, slot.cols},
                   std::vector<double>(flat.begin() + static_cast<std::ptrdiff_t>(slot.offset),
                                       flat.begin() + static_cast<std::ptrdiff_t>(slot.offset + slot.rows * slot.cols)));
    expected += slot.rows * slot.cols;
  }
  if (expected != flat.size()) throw ShapeError("unflatten: trailing values");
  return ParamVector(std::move(m));
}

std::vector<LayerSlot> ParamVector::layout() const {
  std::vector<LayerSlot> slots;
  std::size_t offset = 0;
  for (const auto& t : matrices_) {
    slots.push_back({offset, t.rows(), t.cols()});
    offset += t.size();
  }
  return slots;
}

std::size_t ParamVector::size() const {
  std::size_t n = 0;
  for (const auto& t : matrices_) n += t.size();
  return n;
}

std::vector<double> ParamVector::flatten() const {
  std::vector<double> flat;
  flat.reserve(size());
  for (const auto& t : matrices_) flat.insert(flat.end(), t.storage().begin(), t.storage().end());
  return flat;
}

bool ParamVector::same_layout(const ParamVector& other) const {
  if (matrices_.size() != other.matrices_.size()) return false;
  for (std::size_t i = 0; i < matrices_.size(); ++i) {
    if (matrices_[i].shape() != other.matrices_[i].shape()) return false;
  }
  return true;
}

std::vector<std::size_t> ParamVector::layer_sizes() const {
  std::vector<std::size_t> sizes;
  if (matrices_.empty()) return sizes;
  sizes.push_back(matrices_.front().cols());
  for (const auto& t : matrices_) sizes.push_back(t.rows());
  return sizes;
}

double ParamVector::dot(const ParamVector& other) const {
  if (!same_layout(other)) throw ShapeError("dot: parameter layouts differ");
  double s = 0.0;
  for (std::size_t i = 0; i < matrices_.size(); ++i) {
    const auto& a = matrices_[i].storage();
    const auto& b = other.matrices_[i].storage();
    for (std::size_t k = 0; k < a.size(); ++k) s += a[k] * b[k];
  }
  return s;
}

double ParamVector::squared_norm() const { return dot(*this); }

ParamVector ParamVector::axpy(double c, const ParamVector& other) const {
  if (!same_layout(other)) throw ShapeError("parameter layouts differ");
  ParamVector out = *this;
  for (std::size_t i = 0; i < matrices_.size(); ++i) {
    auto dst = out.matrices_[i].values();
    const auto src = other.matrices_[i].values();
    for (std::size_t k = 0; k < dst.size(); ++k) dst[k] += c * src[k];
  }
  return out;
}

ParamVector ParamVector::scaled(double c) const {
  ParamVector out = *this;
  for (auto& t : out.matrices_) {
    for (auto& v : t.values()) v *= c;
  }
  return out;
}

ParamVector sgd_step(const ParamVector& params, const ParamVector& grads, double lr) {
  if (!(lr > 0.0)) throw ContractError("sgd_step: learning rate must be positive");
  if (!params.same_layout(grads)) throw ShapeError("sgd_step: gradient layout differs from parameters");
  return params.axpy(-lr, grads);
}

ParamVector init_mlp(const MlpSpec& spec, std::uint64_t seed) {
  spec.validate();
  Rng rng(seed);
  std::vector<Tensor> m;
  for (std::size_t l = 0; l + 1 < spec.layer_sizes.size(); ++l) {
    m.push_back(gaussian_matrix(spec.layer_sizes[l + 1], spec.layer_sizes[l], rng));
  }
  for (auto& v : m.front().values()) v *= spec.first_layer_scale;
  return ParamVector(std::move(m));
}

std::vector<ad::Var> param_leaves(const ParamVector& params, bool requires_grad) {
  std::vector<ad::Var> vars;
  vars.reserve(params.num_layers());
  for (const auto& t : params.matrices()) vars.push_back(ad::Var::leaf(t, requires_grad));
  return vars;
}

ParamVector params_from_vars(std::span<const ad::Var> vars) {
  std::vector<Tensor> m;
  m.reserve(vars.size());
  for (const auto& v : vars) m.push_back(v.value());
  return ParamVector(std::move(m));
}

ad::Var forward_graph(std::span<const ad::Var> weights, const ad::Var& x,
                      const std::optional<ad::SurrogateConfig>& surrogate) {
  if (weights.empty()) throw ContractError("forward: empty parameter list");
  const Tensor& xv = x.value();
  const std::size_t d = weights.front().value().cols();
  if (xv.rank() == 1) {
    if (xv.size() != d) {
      throw ShapeError("forward: input " + shape_str(xv.shape()) + " does not match input dimension " +
                       std::to_string(d));
    }
    ad::Var h = x;
    for (std::size_t l = 0; l < weights.size(); ++l) {
      h = ad::linear_forward(weights[l], h);
      if (l + 1 < weights.size()) h = surrogate ? ad::relu(h, *surrogate) : ad::relu(h);
    }
    return h;
  }
  if (xv.cols() != d) {
    throw ShapeError("forward: batch " + shape_str(xv.shape()) + " does not match input dimension " +
                     std::to_string(d));
  }
  ad::Var h = x;
  for (std::size_t l = 0; l < weights.size(); ++l) {
    h = ad::matmul_nt(h, weights[l]);
    if (l + 1 < weights.size()) h = surrogate ? ad::relu(h, *surrogate) : ad::relu(h);
  }
  return h;
}

Tensor forward(const ParamVector& params, const Tensor& x, const std::optional<ad::SurrogateConfig>& surrogate) {
  ad::GradModeGuard no_graph(false);
  auto w = param_leaves(params, false);
  return forward_graph(w, ad::Var::constant(x), surrogate).value();
}

std::pair<Tensor, Tensor> homogeneity_check(const ParamVector& params, const Tensor& x, double c) {
  if (!(c > 0.0)) throw ContractError("homogeneity_check: scale must be positive");
  Tensor scaled_out = forward(params.scaled(c), x);
  Tensor reference = forward(params, x);
  const double factor = std::pow(c, static_cast<double>(params.num_layers()));
  for (auto& v : reference.values()) v *= factor;
  return {std::move(scaled_out), std::move(reference)};
}

ParamVector expand_head(const ParamVector& params, std::size_t extra_classes, std::uint64_t seed) {
  if (extra_classes == 0) throw ContractError("expand_head: extra_classes must be at least 1");
  ParamVector out = params;
  Tensor& head = out.layer(out.num_layers() - 1);
  Rng rng = Rng::derive(seed, kHeadStream, head.rows());
  Tensor fresh = gaussian_matrix(extra_classes, head.cols(), rng);
  head = concat_rows(head, fresh);
  return out;
}

void save_checkpoint(const std::filesystem::path& path, const MlpSpec& spec, const ParamVector& params) {
  const auto sizes = params.layer_sizes();
  binio::Writer w(path);
  w.magic("RECLMDL1");
  w.u64(sizes.size());
  for (auto s : sizes) w.u64(s);
  w.f64(spec.first_layer_scale);
  for (const auto& t : params.matrices()) {
    for (double v : t.values()) w.f64(v);
  }
  w.finish();
}

std::pair<MlpSpec, ParamVector> load_checkpoint(const std::filesystem::path& path) {
  binio::Reader r(path);
  r.expect_magic("RECLMDL1");
  const auto count = r.u64();
  if (count < 2 || count > 64) throw ParseError(path.string() + ": implausible layer count");
  MlpSpec spec;
  for (std::uint64_t i = 0; i < count; ++i) spec.layer_sizes.push_back(static_cast<std::size_t>(r.u64()));
  spec.first_layer_scale = r.f64();
  spec.validate();
  std::vector<Tensor> m;
  for (std::size_t l = 0; l + 1 < spec.layer_sizes.size(); ++l) {
    const std::size_t rows = spec.layer_sizes[l + 1];
    const std::size_t cols = spec.layer_sizes[l];
    if (r.remaining() / 8 < rows * cols) throw ParseError(path.string() + ": truncated weight matrix");
    std::vector<double> data(rows * cols);
    for (auto& v : data) v = r.f64();
    m.emplace_back(Shape{rows, cols}, std::move(data));
  }
  if (!r.at_end()) throw ParseError(path.string() + ": trailing bytes after weights");
  return {std::move(spec), ParamVector(std::move(m))};
}

}  // namespace recl
