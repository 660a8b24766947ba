#include "recl/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <numeric>
#include <sstream>

#include "recl/error.hpp"

namespace recl {

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << 'x';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

std::size_t shape_numel(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

Tensor::Tensor(Shape shape, double fill) : shape_(std::move(shape)), data_(shape_numel(shape_), fill) {
  for (auto d : shape_) {
    if (d == 0) throw ShapeError("tensor dimensions must be positive, got " + shape_str(shape_));
  }
}

Tensor::Tensor(Shape shape, std::vector<double> data) : shape_(std::move(shape)), data_(std::move(data)) {
  for (auto d : shape_) {
    if (d == 0) throw ShapeError("tensor dimensions must be positive, got " + shape_str(shape_));
  }
  if (shape_numel(shape_) != data_.size()) {
    throw ShapeError("shape " + shape_str(shape_) + " does not match " + std::to_string(data_.size()) +
                     " values");
  }
}

Tensor Tensor::from_input(Shape shape, std::vector<double> data) {
  Tensor t(std::move(shape), std::move(data));
  if (!t.all_finite()) throw ContractError("input tensor contains NaN or Inf");
  return t;
}

Tensor Tensor::matrix(std::initializer_list<std::initializer_list<double>> rows) {
  const std::size_t r = rows.size();
  const std::size_t c = r ? rows.begin()->size() : 0;
  std::vector<double> data;
  data.reserve(r * c);
  for (const auto& row : rows) {
    if (row.size() != c) throw ShapeError("ragged matrix literal");
    data.insert(data.end(), row.begin(), row.end());
  }
  return from_input({r, c}, std::move(data));
}

Tensor Tensor::vector(std::initializer_list<double> values) {
  return from_input({values.size()}, std::vector<double>(values));
}

Tensor Tensor::scalar(double value) { return Tensor({1}, std::vector<double>{value}); }

std::size_t Tensor::rows() const noexcept { return shape_.empty() ? 1 : shape_[0]; }

std::size_t Tensor::cols() const noexcept {
  if (shape_.size() < 2) return 1;
  return data_.size() / shape_[0];
}

double Tensor::item() const {
  if (data_.size() != 1) throw ShapeError("item() on tensor of shape " + shape_str(shape_));
  return data_[0];
}

Tensor Tensor::reshaped(Shape shape) const { return Tensor(std::move(shape), data_); }

Tensor Tensor::row(std::size_t r) const {
  const std::size_t c = cols();
  return Tensor({c}, std::vector<double>(data_.begin() + static_cast<std::ptrdiff_t>(r * c),
                                         data_.begin() + static_cast<std::ptrdiff_t>((r + 1) * c)));
}

Tensor Tensor::take_rows(std::span<const std::size_t> indices) const {
  const std::size_t c = cols();
  std::vector<double> out;
  out.reserve(indices.size() * c);
  for (auto i : indices) {
    if (i >= rows()) throw ShapeError("row index out of range");
    out.insert(out.end(), data_.begin() + static_cast<std::ptrdiff_t>(i * c),
               data_.begin() + static_cast<std::ptrdiff_t>((i + 1) * c));
  }
  return Tensor({indices.size(), c}, std::move(out));
}

bool Tensor::all_finite() const noexcept {
  return std::all_of(data_.begin(), data_.end(), [](double v) { return std::isfinite(v); });
}

Tensor stack_rows(std::span<const Tensor> rows) {
  if (rows.empty()) throw ShapeError("stack_rows of zero rows");
  const std::size_t d = rows.front().size();
  std::vector<double> out;
  out.reserve(rows.size() * d);
  for (const auto& r : rows) {
    if (r.size() != d) throw ShapeError("stack_rows: row lengths differ");
    out.insert(out.end(), r.storage().begin(), r.storage().end());
  }
  return Tensor({rows.size(), d}, std::move(out));
}

Tensor concat_rows(const Tensor& a, const Tensor& b) {
  if (a.empty()) return b;
  if (b.empty()) return a;
  if (a.cols() != b.cols()) {
    throw ShapeError("concat_rows: " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  }
  std::vector<double> out(a.storage());
  out.insert(out.end(), b.storage().begin(), b.storage().end());
  return Tensor({a.rows() + b.rows(), a.cols()}, std::move(out));
}

}  // namespace recl
