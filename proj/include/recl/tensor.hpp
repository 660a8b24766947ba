#pragma once

#include <cstddef>
#include <initializer_list>
#include <span>
#include <string>
#include <vector>

namespace recl {

using Shape = std::vector<std::size_t>;

std::string shape_str(const Shape& shape);
std::size_t shape_numel(const Shape& shape);

/// Dense row-major tensor of doubles.
///
/// Values are plain data; a Tensor never aliases another. Most of the code
/// base treats tensors as matrices (rank 2) or vectors (rank 1). A rank-1
/// tensor of length n is interpreted as an n x 1 column where a matrix is
/// required.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape, double fill = 0.0);
  Tensor(Shape shape, std::vector<double> data);

  /// Build from caller data and reject NaN/Inf entries.
  static Tensor from_input(Shape shape, std::vector<double> data);
  static Tensor matrix(std::initializer_list<std::initializer_list<double>> rows);
  static Tensor vector(std::initializer_list<double> values);
  static Tensor scalar(double value);

  const Shape& shape() const noexcept { return shape_; }
  std::size_t rank() const noexcept { return shape_.size(); }
  std::size_t size() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }

  /// Matrix view dimensions. Rank-1 tensors are n x 1, scalars 1 x 1.
  std::size_t rows() const noexcept;
  std::size_t cols() const noexcept;

  double* data() noexcept { return data_.data(); }
  const double* data() const noexcept { return data_.data(); }
  std::span<double> values() noexcept { return data_; }
  std::span<const double> values() const noexcept { return data_; }
  const std::vector<double>& storage() const noexcept { return data_; }

  double& operator[](std::size_t i) { return data_[i]; }
  double operator[](std::size_t i) const { return data_[i]; }
  double& at(std::size_t r, std::size_t c) { return data_[r * cols() + c]; }
  double at(std::size_t r, std::size_t c) const { return data_[r * cols() + c]; }

  /// Scalar value of a one-element tensor.
  double item() const;

  Tensor reshaped(Shape shape) const;
  /// Copy of row r as a rank-1 tensor.
  Tensor row(std::size_t r) const;
  /// Gather rows in the given order into a new matrix.
  Tensor take_rows(std::span<const std::size_t> indices) const;

  bool all_finite() const noexcept;

  friend bool operator==(const Tensor& a, const Tensor& b) = default;

 private:
  Shape shape_;
  std::vector<double> data_;
};

/// Stack equal-length rank-1 tensors (or 1 x d rows) into an n x d matrix.
Tensor stack_rows(std::span<const Tensor> rows);
/// Concatenate two matrices with equal column counts.
Tensor concat_rows(const Tensor& a, const Tensor& b);

}  // namespace recl
