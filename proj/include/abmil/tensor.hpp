#pragma once

#include <cstddef>
#include <initializer_list>
#include <span>
#include <string>
#include <vector>

namespace abmil::graph {

using Shape = std::vector<std::size_t>;

std::size_t shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);

/// Dense row-major array of doubles.
///
/// Every dimension is at least 1 and the element count is the product of the
/// shape. An empty shape denotes a scalar holding one element.
class Tensor {
 public:
  Tensor();
  explicit Tensor(Shape shape, double fill = 0.0);
  Tensor(Shape shape, std::vector<double> data);

  /// Builds a 2-D tensor from nested rows; all rows must have equal length.
  static Tensor matrix(std::initializer_list<std::initializer_list<double>> rows);
  /// Builds a 1-D tensor.
  static Tensor vector(std::initializer_list<double> values);
  static Tensor vector(std::vector<double> values);
  static Tensor scalar(double value);

  const Shape& shape() const noexcept { return shape_; }
  std::size_t rank() const noexcept { return shape_.size(); }
  std::size_t numel() const noexcept { return data_.size(); }
  std::size_t dim(std::size_t axis) const;

  // 2-D accessors; rank must be 2.
  std::size_t rows() const;
  std::size_t cols() const;
  double operator()(std::size_t row, std::size_t col) const { return data_[row * shape_[1] + col]; }
  double& operator()(std::size_t row, std::size_t col) { return data_[row * shape_[1] + col]; }

  double operator[](std::size_t i) const { return data_[i]; }
  double& operator[](std::size_t i) { return data_[i]; }

  std::span<const double> data() const noexcept { return data_; }
  std::span<double> data() noexcept { return data_; }
  const std::vector<double>& values() const noexcept { return data_; }

  /// Value of a single-element tensor.
  double item() const;

  /// Copy of rows [begin, end) of a 2-D tensor.
  Tensor rows_slice(std::size_t begin, std::size_t end) const;
  /// Copy of the listed rows of a 2-D tensor, in the listed order.
  Tensor gather_rows(std::span<const std::size_t> indices) const;

  Tensor reshaped(Shape shape) const;

  /// Bitwise equality of shape and data.
  friend bool operator==(const Tensor& a, const Tensor& b);

 private:
  Shape shape_;
  std::vector<double> data_;
};

double l2_norm(const Tensor& t);
/// ||a - b|| / max(||a||, ||b||); zero when both are zero.
double relative_l2(const Tensor& a, const Tensor& b);
double max_abs_diff(const Tensor& a, const Tensor& b);

}  // namespace abmil::graph
