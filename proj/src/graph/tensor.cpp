#include "abmil/tensor.hpp"

#include <algorithm>
#include <bit>
#include <cstdint>
#include <cmath>
#include <sstream>

#include "abmil/errors.hpp"

namespace abmil::graph {

std::size_t shape_numel(const Shape& shape) {
  std::size_t n = 1;
  for (std::size_t d : shape) n *= d;
  return n;
}

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ',';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

namespace {

void check_shape(const Shape& shape) {
  for (std::size_t d : shape) {
    if (d == 0) throw ShapeError("tensor shape " + shape_str(shape) + " has a zero dimension");
  }
}

}  // namespace

Tensor::Tensor() : data_(1, 0.0) {}

Tensor::Tensor(Shape shape, double fill) : shape_(std::move(shape)) {
  check_shape(shape_);
  data_.assign(shape_numel(shape_), fill);
}

Tensor::Tensor(Shape shape, std::vector<double> data) : shape_(std::move(shape)), data_(std::move(data)) {
  check_shape(shape_);
  if (data_.size() != shape_numel(shape_)) {
    throw ShapeError("tensor data length " + std::to_string(data_.size()) + " does not match shape " +
                     shape_str(shape_));
  }
}

Tensor Tensor::matrix(std::initializer_list<std::initializer_list<double>> rows) {
  if (rows.size() == 0) throw ShapeError("matrix with no rows");
  const std::size_t cols = rows.begin()->size();
  std::vector<double> data;
  data.reserve(rows.size() * cols);
  for (const auto& row : rows) {
    if (row.size() != cols) throw ShapeError("ragged matrix rows");
    data.insert(data.end(), row.begin(), row.end());
  }
  return Tensor({rows.size(), cols}, std::move(data));
}

Tensor Tensor::vector(std::initializer_list<double> values) { return vector(std::vector<double>(values)); }

Tensor Tensor::vector(std::vector<double> values) {
  const std::size_t n = values.size();
  return Tensor({n}, std::move(values));
}

Tensor Tensor::scalar(double value) { return Tensor(Shape{1}, std::vector<double>{value}); }

std::size_t Tensor::dim(std::size_t axis) const {
  if (axis >= shape_.size()) {
    throw ShapeError("axis " + std::to_string(axis) + " out of range for shape " + shape_str(shape_));
  }
  return shape_[axis];
}

std::size_t Tensor::rows() const {
  if (rank() != 2) throw ShapeError("rows() on non-matrix shape " + shape_str(shape_));
  return shape_[0];
}

std::size_t Tensor::cols() const {
  if (rank() != 2) throw ShapeError("cols() on non-matrix shape " + shape_str(shape_));
  return shape_[1];
}

double Tensor::item() const {
  if (data_.size() != 1) throw ShapeError("item() on tensor of shape " + shape_str(shape_));
  return data_[0];
}

Tensor Tensor::rows_slice(std::size_t begin, std::size_t end) const {
  if (rank() != 2 || begin >= end || end > shape_[0]) {
    throw ShapeError("rows_slice [" + std::to_string(begin) + "," + std::to_string(end) + ") of shape " +
                     shape_str(shape_));
  }
  const std::size_t c = shape_[1];
  std::vector<double> out(data_.begin() + static_cast<std::ptrdiff_t>(begin * c),
                          data_.begin() + static_cast<std::ptrdiff_t>(end * c));
  return Tensor({end - begin, c}, std::move(out));
}

Tensor Tensor::gather_rows(std::span<const std::size_t> indices) const {
  if (rank() != 2 || indices.empty()) throw ShapeError("gather_rows on shape " + shape_str(shape_));
  const std::size_t c = shape_[1];
  std::vector<double> out;
  out.reserve(indices.size() * c);
  for (std::size_t r : indices) {
    if (r >= shape_[0]) throw ShapeError("gather_rows index " + std::to_string(r) + " out of range");
    const auto first = data_.begin() + static_cast<std::ptrdiff_t>(r * c);
    out.insert(out.end(), first, first + static_cast<std::ptrdiff_t>(c));
  }
  return Tensor({indices.size(), c}, std::move(out));
}

Tensor Tensor::reshaped(Shape shape) const {
  if (shape_numel(shape) != numel()) {
    throw ShapeError("cannot reshape " + shape_str(shape_) + " to " + shape_str(shape));
  }
  return Tensor(std::move(shape), data_);
}

bool operator==(const Tensor& a, const Tensor& b) {
  if (a.shape_ != b.shape_) return false;
  return std::equal(a.data_.begin(), a.data_.end(), b.data_.begin(), [](double x, double y) {
    return std::bit_cast<std::uint64_t>(x) == std::bit_cast<std::uint64_t>(y);
  });
}

double l2_norm(const Tensor& t) {
  double s = 0.0;
  for (double v : t.data()) s += v * v;
  return std::sqrt(s);
}

double relative_l2(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) throw ShapeError("relative_l2 of " + shape_str(a.shape()) + " and " + shape_str(b.shape()));
  double diff = 0.0;
  for (std::size_t i = 0; i < a.numel(); ++i) diff += (a[i] - b[i]) * (a[i] - b[i]);
  const double denom = std::max(l2_norm(a), l2_norm(b));
  if (denom == 0.0) return 0.0;
  return std::sqrt(diff) / denom;
}

double max_abs_diff(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) throw ShapeError("max_abs_diff of " + shape_str(a.shape()) + " and " + shape_str(b.shape()));
  double m = 0.0;
  for (std::size_t i = 0; i < a.numel(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

}  // namespace abmil::graph
