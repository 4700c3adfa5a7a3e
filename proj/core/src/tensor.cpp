#include "cactus/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <numeric>
#include <sstream>

#include "cactus/error.hpp"

namespace cactus {

std::size_t shape_numel(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1},
                         std::multiplies<>());
}

std::string shape_str(const Shape& shape) {
  std::ostringstream out;
  out << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) out << ", ";
    out << shape[i];
  }
  out << ']';
  return out.str();
}

Tensor::Tensor(Shape shape, double fill)
    : shape_(std::move(shape)), data_(shape_numel(shape_), fill) {}

Tensor::Tensor(Shape shape, std::vector<double> data)
    : shape_(std::move(shape)), data_(data.begin(), data.end()) {
  if (data_.size() != shape_numel(shape_)) {
    throw ShapeError("Tensor: " + std::to_string(data_.size()) +
                     " values do not fill shape " + shape_str(shape_));
  }
}

Tensor Tensor::scalar(double value) { return Tensor({}, std::vector<double>{value}); }

Tensor Tensor::from(std::initializer_list<double> values) {
  return Tensor({values.size()}, std::vector<double>(values));
}

Tensor Tensor::from(Shape shape, std::initializer_list<double> values) {
  return Tensor(std::move(shape), std::vector<double>(values));
}

double Tensor::item() const {
  if (data_.size() != 1) {
    throw ShapeError("Tensor::item on tensor of shape " + shape_str(shape_));
  }
  return data_[0];
}

Tensor Tensor::reshaped(Shape shape) const {
  if (shape_numel(shape) != data_.size()) {
    throw ShapeError("reshape: cannot view " + shape_str(shape_) + " as " +
                     shape_str(shape));
  }
  Tensor out = *this;
  out.shape_ = std::move(shape);
  return out;
}

void Tensor::fill(double value) { std::fill(data_.begin(), data_.end(), value); }

std::size_t Tensor::row_size() const {
  if (shape_.empty()) throw ShapeError("row_size on a scalar");
  return shape_[0] == 0 ? shape_numel(Shape(shape_.begin() + 1, shape_.end()))
                        : data_.size() / shape_[0];
}

Tensor Tensor::slice_rows(std::size_t begin, std::size_t end) const {
  if (shape_.empty() || begin > end || end > shape_[0]) {
    throw ShapeError("slice_rows: [" + std::to_string(begin) + ", " +
                     std::to_string(end) + ") out of " + shape_str(shape_));
  }
  const std::size_t row = row_size();
  Shape shape = shape_;
  shape[0] = end - begin;
  return Tensor(std::move(shape),
                std::vector<double>(data_.begin() + static_cast<std::ptrdiff_t>(begin * row),
                                    data_.begin() + static_cast<std::ptrdiff_t>(end * row)));
}

Tensor Tensor::gather_rows(std::span<const std::size_t> rows) const {
  if (shape_.empty()) throw ShapeError("gather_rows on a scalar");
  const std::size_t row = row_size();
  Shape shape = shape_;
  shape[0] = rows.size();
  std::vector<double> out;
  out.reserve(rows.size() * row);
  for (std::size_t r : rows) {
    if (r >= shape_[0]) throw ShapeError("gather_rows: row index out of range");
    auto first = data_.begin() + static_cast<std::ptrdiff_t>(r * row);
    out.insert(out.end(), first, first + static_cast<std::ptrdiff_t>(row));
  }
  return Tensor(std::move(shape), std::move(out));
}

double max_abs_diff(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) {
    throw ShapeError("max_abs_diff: " + shape_str(a.shape()) + " vs " +
                     shape_str(b.shape()));
  }
  double worst = 0.0;
  for (std::size_t i = 0; i < a.numel(); ++i) {
    worst = std::max(worst, std::abs(a[i] - b[i]));
  }
  return worst;
}

}  // namespace cactus
