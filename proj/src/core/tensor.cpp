#include "tensor.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <numeric>

#include "error.hpp"

namespace kafshot {

std::size_t shape_product(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1},
                         std::multiplies<>());
}

std::string shape_string(const Shape& shape) {
  std::string out = "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) out += ",";
    out += std::to_string(shape[i]);
  }
  return out + "]";
}

Tensor::Tensor(Shape shape, double fill)
    : shape_(std::move(shape)), data_(shape_product(shape_), fill) {
  for (std::size_t i = 0; i < shape_.size(); ++i) {
    require(shape_[i] > 0, ErrorKind::dimension,
            "tensor extent at axis " + std::to_string(i) + " must be positive");
  }
}

Tensor::Tensor(Shape shape, std::vector<double> data)
    : shape_(std::move(shape)), data_(std::move(data)) {
  require(shape_product(shape_) == data_.size(), ErrorKind::dimension,
          "shape " + shape_string(shape_) + " does not match " +
              std::to_string(data_.size()) + " values");
}

Tensor Tensor::vector(std::initializer_list<double> values) {
  return Tensor({values.size()}, std::vector<double>(values));
}

std::size_t Tensor::dim(std::size_t axis) const {
  require(axis < shape_.size(), ErrorKind::dimension,
          "axis " + std::to_string(axis) + " out of range for rank " +
              std::to_string(shape_.size()));
  return shape_[axis];
}

Tensor Tensor::reshaped(Shape shape) const& {
  return Tensor(std::move(shape), data_);
}

Tensor Tensor::reshaped(Shape shape) && {
  return Tensor(std::move(shape), std::move(data_));
}

void Tensor::fill(double value) { std::fill(data_.begin(), data_.end(), value); }

bool Tensor::all_finite() const noexcept {
  return std::all_of(data_.begin(), data_.end(),
                     [](double v) { return std::isfinite(v); });
}

Tensor Tensor::slice(std::size_t i) const {
  return rows(i, i + 1).reshaped(Shape(shape_.begin() + 1, shape_.end()));
}

Tensor Tensor::rows(std::size_t begin, std::size_t end) const {
  require(rank() >= 1 && begin < end && end <= shape_[0], ErrorKind::dimension,
          "row range out of bounds for leading axis");
  const std::size_t stride = data_.size() / shape_[0];
  Shape out_shape = shape_;
  out_shape[0] = end - begin;
  return Tensor(std::move(out_shape),
                std::vector<double>(data_.begin() + begin * stride,
                                    data_.begin() + end * stride));
}

Tensor concat_rows(const Tensor& a, const Tensor& b) {
  require(a.rank() == b.rank() && a.rank() >= 1 &&
              std::equal(a.shape().begin() + 1, a.shape().end(),
                         b.shape().begin() + 1),
          ErrorKind::dimension,
          "cannot concatenate " + shape_string(a.shape()) + " and " +
              shape_string(b.shape()));
  Shape shape = a.shape();
  shape[0] += b.dim(0);
  std::vector<double> data(a.values().begin(), a.values().end());
  data.insert(data.end(), b.values().begin(), b.values().end());
  return Tensor(std::move(shape), std::move(data));
}

Tensor stack(std::span<const Tensor> items) {
  require(!items.empty(), ErrorKind::dimension, "cannot stack zero tensors");
  Shape shape{items.size()};
  shape.insert(shape.end(), items[0].shape().begin(), items[0].shape().end());
  std::vector<double> data;
  data.reserve(shape_product(shape));
  for (const auto& t : items) {
    require(t.shape() == items[0].shape(), ErrorKind::dimension,
            "stack requires equal shapes, got " + shape_string(t.shape()) +
                " vs " + shape_string(items[0].shape()));
    data.insert(data.end(), t.values().begin(), t.values().end());
  }
  return Tensor(std::move(shape), std::move(data));
}

void axpy(double a, const Tensor& x, Tensor& y) {
  require(x.shape() == y.shape(), ErrorKind::dimension, "axpy shape mismatch");
  for (std::size_t i = 0; i < x.size(); ++i) y[i] += a * x[i];
}

double dot(const Tensor& a, const Tensor& b) {
  require(a.size() == b.size(), ErrorKind::dimension, "dot size mismatch");
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

}  // namespace kafshot
