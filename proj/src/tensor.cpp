#include "flowprior/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "flowprior/errors.hpp"

namespace flowprior {

std::size_t shape_size(const Shape& shape) {
  std::size_t n = 1;
  for (int e : shape) n *= static_cast<std::size_t>(e);
  return n;
}

std::string to_string(const Shape& shape) {
  std::ostringstream os;
  os << '(';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ", ";
    os << shape[i];
  }
  os << ')';
  return os.str();
}

namespace {

void validate_extents(const Shape& shape) {
  if (shape.empty()) throw ShapeError("tensor shape must have rank >= 1");
  for (int e : shape) {
    if (e < 1) throw ShapeError("tensor extents must be >= 1, got " + to_string(shape));
  }
}

}  // namespace

Tensor::Tensor(Shape shape, double fill) : shape_(std::move(shape)) {
  validate_extents(shape_);
  data_.assign(shape_size(shape_), fill);
}

Tensor::Tensor(Shape shape, std::vector<double> data)
    : shape_(std::move(shape)), data_(std::move(data)) {
  validate_extents(shape_);
  if (data_.size() != shape_size(shape_)) {
    throw ShapeError("tensor data length " + std::to_string(data_.size()) +
                     " does not match shape " + to_string(shape_));
  }
}

Tensor Tensor::scalar(double value) { return Tensor({1}, value); }

Tensor Tensor::from(std::initializer_list<double> values) {
  return Tensor({static_cast<int>(values.size())}, std::vector<double>(values));
}

int Tensor::dim(int axis) const {
  if (axis < 0 || axis >= rank()) {
    throw ShapeError("axis " + std::to_string(axis) + " out of range for shape " +
                     to_string(shape_));
  }
  return shape_[static_cast<std::size_t>(axis)];
}

double& Tensor::at(int n, int c, int h, int w) {
  const auto i = ((static_cast<std::size_t>(n) * shape_[1] + c) * shape_[2] + h) * shape_[3] + w;
  return data_[i];
}

double Tensor::at(int n, int c, int h, int w) const {
  const auto i = ((static_cast<std::size_t>(n) * shape_[1] + c) * shape_[2] + h) * shape_[3] + w;
  return data_[i];
}

double Tensor::item() const {
  if (data_.size() != 1) {
    throw ShapeError("item() needs a single-element tensor, got " + to_string(shape_));
  }
  return data_[0];
}

Tensor Tensor::reshaped(Shape shape) const {
  if (shape_size(shape) != data_.size()) {
    throw ShapeError("cannot reshape " + to_string(shape_) + " to " + to_string(shape));
  }
  return Tensor(std::move(shape), data_);
}

Tensor Tensor::sample(int n) const {
  if (rank() != 4) throw ShapeError("sample() needs an NCHW tensor, got " + to_string(shape_));
  if (n < 0 || n >= shape_[0]) throw ShapeError("sample index out of range");
  const std::size_t per = data_.size() / static_cast<std::size_t>(shape_[0]);
  std::vector<double> out(data_.begin() + static_cast<std::ptrdiff_t>(per * n),
                          data_.begin() + static_cast<std::ptrdiff_t>(per * (n + 1)));
  return Tensor({1, shape_[1], shape_[2], shape_[3]}, std::move(out));
}

Tensor stack_batch(std::span<const Tensor> images) {
  if (images.empty()) throw ShapeError("cannot stack an empty list of images");
  const Shape& first = images.front().shape();
  if (first.size() != 4 || first[0] != 1) {
    throw ShapeError("stack_batch expects (1, C, H, W) images, got " + to_string(first));
  }
  std::vector<double> data;
  data.reserve(images.front().size() * images.size());
  for (const Tensor& img : images) {
    if (img.shape() != first) {
      throw ShapeError("stack_batch shape mismatch: " + to_string(first) + " vs " +
                       to_string(img.shape()));
    }
    data.insert(data.end(), img.values().begin(), img.values().end());
  }
  return Tensor({static_cast<int>(images.size()), first[1], first[2], first[3]}, std::move(data));
}

double max_abs_diff(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "max_abs_diff");
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* what) {
  if (a.shape() != b.shape()) {
    throw ShapeError(std::string(what) + ": shape mismatch " + to_string(a.shape()) + " vs " +
                     to_string(b.shape()));
  }
}

}  // namespace flowprior
