#pragma once

#include <cstddef>
#include <initializer_list>
#include <span>
#include <string>
#include <vector>

namespace flowprior {

using Shape = std::vector<int>;

std::size_t shape_size(const Shape& shape);
std::string to_string(const Shape& shape);

// Dense row-major array of doubles. Images use the (N, C, H, W) layout.
//
// A default-constructed Tensor is "empty" (rank 0, no data) and is only used
// as a placeholder; every constructed tensor has extents >= 1.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape, double fill = 0.0);
  Tensor(Shape shape, std::vector<double> data);

  static Tensor scalar(double value);
  static Tensor from(std::initializer_list<double> values);

  const Shape& shape() const { return shape_; }
  int rank() const { return static_cast<int>(shape_.size()); }
  int dim(int axis) const;
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  std::span<double> data() { return data_; }
  std::span<const double> data() const { return data_; }
  const std::vector<double>& values() const { return data_; }

  double& operator[](std::size_t i) { return data_[i]; }
  double operator[](std::size_t i) const { return data_[i]; }

  // NCHW accessors; the tensor must be rank 4.
  double& at(int n, int c, int h, int w);
  double at(int n, int c, int h, int w) const;

  // Value of a single-element tensor.
  double item() const;

  Tensor reshaped(Shape shape) const;

  // Image number `n` of a rank-4 batch, as a (1, C, H, W) tensor.
  Tensor sample(int n) const;

  bool operator==(const Tensor& other) const = default;

 private:
  Shape shape_;
  std::vector<double> data_;
};

// Stacks (1, C, H, W) images into one (N, C, H, W) batch.
Tensor stack_batch(std::span<const Tensor> images);

double max_abs_diff(const Tensor& a, const Tensor& b);

void require_same_shape(const Tensor& a, const Tensor& b, const char* what);

}  // namespace flowprior
