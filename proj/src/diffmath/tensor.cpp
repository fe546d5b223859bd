#include "hpm/diffmath/tensor.hpp"

#include <algorithm>
#include <cmath>

#include "hpm/error.hpp"

namespace hpm::diff {

std::size_t shape_size(const Shape& shape) {
  std::size_t n = 1;
  for (auto e : shape) n *= e;
  return n;
}

std::string shape_str(const Shape& shape) {
  std::string s = "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) s += "x";
    s += std::to_string(shape[i]);
  }
  return s + "]";
}

Tensor::Tensor(Shape shape, double fill) : shape_(std::move(shape)) {
  for (auto e : shape_)
    if (e == 0) throw DimensionError("tensor extents must be positive, got " + shape_str(shape_));
  values_.assign(shape_size(shape_), fill);
}

Tensor::Tensor(Shape shape, std::vector<double> values)
    : shape_(std::move(shape)), values_(std::move(values)) {
  for (auto e : shape_)
    if (e == 0) throw DimensionError("tensor extents must be positive, got " + shape_str(shape_));
  if (shape_size(shape_) != values_.size())
    throw DimensionError("shape " + shape_str(shape_) + " does not hold " +
                         std::to_string(values_.size()) + " values");
}

Tensor Tensor::matrix(std::size_t rows, std::size_t cols, std::initializer_list<double> values) {
  return Tensor({rows, cols}, std::vector<double>(values));
}

void Tensor::fill(double v) { std::fill(values_.begin(), values_.end(), v); }

bool Tensor::all_finite() const {
  return std::all_of(values_.begin(), values_.end(), [](double v) { return std::isfinite(v); });
}

}  // namespace hpm::diff
