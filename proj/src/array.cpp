#include "popmech/array.hpp"

#include <cmath>

#include "popmech/errors.hpp"

namespace popmech {

std::size_t shape_size(const std::vector<std::size_t>& shape) {
  std::size_t n = 1;
  for (std::size_t d : shape) n *= d;
  return n;
}

std::string shape_str(const std::vector<std::size_t>& shape) {
  std::string s = "(";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) s += ",";
    s += std::to_string(shape[i]);
  }
  s += ")";
  return s;
}

Array::Array(std::vector<std::size_t> shape)
    : shape_(std::move(shape)), data_(shape_size(shape_), 0.0) {}

Array::Array(std::vector<std::size_t> shape, std::vector<double> data)
    : shape_(std::move(shape)), data_(std::move(data)) {
  if (data_.size() != shape_size(shape_))
    throw ShapeError("Array: data size " + std::to_string(data_.size()) +
                     " does not match shape " + shape_str(shape_));
}

Array Array::scalar(double v) { return Array({}, {v}); }

Array Array::zeros(std::vector<std::size_t> shape) {
  return Array(std::move(shape));
}

Array Array::full(std::vector<std::size_t> shape, double v) {
  Array a(std::move(shape));
  for (std::size_t i = 0; i < a.size(); ++i) a[i] = v;
  return a;
}

Array Array::matrix(std::size_t rows, std::size_t cols,
                    std::initializer_list<double> vals) {
  return Array({rows, cols}, std::vector<double>(vals));
}

double Array::item() const {
  if (size() != 1)
    throw ShapeError("Array::item: expected a size-1 array, got shape " +
                     shape_str(shape_));
  return data_[0];
}

bool Array::all_finite() const { return first_non_finite() == size(); }

std::size_t Array::first_non_finite() const {
  for (std::size_t i = 0; i < data_.size(); ++i)
    if (!std::isfinite(data_[i])) return i;
  return data_.size();
}

}  // namespace popmech
