#pragma once

#include <cstddef>
#include <initializer_list>
#include <string>
#include <vector>

namespace popmech {

// Dense row-major array of doubles. Rank 0 denotes a scalar (size 1).
// All numerics in the library run on this type; there is no float path.
class Array {
 public:
  Array() = default;

  // Zero-filled array of the given shape.
  explicit Array(std::vector<std::size_t> shape);

  Array(std::vector<std::size_t> shape, std::vector<double> data);

  static Array scalar(double v);
  static Array zeros(std::vector<std::size_t> shape);
  static Array full(std::vector<std::size_t> shape, double v);

  // Row-major matrix literal helper, mostly for tests.
  static Array matrix(std::size_t rows, std::size_t cols,
                      std::initializer_list<double> vals);

  const std::vector<std::size_t>& shape() const { return shape_; }
  std::size_t rank() const { return shape_.size(); }
  std::size_t size() const { return data_.size(); }

  double* data() { return data_.data(); }
  const double* data() const { return data_.data(); }

  double& operator[](std::size_t i) { return data_[i]; }
  double operator[](std::size_t i) const { return data_[i]; }

  // Value of a size-1 array; throws ShapeError otherwise.
  double item() const;

  bool same_shape(const Array& other) const { return shape_ == other.shape_; }
  bool all_finite() const;

  // Index of the first non-finite element, or size() if none.
  std::size_t first_non_finite() const;

 private:
  std::vector<std::size_t> shape_;
  std::vector<double> data_;
};

std::size_t shape_size(const std::vector<std::size_t>& shape);
std::string shape_str(const std::vector<std::size_t>& shape);

}  // namespace popmech
