#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace rmlab {

// Dense row-major array of doubles, rank 0..2. Rank 0 (shape {}) is a scalar
// and holds exactly one element. All numerics in the library are 64-bit.
using Shape = std::vector<int>;

std::int64_t numel(const Shape& s);
std::string shape_str(const Shape& s);

class Array {
 public:
  Array() : shape_{}, data_(1, 0.0) {}  // rank-0 zero
  explicit Array(Shape shape, double fill = 0.0);
  Array(Shape shape, std::vector<double> data);

  static Array scalar(double v);
  static Array zeros(const Shape& s) { return Array(s); }

  const Shape& shape() const { return shape_; }
  int rank() const { return static_cast<int>(shape_.size()); }
  std::int64_t size() const { return static_cast<std::int64_t>(data_.size()); }
  bool is_scalar() const { return data_.size() == 1; }

  double* data() { return data_.data(); }
  const double* data() const { return data_.data(); }
  std::vector<double>& vec() { return data_; }
  const std::vector<double>& vec() const { return data_; }

  double& operator[](std::int64_t i) { return data_[static_cast<size_t>(i)]; }
  double operator[](std::int64_t i) const { return data_[static_cast<size_t>(i)]; }

  // Rank-2 accessor; throws ShapeError on other ranks.
  double& at(int r, int c);
  double at(int r, int c) const;

  int rows() const;  // rank-2 only
  int cols() const;

  // Value of a single-element array regardless of rank.
  double item() const;

  bool all_finite() const;
  bool same_shape(const Array& o) const { return shape_ == o.shape_; }

 private:
  Shape shape_;
  std::vector<double> data_;
};

}  // namespace rmlab
