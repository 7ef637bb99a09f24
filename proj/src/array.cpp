#include "rmlab/array.hpp"

#include <cmath>

#include "rmlab/errors.hpp"

namespace rmlab {

std::int64_t numel(const Shape& s) {
  std::int64_t n = 1;
  for (int d : s) {
    if (d < 0) throw ShapeError("negative extent in shape " + shape_str(s));
    n *= d;
  }
  return n;
}

std::string shape_str(const Shape& s) {
  std::string out = "[";
  for (size_t i = 0; i < s.size(); ++i) {
    if (i) out += "x";
    out += std::to_string(s[i]);
  }
  return out + "]";
}

Array::Array(Shape shape, double fill)
    : shape_(std::move(shape)), data_(static_cast<size_t>(numel(shape_)), fill) {
  if (shape_.size() > 2) throw ShapeError("rank > 2 unsupported: " + shape_str(shape_));
}

Array::Array(Shape shape, std::vector<double> data) : shape_(std::move(shape)), data_(std::move(data)) {
  if (shape_.size() > 2) throw ShapeError("rank > 2 unsupported: " + shape_str(shape_));
  if (static_cast<std::int64_t>(data_.size()) != numel(shape_))
    throw ShapeError("data length " + std::to_string(data_.size()) + " does not match shape " + shape_str(shape_));
}

Array Array::scalar(double v) {
  Array a;
  a.data_[0] = v;
  return a;
}

double& Array::at(int r, int c) {
  if (rank() != 2) throw ShapeError("at(r,c) requires rank 2, have " + shape_str(shape_));
  return data_[static_cast<size_t>(r) * shape_[1] + c];
}

double Array::at(int r, int c) const { return const_cast<Array*>(this)->at(r, c); }

int Array::rows() const {
  if (rank() != 2) throw ShapeError("rows() requires rank 2, have " + shape_str(shape_));
  return shape_[0];
}

int Array::cols() const {
  if (rank() != 2) throw ShapeError("cols() requires rank 2, have " + shape_str(shape_));
  return shape_[1];
}

double Array::item() const {
  if (data_.size() != 1) throw ShapeError("item() requires a single element, have " + shape_str(shape_));
  return data_[0];
}

bool Array::all_finite() const {
  for (double v : data_)
    if (!std::isfinite(v)) return false;
  return true;
}

}  // namespace rmlab
