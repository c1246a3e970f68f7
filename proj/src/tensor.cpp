#include "ssc/tensor.hpp"

#include <cstring>
#include <sstream>

#include "ssc/errors.hpp"

namespace ssc {

std::size_t shape_product(const Tensor::Shape& shape) {
  std::size_t n = 1;
  for (std::size_t e : shape) n *= e;
  return n;
}

std::string shape_string(const Tensor::Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
  os << ']';
  return os.str();
}

Tensor::Tensor(Shape shape, double fill) : shape_(std::move(shape)) {
  for (std::size_t e : shape_) {
    if (e == 0) throw ShapeError("tensor extents must be positive: " + shape_string(shape_));
  }
  data_.assign(shape_product(shape_), fill);
}

Tensor::Tensor(Shape shape, std::vector<double> data)
    : shape_(std::move(shape)), data_(std::move(data)) {
  for (std::size_t e : shape_) {
    if (e == 0) throw ShapeError("tensor extents must be positive: " + shape_string(shape_));
  }
  if (shape_product(shape_) != data_.size()) {
    throw ShapeError("tensor data length " + std::to_string(data_.size()) +
                     " does not match shape " + shape_string(shape_));
  }
}

std::size_t Tensor::dim(std::size_t axis) const {
  if (axis >= shape_.size()) throw ShapeError("axis out of range");
  return shape_[axis];
}

std::size_t Tensor::offset(std::initializer_list<std::size_t> idx) const {
  if (idx.size() != shape_.size()) throw ShapeError("index rank mismatch");
  std::size_t off = 0;
  std::size_t axis = 0;
  for (std::size_t i : idx) {
    if (i >= shape_[axis]) throw ShapeError("index out of range");
    off = off * shape_[axis] + i;
    ++axis;
  }
  return off;
}

std::size_t Tensor::lanes() const {
  return shape_.empty() ? 0 : data_.size() / shape_.back();
}

std::span<double> Tensor::lane(std::size_t i) {
  const std::size_t w = lane_width();
  return std::span<double>(data_.data() + i * w, w);
}

std::span<const double> Tensor::lane(std::size_t i) const {
  const std::size_t w = lane_width();
  return std::span<const double>(data_.data() + i * w, w);
}

bool Tensor::operator==(const Tensor& other) const {
  return shape_ == other.shape_ && data_.size() == other.data_.size() &&
         (data_.empty() ||
          std::memcmp(data_.data(), other.data_.data(), data_.size() * sizeof(double)) == 0);
}

}  // namespace ssc
