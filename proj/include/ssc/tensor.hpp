#pragma once

#include <cstddef>
#include <initializer_list>
#include <span>
#include <string>
#include <vector>

namespace ssc {

/// Dense row-major array of doubles. Spatial tensors are channel-last,
/// e.g. a feature map is [H, W, C] and a scene volume is [X, Y, Z, C].
class Tensor {
 public:
  using Shape = std::vector<std::size_t>;

  Tensor() = default;
  explicit Tensor(Shape shape, double fill = 0.0);
  Tensor(Shape shape, std::vector<double> data);

  const Shape& shape() const noexcept { return shape_; }
  std::size_t rank() const noexcept { return shape_.size(); }
  std::size_t dim(std::size_t axis) const;
  std::size_t size() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }

  std::span<double> values() noexcept { return data_; }
  std::span<const double> values() const noexcept { return data_; }
  double* data() noexcept { return data_.data(); }
  const double* data() const noexcept { return data_.data(); }

  double& operator[](std::size_t flat) { return data_[flat]; }
  double operator[](std::size_t flat) const { return data_[flat]; }

  template <class... I>
  double& operator()(I... idx) {
    return data_[offset({static_cast<std::size_t>(idx)...})];
  }
  template <class... I>
  double operator()(I... idx) const {
    return data_[offset({static_cast<std::size_t>(idx)...})];
  }

  std::size_t offset(std::initializer_list<std::size_t> idx) const;

  // Number of vectors along the last axis, and access to the i-th one.
  std::size_t lanes() const;
  std::size_t lane_width() const { return shape_.empty() ? 0 : shape_.back(); }
  std::span<double> lane(std::size_t i);
  std::span<const double> lane(std::size_t i) const;

  // Bitwise equality of shape and contents.
  bool operator==(const Tensor& other) const;

 private:
  Shape shape_;
  std::vector<double> data_;
};

std::size_t shape_product(const Tensor::Shape& shape);
std::string shape_string(const Tensor::Shape& shape);

}  // namespace ssc
