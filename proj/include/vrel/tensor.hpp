#pragma once

#include <cstddef>
#include <initializer_list>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "vrel/error.hpp"

namespace vrel {

using Shape = std::vector<std::size_t>;

std::size_t shape_volume(const Shape& shape);
std::string shape_to_string(const Shape& shape);

/// Dense row-major float32 array. Every extent is >= 1 and rank >= 1.
class Tensor {
 public:
  Tensor() : shape_{1}, data_(1, 0.0f) {}

  /// Zero-filled tensor.
  explicit Tensor(Shape shape);
  Tensor(Shape shape, std::vector<float> data);
  Tensor(Shape shape, float fill);

  static Tensor from(std::initializer_list<float> values) {
    return Tensor(Shape{values.size()}, std::vector<float>(values));
  }

  const Shape& shape() const { return shape_; }
  std::size_t rank() const { return shape_.size(); }
  std::size_t extent(std::size_t axis) const { return shape_.at(axis); }
  std::size_t size() const { return data_.size(); }

  std::span<const float> data() const { return data_; }
  std::span<float> data() { return data_; }
  const std::vector<float>& values() const { return data_; }

  float operator[](std::size_t i) const { return data_[i]; }
  float& operator[](std::size_t i) { return data_[i]; }

  /// Same data under a new shape of equal volume.
  Tensor reshaped(Shape shape) const&;
  Tensor reshaped(Shape shape) &&;

  friend bool operator==(const Tensor&, const Tensor&) = default;

 private:
  Shape shape_;
  std::vector<float> data_;
};

enum class ElementwiseOp { kAdd, kSub, kMul, kDivStabilized };

/// `kDivStabilized` computes a / (b + sign(b) * eps) with sign(0) = +1.
Tensor elementwise(ElementwiseOp op, const Tensor& a, const Tensor& b, float eps = 0.0f);

inline Tensor add(const Tensor& a, const Tensor& b) { return elementwise(ElementwiseOp::kAdd, a, b); }
inline Tensor sub(const Tensor& a, const Tensor& b) { return elementwise(ElementwiseOp::kSub, a, b); }
inline Tensor mul(const Tensor& a, const Tensor& b) { return elementwise(ElementwiseOp::kMul, a, b); }
inline Tensor div_stabilized(const Tensor& a, const Tensor& b, float eps) {
  return elementwise(ElementwiseOp::kDivStabilized, a, b, eps);
}

/// Sums over `axes`; reduced extents are dropped. Reducing every axis
/// yields shape {1}. Accumulation is in double.
Tensor reduce_sum(const Tensor& a, const std::vector<std::size_t>& axes);
double sum_all(const Tensor& a);
double sum_abs(const Tensor& a);

struct SignParts {
  Tensor positive;
  Tensor negative;
};

SignParts split_signs(const Tensor& a);

bool all_finite(const Tensor& a);

}  // namespace vrel
