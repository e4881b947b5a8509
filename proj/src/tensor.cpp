#include "vrel/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

#include "vrel/kernels.hpp"

namespace vrel {

std::size_t shape_volume(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

std::string shape_to_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
  os << ']';
  return os.str();
}

namespace {

void check_shape(const Shape& shape) {
  if (shape.empty()) throw ShapeError("tensor rank must be >= 1");
  for (std::size_t e : shape) {
    if (e == 0) throw ShapeError("tensor extents must be >= 1, got " + shape_to_string(shape));
  }
}

}  // namespace

Tensor::Tensor(Shape shape) : shape_(std::move(shape)) {
  check_shape(shape_);
  data_.assign(shape_volume(shape_), 0.0f);
}

Tensor::Tensor(Shape shape, float fill) : shape_(std::move(shape)) {
  check_shape(shape_);
  data_.assign(shape_volume(shape_), fill);
}

Tensor::Tensor(Shape shape, std::vector<float> data) : shape_(std::move(shape)), data_(std::move(data)) {
  check_shape(shape_);
  if (data_.size() != shape_volume(shape_)) {
    throw ShapeError("data length " + std::to_string(data_.size()) + " does not match shape " +
                     shape_to_string(shape_));
  }
}

Tensor Tensor::reshaped(Shape shape) const& {
  return Tensor(std::move(shape), data_);
}

Tensor Tensor::reshaped(Shape shape) && {
  return Tensor(std::move(shape), std::move(data_));
}

Tensor elementwise(ElementwiseOp op, const Tensor& a, const Tensor& b, float eps) {
  if (a.shape() != b.shape()) {
    throw ShapeError("elementwise shape mismatch: " + shape_to_string(a.shape()) + " vs " +
                     shape_to_string(b.shape()));
  }
  if (!(eps >= 0.0f)) throw ConfigError("stabilizer eps must be >= 0");
  Tensor out(a.shape());
  const auto& k = kernels::active();
  const float* pa = a.data().data();
  const float* pb = b.data().data();
  float* po = out.data().data();
  const std::size_t n = a.size();
  switch (op) {
    case ElementwiseOp::kAdd: k.add(pa, pb, po, n); break;
    case ElementwiseOp::kSub: k.sub(pa, pb, po, n); break;
    case ElementwiseOp::kMul: k.mul(pa, pb, po, n); break;
    case ElementwiseOp::kDivStabilized: k.div_stabilized(pa, pb, eps, po, n); break;
  }
  return out;
}

Tensor reduce_sum(const Tensor& a, const std::vector<std::size_t>& axes) {
  const std::size_t rank = a.rank();
  std::vector<bool> reduced(rank, false);
  for (std::size_t ax : axes) {
    if (ax >= rank) {
      throw AxisError("axis " + std::to_string(ax) + " out of range for rank " + std::to_string(rank));
    }
    reduced[ax] = true;
  }

  Shape out_shape;
  for (std::size_t d = 0; d < rank; ++d) {
    if (!reduced[d]) out_shape.push_back(a.extent(d));
  }
  if (out_shape.empty()) {
    return Tensor(Shape{1}, std::vector<float>{static_cast<float>(sum_all(a))});
  }

  // Row-major strides of the output, expressed per input axis (0 for reduced axes).
  std::vector<std::size_t> out_stride(rank, 0);
  std::size_t stride = 1;
  for (std::size_t d = rank; d-- > 0;) {
    if (!reduced[d]) {
      out_stride[d] = stride;
      stride *= a.extent(d);
    }
  }

  std::vector<double> acc(shape_volume(out_shape), 0.0);
  std::vector<std::size_t> index(rank, 0);
  const auto src = a.data();
  for (std::size_t flat = 0; flat < src.size(); ++flat) {
    std::size_t o = 0;
    for (std::size_t d = 0; d < rank; ++d) o += index[d] * out_stride[d];
    acc[o] += src[flat];
    for (std::size_t d = rank; d-- > 0;) {
      if (++index[d] < a.extent(d)) break;
      index[d] = 0;
    }
  }

  Tensor out(out_shape);
  std::transform(acc.begin(), acc.end(), out.data().begin(), [](double v) { return static_cast<float>(v); });
  return out;
}

double sum_all(const Tensor& a) { return kernels::active().sum(a.data().data(), a.size()); }

double sum_abs(const Tensor& a) { return kernels::active().sum_abs(a.data().data(), a.size()); }

SignParts split_signs(const Tensor& a) {
  SignParts parts{Tensor(a.shape()), Tensor(a.shape())};
  kernels::active().split_signs(a.data().data(), parts.positive.data().data(),
                                parts.negative.data().data(), a.size());
  return parts;
}

bool all_finite(const Tensor& a) {
  return std::all_of(a.data().begin(), a.data().end(), [](float v) { return std::isfinite(v); });
}

}  // namespace vrel
