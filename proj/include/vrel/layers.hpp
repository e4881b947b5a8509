#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "vrel/tensor.hpp"

// Forward operators on single clips (no batch axis) and the adjoint
// ("transpose") operators the relevance rules are assembled from.
// Spatial tensors are laid out C x T x H x W.

namespace vrel {

struct Extent3 {
  std::size_t t = 1;
  std::size_t h = 1;
  std::size_t w = 1;

  friend bool operator==(const Extent3&, const Extent3&) = default;
};

struct WindowGeometry {
  Extent3 kernel;
  Extent3 stride;
  Extent3 padding{0, 0, 0};
};

/// Output shape of a sliding window over a C x T x H x W input.
Shape window_output_shape(const Shape& input, std::size_t out_channels, const WindowGeometry& g);

/// Cross-correlation with zero padding. `weight` is Co x Ci x kt x kh x kw;
/// `bias` is empty or has Co entries.
Tensor conv3d_forward(const Tensor& input, const Tensor& weight, std::span<const float> bias,
                      const WindowGeometry& g);

/// Adjoint of conv3d_forward with respect to its input.
Tensor conv3d_transpose(const Tensor& grad_out, const Tensor& weight, const WindowGeometry& g,
                        const Shape& input_shape);

struct MaxPoolResult {
  Tensor output;
  /// Flat input index selected by each output window; ties go to the
  /// lowest flat index.
  std::vector<std::uint32_t> argmax;
};

MaxPoolResult maxpool3d_forward(const Tensor& input, const WindowGeometry& g);

/// Routes each output value to the input position its window selected.
Tensor maxpool3d_scatter(const Tensor& grad_out, std::span<const std::uint32_t> argmax,
                         const Shape& input_shape);

/// Mean over the full window volume; padded positions count as zeros.
Tensor avgpool3d_forward(const Tensor& input, const WindowGeometry& g);

/// Spreads each output value evenly over the window volume it was averaged
/// from. Shares that fall on padding are dropped.
Tensor avgpool3d_transpose(const Tensor& grad_out, const WindowGeometry& g, const Shape& input_shape);

/// y = W x + b with W of shape out x in.
Tensor linear_forward(const Tensor& input, const Tensor& weight, std::span<const float> bias);

/// W^T g.
Tensor linear_transpose(const Tensor& grad_out, const Tensor& weight);

Tensor relu_forward(const Tensor& input);

}  // namespace vrel
