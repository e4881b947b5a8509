#include "vrel/layers.hpp"

#include <algorithm>
#include <limits>
#include <string>

#include "vrel/kernels.hpp"

namespace vrel {

namespace {

std::size_t window_extent(std::size_t in, std::size_t k, std::size_t s, std::size_t p, const char* axis) {
  if (k == 0 || s == 0) throw ShapeError(std::string("kernel and stride must be >= 1 along ") + axis);
  if (in + 2 * p < k) {
    throw ShapeError(std::string("window larger than padded input along ") + axis + " (" +
                     std::to_string(in) + " + 2*" + std::to_string(p) + " < " + std::to_string(k) + ")");
  }
  return (in + 2 * p - k) / s + 1;
}

void require_rank4(const Tensor& t, const char* what) {
  if (t.rank() != 4) {
    throw ShapeError(std::string(what) + " expects a C x T x H x W tensor, got " +
                     shape_to_string(t.shape()));
  }
}

// Range of output positions o in [0, out) whose input coordinate
// o*stride + k - pad lands inside [0, in).
struct Span1 {
  std::size_t lo;
  std::size_t hi;
};

Span1 valid_outputs(std::size_t out, std::size_t in, std::size_t stride, std::size_t k, std::size_t pad) {
  // need o*stride + k >= pad and o*stride + k - pad <= in - 1
  std::size_t lo = 0;
  if (k < pad) lo = (pad - k + stride - 1) / stride;
  const std::ptrdiff_t top = static_cast<std::ptrdiff_t>(in) - 1 + static_cast<std::ptrdiff_t>(pad) -
                             static_cast<std::ptrdiff_t>(k);
  if (top < 0) return {0, 0};
  const std::size_t hi = std::min(out, static_cast<std::size_t>(top) / stride + 1);
  return {lo, std::max(lo, hi)};
}

struct Dims {
  std::size_t c, t, h, w;
  explicit Dims(const Shape& s) : c(s[0]), t(s[1]), h(s[2]), w(s[3]) {}
  std::size_t plane() const { return t * h * w; }
};

// Visits every (kernel offset, output row) pair that overlaps the input,
// calling fn(out_row_offset, in_row_offset, kw, ow_lo, ow_hi) with offsets
// relative to a single channel plane.
template <typename Fn>
void for_each_row(const Dims& in, const Dims& out, const WindowGeometry& g, std::size_t kt,
                  std::size_t kh, Fn&& fn) {
  const Span1 ts = valid_outputs(out.t, in.t, g.stride.t, kt, g.padding.t);
  const Span1 hs = valid_outputs(out.h, in.h, g.stride.h, kh, g.padding.h);
  for (std::size_t ot = ts.lo; ot < ts.hi; ++ot) {
    const std::size_t it = ot * g.stride.t + kt - g.padding.t;
    for (std::size_t oh = hs.lo; oh < hs.hi; ++oh) {
      const std::size_t ih = oh * g.stride.h + kh - g.padding.h;
      fn((ot * out.h + oh) * out.w, (it * in.h + ih) * in.w);
    }
  }
}

}  // namespace

Shape window_output_shape(const Shape& input, std::size_t out_channels, const WindowGeometry& g) {
  if (input.size() != 4) throw ShapeError("window operators expect rank-4 input, got " + shape_to_string(input));
  return {out_channels, window_extent(input[1], g.kernel.t, g.stride.t, g.padding.t, "T"),
          window_extent(input[2], g.kernel.h, g.stride.h, g.padding.h, "H"),
          window_extent(input[3], g.kernel.w, g.stride.w, g.padding.w, "W")};
}

namespace {

void check_conv_args(const Shape& input, const Tensor& weight, std::span<const float> bias,
                     const WindowGeometry& g) {
  if (weight.rank() != 5) throw ShapeError("conv3d weight must be rank 5, got " + shape_to_string(weight.shape()));
  if (weight.extent(1) != input[0]) {
    throw ShapeError("conv3d expects " + std::to_string(weight.extent(1)) + " input channels, got " +
                     std::to_string(input[0]));
  }
  if (Extent3{weight.extent(2), weight.extent(3), weight.extent(4)} != g.kernel) {
    throw ShapeError("conv3d weight kernel extents do not match the declared geometry");
  }
  if (!bias.empty() && bias.size() != weight.extent(0)) {
    throw ShapeError("conv3d bias has " + std::to_string(bias.size()) + " entries for " +
                     std::to_string(weight.extent(0)) + " output channels");
  }
}

}  // namespace

Tensor conv3d_forward(const Tensor& input, const Tensor& weight, std::span<const float> bias,
                      const WindowGeometry& g) {
  require_rank4(input, "conv3d");
  check_conv_args(input.shape(), weight, bias, g);
  const Dims in(input.shape());
  Tensor output(window_output_shape(input.shape(), weight.extent(0), g));
  const Dims out(output.shape());
  const auto& k = kernels::active();

  const float* src = input.data().data();
  const float* wts = weight.data().data();
  float* dst = output.data().data();
  const std::size_t ksize = g.kernel.t * g.kernel.h * g.kernel.w;

  for (std::size_t co = 0; co < out.c; ++co) {
    float* out_plane = dst + co * out.plane();
    if (!bias.empty()) std::fill(out_plane, out_plane + out.plane(), bias[co]);
    for (std::size_t ci = 0; ci < in.c; ++ci) {
      const float* in_plane = src + ci * in.plane();
      const float* wk = wts + (co * in.c + ci) * ksize;
      for (std::size_t kt = 0; kt < g.kernel.t; ++kt) {
        for (std::size_t kh = 0; kh < g.kernel.h; ++kh) {
          for (std::size_t kw = 0; kw < g.kernel.w; ++kw) {
            const float wv = wk[(kt * g.kernel.h + kh) * g.kernel.w + kw];
            if (wv == 0.0f) continue;
            const Span1 ws = valid_outputs(out.w, in.w, g.stride.w, kw, g.padding.w);
            if (ws.lo >= ws.hi) continue;
            for_each_row(in, out, g, kt, kh, [&](std::size_t orow, std::size_t irow) {
              float* o = out_plane + orow;
              const float* i = in_plane + irow;
              if (g.stride.w == 1) {
                k.axpy(wv, i + ws.lo + kw - g.padding.w, o + ws.lo, ws.hi - ws.lo);
              } else {
                for (std::size_t ow = ws.lo; ow < ws.hi; ++ow) {
                  o[ow] += wv * i[ow * g.stride.w + kw - g.padding.w];
                }
              }
            });
          }
        }
      }
    }
  }
  return output;
}

Tensor conv3d_transpose(const Tensor& grad_out, const Tensor& weight, const WindowGeometry& g,
                        const Shape& input_shape) {
  require_rank4(grad_out, "conv3d_transpose");
  check_conv_args(input_shape, weight, {}, g);
  if (window_output_shape(input_shape, weight.extent(0), g) != grad_out.shape()) {
    throw ShapeError("conv3d_transpose: relevance shape " + shape_to_string(grad_out.shape()) +
                     " does not match the layer output");
  }
  const Dims in(input_shape);
  const Dims out(grad_out.shape());
  Tensor grad_in(input_shape);
  const auto& k = kernels::active();

  const float* src = grad_out.data().data();
  const float* wts = weight.data().data();
  float* dst = grad_in.data().data();
  const std::size_t ksize = g.kernel.t * g.kernel.h * g.kernel.w;

  for (std::size_t ci = 0; ci < in.c; ++ci) {
    float* in_plane = dst + ci * in.plane();
    for (std::size_t co = 0; co < out.c; ++co) {
      const float* out_plane = src + co * out.plane();
      const float* wk = wts + (co * in.c + ci) * ksize;
      for (std::size_t kt = 0; kt < g.kernel.t; ++kt) {
        for (std::size_t kh = 0; kh < g.kernel.h; ++kh) {
          for (std::size_t kw = 0; kw < g.kernel.w; ++kw) {
            const float wv = wk[(kt * g.kernel.h + kh) * g.kernel.w + kw];
            if (wv == 0.0f) continue;
            const Span1 ws = valid_outputs(out.w, in.w, g.stride.w, kw, g.padding.w);
            if (ws.lo >= ws.hi) continue;
            for_each_row(in, out, g, kt, kh, [&](std::size_t orow, std::size_t irow) {
              const float* o = out_plane + orow;
              float* i = in_plane + irow;
              if (g.stride.w == 1) {
                k.axpy(wv, o + ws.lo, i + ws.lo + kw - g.padding.w, ws.hi - ws.lo);
              } else {
                for (std::size_t ow = ws.lo; ow < ws.hi; ++ow) {
                  i[ow * g.stride.w + kw - g.padding.w] += wv * o[ow];
                }
              }
            });
          }
        }
      }
    }
  }
  return grad_in;
}

namespace {

void check_pool_geometry(const WindowGeometry& g) {
  if (2 * g.padding.t > g.kernel.t || 2 * g.padding.h > g.kernel.h || 2 * g.padding.w > g.kernel.w) {
    throw ShapeError("pool padding must be at most half the kernel extent");
  }
}

// Calls fn(out_index, in_index) for every in-bounds element of every
// window, in output order and raster order within each window.
template <typename Fn>
void for_each_window_element(const Dims& in, const Dims& out, const WindowGeometry& g, Fn&& fn) {
  std::size_t o = 0;
  for (std::size_t c = 0; c < out.c; ++c) {
    const std::size_t cbase = c * in.plane();
    for (std::size_t ot = 0; ot < out.t; ++ot) {
      for (std::size_t oh = 0; oh < out.h; ++oh) {
        for (std::size_t ow = 0; ow < out.w; ++ow, ++o) {
          for (std::size_t kt = 0; kt < g.kernel.t; ++kt) {
            const std::ptrdiff_t it = static_cast<std::ptrdiff_t>(ot * g.stride.t + kt) -
                                      static_cast<std::ptrdiff_t>(g.padding.t);
            if (it < 0 || it >= static_cast<std::ptrdiff_t>(in.t)) continue;
            for (std::size_t kh = 0; kh < g.kernel.h; ++kh) {
              const std::ptrdiff_t ih = static_cast<std::ptrdiff_t>(oh * g.stride.h + kh) -
                                        static_cast<std::ptrdiff_t>(g.padding.h);
              if (ih < 0 || ih >= static_cast<std::ptrdiff_t>(in.h)) continue;
              for (std::size_t kw = 0; kw < g.kernel.w; ++kw) {
                const std::ptrdiff_t iw = static_cast<std::ptrdiff_t>(ow * g.stride.w + kw) -
                                          static_cast<std::ptrdiff_t>(g.padding.w);
                if (iw < 0 || iw >= static_cast<std::ptrdiff_t>(in.w)) continue;
                fn(o, cbase + (static_cast<std::size_t>(it) * in.h + static_cast<std::size_t>(ih)) * in.w +
                          static_cast<std::size_t>(iw));
              }
            }
          }
        }
      }
    }
  }
}

}  // namespace

MaxPoolResult maxpool3d_forward(const Tensor& input, const WindowGeometry& g) {
  require_rank4(input, "maxpool3d");
  check_pool_geometry(g);
  if (input.size() > std::numeric_limits<std::uint32_t>::max()) throw ShapeError("maxpool3d input too large");
  const Dims in(input.shape());
  MaxPoolResult result{Tensor(window_output_shape(input.shape(), in.c, g), -std::numeric_limits<float>::infinity()),
                       {}};
  result.argmax.assign(result.output.size(), std::numeric_limits<std::uint32_t>::max());
  const Dims out(result.output.shape());
  const auto src = input.data();
  auto dst = result.output.data();
  for_each_window_element(in, out, g, [&](std::size_t o, std::size_t i) {
    // strict comparison keeps the first (lowest index) maximum
    if (result.argmax[o] == std::numeric_limits<std::uint32_t>::max() || src[i] > dst[o]) {
      dst[o] = src[i];
      result.argmax[o] = static_cast<std::uint32_t>(i);
    }
  });
  return result;
}

Tensor maxpool3d_scatter(const Tensor& grad_out, std::span<const std::uint32_t> argmax, const Shape& input_shape) {
  if (argmax.size() != grad_out.size()) {
    throw ShapeError("maxpool mask has " + std::to_string(argmax.size()) + " entries for relevance of shape " +
                     shape_to_string(grad_out.shape()));
  }
  Tensor grad_in(input_shape);
  auto dst = grad_in.data();
  const auto src = grad_out.data();
  for (std::size_t o = 0; o < argmax.size(); ++o) {
    if (argmax[o] >= dst.size()) throw ShapeError("maxpool mask index out of range for input shape");
    dst[argmax[o]] += src[o];
  }
  return grad_in;
}

Tensor avgpool3d_forward(const Tensor& input, const WindowGeometry& g) {
  require_rank4(input, "avgpool3d");
  check_pool_geometry(g);
  const Dims in(input.shape());
  Tensor output(window_output_shape(input.shape(), in.c, g));
  const Dims out(output.shape());
  const auto src = input.data();
  auto dst = output.data();
  std::vector<double> acc(output.size(), 0.0);
  for_each_window_element(in, out, g, [&](std::size_t o, std::size_t i) { acc[o] += src[i]; });
  const double volume = static_cast<double>(g.kernel.t * g.kernel.h * g.kernel.w);
  for (std::size_t o = 0; o < acc.size(); ++o) dst[o] = static_cast<float>(acc[o] / volume);
  return output;
}

Tensor avgpool3d_transpose(const Tensor& grad_out, const WindowGeometry& g, const Shape& input_shape) {
  require_rank4(grad_out, "avgpool3d_transpose");
  check_pool_geometry(g);
  const Dims in(input_shape);
  if (window_output_shape(input_shape, in.c, g) != grad_out.shape()) {
    throw ShapeError("avgpool3d_transpose: relevance shape " + shape_to_string(grad_out.shape()) +
                     " does not match the pooling geometry");
  }
  const Dims out(grad_out.shape());
  Tensor grad_in(input_shape);
  const float volume = static_cast<float>(g.kernel.t * g.kernel.h * g.kernel.w);
  const auto src = grad_out.data();
  auto dst = grad_in.data();
  for_each_window_element(in, out, g, [&](std::size_t o, std::size_t i) { dst[i] += src[o] / volume; });
  return grad_in;
}

Tensor linear_forward(const Tensor& input, const Tensor& weight, std::span<const float> bias) {
  if (input.rank() != 1) throw ShapeError("linear expects a rank-1 input, got " + shape_to_string(input.shape()));
  if (weight.rank() != 2 || weight.extent(1) != input.size()) {
    throw ShapeError("linear weight " + shape_to_string(weight.shape()) + " incompatible with input of " +
                     std::to_string(input.size()) + " features");
  }
  const std::size_t n_out = weight.extent(0);
  const std::size_t n_in = weight.extent(1);
  if (!bias.empty() && bias.size() != n_out) throw ShapeError("linear bias length mismatch");
  Tensor output(Shape{n_out});
  const auto& k = kernels::active();
  for (std::size_t j = 0; j < n_out; ++j) {
    output[j] = k.dot(weight.data().data() + j * n_in, input.data().data(), n_in) + (bias.empty() ? 0.0f : bias[j]);
  }
  return output;
}

Tensor linear_transpose(const Tensor& grad_out, const Tensor& weight) {
  if (weight.rank() != 2 || grad_out.size() != weight.extent(0)) {
    throw ShapeError("linear_transpose: relevance of " + std::to_string(grad_out.size()) +
                     " entries does not match weight " + shape_to_string(weight.shape()));
  }
  const std::size_t n_in = weight.extent(1);
  Tensor grad_in(Shape{n_in});
  const auto& k = kernels::active();
  for (std::size_t j = 0; j < weight.extent(0); ++j) {
    const float g = grad_out[j];
    if (g != 0.0f) k.axpy(g, weight.data().data() + j * n_in, grad_in.data().data(), n_in);
  }
  return grad_in;
}

Tensor relu_forward(const Tensor& input) {
  Tensor out(input.shape());
  kernels::active().relu(input.data().data(), out.data().data(), input.size());
  return out;
}

}  // namespace vrel
