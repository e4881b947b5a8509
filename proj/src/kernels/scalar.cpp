#include <cmath>

#include "vrel/kernels.hpp"

namespace vrel::kernels {
namespace {

void add(const float* a, const float* b, float* out, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) out[i] = a[i] + b[i];
}

void sub(const float* a, const float* b, float* out, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) out[i] = a[i] - b[i];
}

void mul(const float* a, const float* b, float* out, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) out[i] = a[i] * b[i];
}

void div_stabilized(const float* a, const float* b, float eps, float* out, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) {
    const float denom = b[i] >= 0.0f ? b[i] + eps : b[i] - eps;
    out[i] = a[i] / denom;
  }
}

void split_signs(const float* a, float* pos, float* neg, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) {
    // zeros go to both parts so that pos + neg reproduces the sign of zero
    pos[i] = a[i] >= 0.0f ? a[i] : 0.0f;
    neg[i] = a[i] <= 0.0f ? a[i] : 0.0f;
  }
}

void relu(const float* a, float* out, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) out[i] = a[i] > 0.0f ? a[i] : 0.0f;
}

void axpy(float alpha, const float* x, float* y, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) y[i] += alpha * x[i];
}

float dot(const float* x, const float* y, std::size_t n) {
  float acc = 0.0f;
  for (std::size_t i = 0; i < n; ++i) acc += x[i] * y[i];
  return acc;
}

double sum(const float* x, std::size_t n) {
  double acc = 0.0;
  for (std::size_t i = 0; i < n; ++i) acc += x[i];
  return acc;
}

double sum_abs(const float* x, std::size_t n) {
  double acc = 0.0;
  for (std::size_t i = 0; i < n; ++i) acc += std::fabs(x[i]);
  return acc;
}

}  // namespace

const KernelTable& scalar_table() {
  static const KernelTable table{
      "scalar", add, sub, mul, div_stabilized, split_signs, relu, axpy, dot, sum, sum_abs,
  };
  return table;
}

}  // namespace vrel::kernels
