#pragma once

#include <cstddef>

// Flat float kernels behind every inner loop of the engine. Each table is a
// complete implementation; the scalar table is the reference and the
// vector tables are checked against it for equivalence.

namespace vrel::kernels {

struct KernelTable {
  const char* name;

  void (*add)(const float* a, const float* b, float* out, std::size_t n);
  void (*sub)(const float* a, const float* b, float* out, std::size_t n);
  void (*mul)(const float* a, const float* b, float* out, std::size_t n);
  // out = a / (b + sign(b) * eps), sign(0) = +1
  void (*div_stabilized)(const float* a, const float* b, float eps, float* out, std::size_t n);
  void (*split_signs)(const float* a, float* pos, float* neg, std::size_t n);
  void (*relu)(const float* a, float* out, std::size_t n);
  // y += alpha * x
  void (*axpy)(float alpha, const float* x, float* y, std::size_t n);
  float (*dot)(const float* x, const float* y, std::size_t n);
  double (*sum)(const float* x, std::size_t n);
  double (*sum_abs)(const float* x, std::size_t n);
};

const KernelTable& scalar_table();

/// Null when the variant was not compiled in or the CPU lacks the features.
const KernelTable* avx2_table();

/// Table used by the engine. Chosen once per process: VREL_KERNELS=scalar
/// or VREL_KERNELS=avx2 forces a table, otherwise the widest supported one.
const KernelTable& active();

}  // namespace vrel::kernels
