// AVX2 + FMA kernels. This translation unit is compiled with -mavx2 -mfma;
// nothing here may run before dispatch.cpp has confirmed CPU support.

#include <immintrin.h>

#include <cmath>

#include "vrel/kernels.hpp"

namespace vrel::kernels {
namespace {

constexpr std::size_t kLanes = 8;

template <typename Op>
inline void binary(const float* a, const float* b, float* out, std::size_t n, Op op) {
  std::size_t i = 0;
  for (; i + kLanes <= n; i += kLanes) {
    _mm256_storeu_ps(out + i, op(_mm256_loadu_ps(a + i), _mm256_loadu_ps(b + i)));
  }
  for (; i < n; ++i) {
    _mm_store_ss(out + i, _mm256_castps256_ps128(
                              op(_mm256_set1_ps(a[i]), _mm256_set1_ps(b[i]))));
  }
}

void add(const float* a, const float* b, float* out, std::size_t n) {
  binary(a, b, out, n, [](__m256 x, __m256 y) { return _mm256_add_ps(x, y); });
}

void sub(const float* a, const float* b, float* out, std::size_t n) {
  binary(a, b, out, n, [](__m256 x, __m256 y) { return _mm256_sub_ps(x, y); });
}

void mul(const float* a, const float* b, float* out, std::size_t n) {
  binary(a, b, out, n, [](__m256 x, __m256 y) { return _mm256_mul_ps(x, y); });
}

void div_stabilized(const float* a, const float* b, float eps, float* out, std::size_t n) {
  const __m256 zero = _mm256_setzero_ps();
  const __m256 pos_eps = _mm256_set1_ps(eps);
  const __m256 neg_eps = _mm256_set1_ps(-eps);
  binary(a, b, out, n, [&](__m256 x, __m256 y) {
    const __m256 nonneg = _mm256_cmp_ps(y, zero, _CMP_GE_OQ);
    const __m256 shift = _mm256_blendv_ps(neg_eps, pos_eps, nonneg);
    return _mm256_div_ps(x, _mm256_add_ps(y, shift));
  });
}

void split_signs(const float* a, float* pos, float* neg, std::size_t n) {
  const __m256 zero = _mm256_setzero_ps();
  std::size_t i = 0;
  for (; i + kLanes <= n; i += kLanes) {
    const __m256 v = _mm256_loadu_ps(a + i);
    _mm256_storeu_ps(pos + i, _mm256_and_ps(v, _mm256_cmp_ps(v, zero, _CMP_GE_OQ)));
    _mm256_storeu_ps(neg + i, _mm256_and_ps(v, _mm256_cmp_ps(v, zero, _CMP_LE_OQ)));
  }
  for (; i < n; ++i) {
    pos[i] = a[i] >= 0.0f ? a[i] : 0.0f;
    neg[i] = a[i] <= 0.0f ? a[i] : 0.0f;
  }
}

void relu(const float* a, float* out, std::size_t n) {
  const __m256 zero = _mm256_setzero_ps();
  std::size_t i = 0;
  for (; i + kLanes <= n; i += kLanes) {
    const __m256 v = _mm256_loadu_ps(a + i);
    _mm256_storeu_ps(out + i, _mm256_and_ps(v, _mm256_cmp_ps(v, zero, _CMP_GT_OQ)));
  }
  for (; i < n; ++i) out[i] = a[i] > 0.0f ? a[i] : 0.0f;
}

void axpy(float alpha, const float* x, float* y, std::size_t n) {
  const __m256 va = _mm256_set1_ps(alpha);
  std::size_t i = 0;
  for (; i + kLanes <= n; i += kLanes) {
    _mm256_storeu_ps(y + i, _mm256_fmadd_ps(va, _mm256_loadu_ps(x + i), _mm256_loadu_ps(y + i)));
  }
  for (; i < n; ++i) y[i] = std::fma(alpha, x[i], y[i]);
}

inline float hsum(__m256 v) {
  __m128 lo = _mm256_castps256_ps128(v);
  const __m128 hi = _mm256_extractf128_ps(v, 1);
  lo = _mm_add_ps(lo, hi);
  lo = _mm_add_ps(lo, _mm_movehl_ps(lo, lo));
  lo = _mm_add_ss(lo, _mm_movehdup_ps(lo));
  return _mm_cvtss_f32(lo);
}

inline double hsum(__m256d v) {
  __m128d lo = _mm256_castpd256_pd128(v);
  lo = _mm_add_pd(lo, _mm256_extractf128_pd(v, 1));
  lo = _mm_add_sd(lo, _mm_unpackhi_pd(lo, lo));
  return _mm_cvtsd_f64(lo);
}

float dot(const float* x, const float* y, std::size_t n) {
  __m256 acc0 = _mm256_setzero_ps();
  __m256 acc1 = _mm256_setzero_ps();
  std::size_t i = 0;
  for (; i + 2 * kLanes <= n; i += 2 * kLanes) {
    acc0 = _mm256_fmadd_ps(_mm256_loadu_ps(x + i), _mm256_loadu_ps(y + i), acc0);
    acc1 = _mm256_fmadd_ps(_mm256_loadu_ps(x + i + kLanes), _mm256_loadu_ps(y + i + kLanes), acc1);
  }
  for (; i + kLanes <= n; i += kLanes) {
    acc0 = _mm256_fmadd_ps(_mm256_loadu_ps(x + i), _mm256_loadu_ps(y + i), acc0);
  }
  float acc = hsum(_mm256_add_ps(acc0, acc1));
  for (; i < n; ++i) acc = std::fma(x[i], y[i], acc);
  return acc;
}

template <bool kAbs>
double reduce(const float* x, std::size_t n) {
  const __m256 sign_mask = _mm256_castsi256_ps(_mm256_set1_epi32(0x7fffffff));
  __m256d acc0 = _mm256_setzero_pd();
  __m256d acc1 = _mm256_setzero_pd();
  std::size_t i = 0;
  for (; i + kLanes <= n; i += kLanes) {
    __m256 v = _mm256_loadu_ps(x + i);
    if constexpr (kAbs) v = _mm256_and_ps(v, sign_mask);
    acc0 = _mm256_add_pd(acc0, _mm256_cvtps_pd(_mm256_castps256_ps128(v)));
    acc1 = _mm256_add_pd(acc1, _mm256_cvtps_pd(_mm256_extractf128_ps(v, 1)));
  }
  double acc = hsum(_mm256_add_pd(acc0, acc1));
  for (; i < n; ++i) acc += kAbs ? std::fabs(x[i]) : x[i];
  return acc;
}

double sum(const float* x, std::size_t n) { return reduce<false>(x, n); }
double sum_abs(const float* x, std::size_t n) { return reduce<true>(x, n); }

}  // namespace

const KernelTable& avx2_table_unchecked() {
  static const KernelTable table{
      "avx2", add, sub, mul, div_stabilized, split_signs, relu, axpy, dot, sum, sum_abs,
  };
  return table;
}

}  // namespace vrel::kernels
