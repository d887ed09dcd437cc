#if defined(__aarch64__)

#include <arm_neon.h>

#include "hd2/kernels.hpp"

namespace hd2::kern {
namespace {

void add_neon_impl(const double* a, const double* b, double* out, std::size_t n) {
  std::size_t i = 0;
  for (; i + 2 <= n; i += 2)
    vst1q_f64(out + i, vaddq_f64(vld1q_f64(a + i), vld1q_f64(b + i)));
  for (; i < n; ++i) out[i] = a[i] + b[i];
}

void mul_neon_impl(const double* a, const double* b, double* out, std::size_t n) {
  std::size_t i = 0;
  for (; i + 2 <= n; i += 2)
    vst1q_f64(out + i, vmulq_f64(vld1q_f64(a + i), vld1q_f64(b + i)));
  for (; i < n; ++i) out[i] = a[i] * b[i];
}

void relu_neon_impl(const double* a, double* out, std::size_t n) {
  const float64x2_t zero = vdupq_n_f64(0.0);
  std::size_t i = 0;
  for (; i + 2 <= n; i += 2) vst1q_f64(out + i, vmaxq_f64(vld1q_f64(a + i), zero));
  for (; i < n; ++i) out[i] = a[i] > 0.0 ? a[i] : 0.0;
}

void scale_neon_impl(const double* a, double c, double* out, std::size_t n) {
  const float64x2_t vc = vdupq_n_f64(c);
  std::size_t i = 0;
  for (; i + 2 <= n; i += 2) vst1q_f64(out + i, vmulq_f64(vld1q_f64(a + i), vc));
  for (; i < n; ++i) out[i] = a[i] * c;
}

void axpy_neon_impl(double c, const double* x, double* y, std::size_t n) {
  const float64x2_t vc = vdupq_n_f64(c);
  std::size_t i = 0;
  for (; i + 2 <= n; i += 2) {
    float64x2_t vy = vld1q_f64(y + i);
    vy = vaddq_f64(vy, vmulq_f64(vc, vld1q_f64(x + i)));
    vst1q_f64(y + i, vy);
  }
  for (; i < n; ++i) y[i] += c * x[i];
}

void madd_neon_impl(const double* a, const double* b, double* out, std::size_t n) {
  std::size_t i = 0;
  for (; i + 2 <= n; i += 2) {
    float64x2_t vo = vld1q_f64(out + i);
    vo = vaddq_f64(vo, vmulq_f64(vld1q_f64(a + i), vld1q_f64(b + i)));
    vst1q_f64(out + i, vo);
  }
  for (; i < n; ++i) out[i] += a[i] * b[i];
}

double dot_neon_impl(const double* a, const double* b, std::size_t n) {
  float64x2_t acc = vdupq_n_f64(0.0);
  std::size_t i = 0;
  for (; i + 2 <= n; i += 2)
    acc = vaddq_f64(acc, vmulq_f64(vld1q_f64(a + i), vld1q_f64(b + i)));
  double total = vgetq_lane_f64(acc, 0) + vgetq_lane_f64(acc, 1);
  for (; i < n; ++i) total += a[i] * b[i];
  return total;
}

double sum_neon_impl(const double* a, std::size_t n) {
  float64x2_t acc = vdupq_n_f64(0.0);
  std::size_t i = 0;
  for (; i + 2 <= n; i += 2) acc = vaddq_f64(acc, vld1q_f64(a + i));
  double total = vgetq_lane_f64(acc, 0) + vgetq_lane_f64(acc, 1);
  for (; i < n; ++i) total += a[i];
  return total;
}

}  // namespace

const Ops& neon_ops() {
  static const Ops ops{
      add_neon_impl, mul_neon_impl,  relu_neon_impl, scale_neon_impl,
      axpy_neon_impl, madd_neon_impl, dot_neon_impl,  sum_neon_impl,
      "neon",
  };
  return ops;
}

}  // namespace hd2::kern

#endif  // aarch64
