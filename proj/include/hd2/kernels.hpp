#pragma once

#include <cstddef>

namespace hd2::kern {

// Flat f64 kernels behind every tensor inner loop. Each entry has a scalar
// reference implementation and, where the CPU supports it, a SIMD variant.
// All variants of one kernel must agree with the scalar reference: bitwise
// for the elementwise entries, within a small relative tolerance for the
// reductions (dot/sum), whose accumulation order differs between variants.
struct Ops {
  void (*add)(const double* a, const double* b, double* out, std::size_t n);
  void (*mul)(const double* a, const double* b, double* out, std::size_t n);
  void (*relu)(const double* a, double* out, std::size_t n);
  // out[i] = a[i] * c
  void (*scale)(const double* a, double c, double* out, std::size_t n);
  // y[i] += c * x[i]
  void (*axpy)(double c, const double* x, double* y, std::size_t n);
  // out[i] += a[i] * b[i]
  void (*madd)(const double* a, const double* b, double* out, std::size_t n);
  double (*dot)(const double* a, const double* b, std::size_t n);
  double (*sum)(const double* a, std::size_t n);
  const char* name;
};

const Ops& scalar_ops();

#if defined(__x86_64__) || defined(_M_X64)
const Ops& avx2_ops();
bool avx2_supported();
#endif
#if defined(__aarch64__)
const Ops& neon_ops();
#endif

// Variant resolved once per process from CPU capabilities; the HD2_SIMD
// environment variable (scalar|avx2|neon|auto) overrides the pick when the
// requested variant is available on this CPU.
const Ops& active();
const char* active_name();

}  // namespace hd2::kern
