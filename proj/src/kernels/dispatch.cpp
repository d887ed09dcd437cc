#include <cstdlib>
#include <cstring>
#include <string>

#include "hd2/kernels.hpp"

namespace hd2::kern {
namespace {

const Ops& resolve() {
  const char* req = std::getenv("HD2_SIMD");
  std::string want = req ? req : "auto";

  if (want == "scalar") return scalar_ops();
#if defined(__x86_64__) || defined(_M_X64)
  if (want == "avx2" && avx2_supported()) return avx2_ops();
  if (want == "auto" && avx2_supported()) return avx2_ops();
#endif
#if defined(__aarch64__)
  if (want == "neon" || want == "auto") return neon_ops();
#endif
  return scalar_ops();
}

}  // namespace

const Ops& active() {
  static const Ops& ops = resolve();
  return ops;
}

const char* active_name() { return active().name; }

}  // namespace hd2::kern
