#include <cstdlib>
#include <string_view>

#include "vrel/error.hpp"
#include "vrel/kernels.hpp"

namespace vrel::kernels {

#if defined(VREL_HAVE_AVX2)
const KernelTable& avx2_table_unchecked();
#endif

const KernelTable* avx2_table() {
#if defined(VREL_HAVE_AVX2) && (defined(__GNUC__) || defined(__clang__))
  static const bool supported = __builtin_cpu_supports("avx2") && __builtin_cpu_supports("fma");
  return supported ? &avx2_table_unchecked() : nullptr;
#else
  return nullptr;
#endif
}

namespace {

const KernelTable& select() {
  const char* env = std::getenv("VREL_KERNELS");
  const std::string_view choice = env ? env : "auto";
  if (choice == "scalar") return scalar_table();
  if (choice == "avx2") {
    if (const KernelTable* t = avx2_table()) return *t;
    throw ConfigError("VREL_KERNELS=avx2 requested but AVX2/FMA is unavailable");
  }
  if (choice != "auto" && !choice.empty()) {
    throw ConfigError("unknown VREL_KERNELS value '" + std::string(choice) + "'");
  }
  if (const KernelTable* t = avx2_table()) return *t;
  return scalar_table();
}

}  // namespace

const KernelTable& active() {
  static const KernelTable& table = select();
  return table;
}

}  // namespace vrel::kernels
