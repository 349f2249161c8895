#include <atomic>
#include <cstdlib>
#include <string_view>

#include "fpfgain/simd/kernels.hpp"

namespace fpfgain::simd {

#if defined(FPFGAIN_HAVE_AVX2)
const KernelTable& avx2_table();
#endif

const KernelTable* avx2_kernels() {
#if defined(FPFGAIN_HAVE_AVX2)
  static const bool supported = __builtin_cpu_supports("avx2") && __builtin_cpu_supports("fma");
  return supported ? &avx2_table() : nullptr;
#else
  return nullptr;
#endif
}

namespace {

const KernelTable& automatic() {
  static const KernelTable* chosen = [] {
    if (const char* env = std::getenv("FPFGAIN_SIMD"); env && std::string_view(env) == "scalar")
      return &scalar_kernels();
    if (const auto* t = avx2_kernels()) return t;
    return &scalar_kernels();
  }();
  return *chosen;
}

std::atomic<const KernelTable*> override_table{nullptr};

} // namespace

const KernelTable& active() {
  if (const auto* t = override_table.load(std::memory_order_acquire)) return *t;
  return automatic();
}

void set_active(const KernelTable* table) { override_table.store(table, std::memory_order_release); }

} // namespace fpfgain::simd
