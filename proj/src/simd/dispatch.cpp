#include <cstdlib>
#include <string_view>

#include "peng/simd/kernels.hpp"

namespace peng::simd {

#if defined(PENG_HAVE_AVX2_KERNELS)
const KernelTable& avx2_kernel_table();
#endif

const KernelTable* avx2_kernels() {
#if defined(PENG_HAVE_AVX2_KERNELS) && (defined(__GNUC__) || defined(__clang__))
    static const bool supported = __builtin_cpu_supports("avx2") && __builtin_cpu_supports("fma");
    return supported ? &avx2_kernel_table() : nullptr;
#else
    return nullptr;
#endif
}

namespace {

const KernelTable& choose() {
    const char* forced = std::getenv("PENG_SIMD");
    const std::string_view name = forced ? forced : "";
    if (name == "scalar") return scalar_kernels();
    if (const KernelTable* avx2 = avx2_kernels()) return *avx2;
    return scalar_kernels();
}

}  // namespace

const KernelTable& active_kernels() {
    static const KernelTable& table = choose();
    return table;
}

}  // namespace peng::simd
