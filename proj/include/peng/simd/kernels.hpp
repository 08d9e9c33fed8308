#pragma once

// Data-parallel inner loops with a scalar reference implementation and
// vectorised variants chosen at runtime.
//
// squared_reprojection_errors must be bitwise identical across variants: the
// variants perform the same IEEE operations in the same order per element,
// and the kernel sources are compiled without floating-point contraction.
// dot_rows may differ in the last bits because the vector variants
// accumulate in several lanes.

#include <cstddef>
#include <string_view>

namespace peng::simd {

struct ProjectionParams {
    double r[9];  // row-major rotation
    double t[3];
    double fx, fy, cx, cy;
};

/// Structure-of-arrays view over correspondences.
struct PointsView {
    const double* x;
    const double* y;
    const double* z;
    const double* u;
    const double* v;
    std::size_t count;
};

/// out[i] = dot(query, matrix[i * dim .. (i+1) * dim)) accumulated in double.
using DotRowsFn = void (*)(const float* query, const float* matrix, std::size_t rows, std::size_t dim,
                           double* out);

/// out[i] = squared pixel distance between projection of point i and its
/// observation; +infinity when the transformed depth is not positive.
using SquaredErrorsFn = void (*)(const ProjectionParams& p, const PointsView& pts, double* out);

struct KernelTable {
    std::string_view name;
    DotRowsFn dot_rows;
    SquaredErrorsFn squared_reprojection_errors;
};

const KernelTable& scalar_kernels();

/// Null when the variant was not compiled in or the CPU lacks the features.
const KernelTable* avx2_kernels();

/// Table used by the library. Chosen once: the best supported variant, unless
/// the PENG_SIMD environment variable names one ("scalar", "avx2").
const KernelTable& active_kernels();

}  // namespace peng::simd
