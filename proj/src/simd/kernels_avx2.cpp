// Compiled with -mavx2 -mfma. Only reached through avx2_kernels(), which
// checks the CPU first.

#include <immintrin.h>

#include <limits>

#include "peng/simd/kernels.hpp"

namespace peng::simd {

namespace {

double horizontal_sum(__m256d v) {
    const __m128d lo = _mm256_castpd256_pd128(v);
    const __m128d hi = _mm256_extractf128_pd(v, 1);
    const __m128d pair = _mm_add_pd(lo, hi);
    const __m128d swapped = _mm_unpackhi_pd(pair, pair);
    return _mm_cvtsd_f64(_mm_add_sd(pair, swapped));
}

void dot_rows_avx2(const float* query, const float* matrix, std::size_t rows, std::size_t dim, double* out) {
    const std::size_t blocked = dim - dim % 8;
    for (std::size_t r = 0; r < rows; ++r) {
        const float* row = matrix + r * dim;
        __m256d acc0 = _mm256_setzero_pd();
        __m256d acc1 = _mm256_setzero_pd();
        for (std::size_t i = 0; i < blocked; i += 8) {
            const __m256 q = _mm256_loadu_ps(query + i);
            const __m256 m = _mm256_loadu_ps(row + i);
            const __m256d q0 = _mm256_cvtps_pd(_mm256_castps256_ps128(q));
            const __m256d q1 = _mm256_cvtps_pd(_mm256_extractf128_ps(q, 1));
            const __m256d m0 = _mm256_cvtps_pd(_mm256_castps256_ps128(m));
            const __m256d m1 = _mm256_cvtps_pd(_mm256_extractf128_ps(m, 1));
            acc0 = _mm256_fmadd_pd(q0, m0, acc0);
            acc1 = _mm256_fmadd_pd(q1, m1, acc1);
        }
        double sum = horizontal_sum(_mm256_add_pd(acc0, acc1));
        for (std::size_t i = blocked; i < dim; ++i) sum += static_cast<double>(query[i]) * static_cast<double>(row[i]);
        out[r] = sum;
    }
}

void squared_errors_avx2(const ProjectionParams& p, const PointsView& pts, double* out) {
    const __m256d r0 = _mm256_set1_pd(p.r[0]), r1 = _mm256_set1_pd(p.r[1]), r2 = _mm256_set1_pd(p.r[2]);
    const __m256d r3 = _mm256_set1_pd(p.r[3]), r4 = _mm256_set1_pd(p.r[4]), r5 = _mm256_set1_pd(p.r[5]);
    const __m256d r6 = _mm256_set1_pd(p.r[6]), r7 = _mm256_set1_pd(p.r[7]), r8 = _mm256_set1_pd(p.r[8]);
    const __m256d t0 = _mm256_set1_pd(p.t[0]), t1 = _mm256_set1_pd(p.t[1]), t2 = _mm256_set1_pd(p.t[2]);
    const __m256d fx = _mm256_set1_pd(p.fx), fy = _mm256_set1_pd(p.fy);
    const __m256d cx = _mm256_set1_pd(p.cx), cy = _mm256_set1_pd(p.cy);
    const __m256d zero = _mm256_setzero_pd();
    const __m256d inf = _mm256_set1_pd(std::numeric_limits<double>::infinity());

    const std::size_t blocked = pts.count - pts.count % 4;
    for (std::size_t i = 0; i < blocked; i += 4) {
        const __m256d x = _mm256_loadu_pd(pts.x + i);
        const __m256d y = _mm256_loadu_pd(pts.y + i);
        const __m256d z = _mm256_loadu_pd(pts.z + i);
        // Same association as the scalar reference: ((a*x + b*y) + c*z) + t.
        const __m256d xc = _mm256_add_pd(
            _mm256_add_pd(_mm256_add_pd(_mm256_mul_pd(r0, x), _mm256_mul_pd(r1, y)), _mm256_mul_pd(r2, z)), t0);
        const __m256d yc = _mm256_add_pd(
            _mm256_add_pd(_mm256_add_pd(_mm256_mul_pd(r3, x), _mm256_mul_pd(r4, y)), _mm256_mul_pd(r5, z)), t1);
        const __m256d zc = _mm256_add_pd(
            _mm256_add_pd(_mm256_add_pd(_mm256_mul_pd(r6, x), _mm256_mul_pd(r7, y)), _mm256_mul_pd(r8, z)), t2);
        const __m256d du = _mm256_sub_pd(_mm256_add_pd(_mm256_div_pd(_mm256_mul_pd(fx, xc), zc), cx),
                                         _mm256_loadu_pd(pts.u + i));
        const __m256d dv = _mm256_sub_pd(_mm256_add_pd(_mm256_div_pd(_mm256_mul_pd(fy, yc), zc), cy),
                                         _mm256_loadu_pd(pts.v + i));
        const __m256d err = _mm256_add_pd(_mm256_mul_pd(du, du), _mm256_mul_pd(dv, dv));
        // Lanes failing zc > 0 (including NaN) take +inf.
        const __m256d in_front = _mm256_cmp_pd(zc, zero, _CMP_GT_OQ);
        _mm256_storeu_pd(out + i, _mm256_blendv_pd(inf, err, in_front));
    }
    for (std::size_t i = blocked; i < pts.count; ++i) {
        const double x = pts.x[i];
        const double y = pts.y[i];
        const double z = pts.z[i];
        const double xc = ((p.r[0] * x + p.r[1] * y) + p.r[2] * z) + p.t[0];
        const double yc = ((p.r[3] * x + p.r[4] * y) + p.r[5] * z) + p.t[1];
        const double zc = ((p.r[6] * x + p.r[7] * y) + p.r[8] * z) + p.t[2];
        if (!(zc > 0.0)) {
            out[i] = std::numeric_limits<double>::infinity();
            continue;
        }
        const double du = (p.fx * xc / zc + p.cx) - pts.u[i];
        const double dv = (p.fy * yc / zc + p.cy) - pts.v[i];
        out[i] = du * du + dv * dv;
    }
}

}  // namespace

const KernelTable& avx2_kernel_table() {
    static const KernelTable table{"avx2", dot_rows_avx2, squared_errors_avx2};
    return table;
}

}  // namespace peng::simd
