#include <limits>

#include "peng/simd/kernels.hpp"

namespace peng::simd {

namespace {

void dot_rows_scalar(const float* query, const float* matrix, std::size_t rows, std::size_t dim, double* out) {
    for (std::size_t r = 0; r < rows; ++r) {
        const float* row = matrix + r * dim;
        double sum = 0.0;
        for (std::size_t i = 0; i < dim; ++i) sum += static_cast<double>(query[i]) * static_cast<double>(row[i]);
        out[r] = sum;
    }
}

void squared_errors_scalar(const ProjectionParams& p, const PointsView& pts, double* out) {
    for (std::size_t i = 0; i < pts.count; ++i) {
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

const KernelTable& scalar_kernels() {
    static const KernelTable table{"scalar", dot_rows_scalar, squared_errors_scalar};
    return table;
}

}  // namespace peng::simd
