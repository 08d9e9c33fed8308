#include <algorithm>
#include <cmath>

#include <Eigen/Eigenvalues>
#include <Eigen/SVD>

#include "peng/pnp.hpp"

namespace peng {

std::vector<double> solve_quartic(const std::array<double, 5>& c) {
    std::vector<double> roots;
    const double scale = std::max({std::abs(c[0]), std::abs(c[1]), std::abs(c[2]), std::abs(c[3]), std::abs(c[4])});
    if (scale == 0.0) return roots;
    int degree = 4;
    while (degree > 0 && std::abs(c[degree]) <= 1e-14 * scale) --degree;
    if (degree == 0) return roots;

    Eigen::MatrixXd companion = Eigen::MatrixXd::Zero(degree, degree);
    for (int i = 0; i < degree; ++i) companion(0, i) = -c[degree - 1 - i] / c[degree];
    for (int i = 1; i < degree; ++i) companion(i, i - 1) = 1.0;
    const Eigen::EigenSolver<Eigen::MatrixXd> solver(companion, false);
    const auto eig = solver.eigenvalues();

    auto poly = [&](double x) {
        double v = 0.0;
        for (int i = degree; i >= 0; --i) v = v * x + c[i];
        return v;
    };
    auto dpoly = [&](double x) {
        double v = 0.0;
        for (int i = degree; i >= 1; --i) v = v * x + i * c[i];
        return v;
    };

    for (int i = 0; i < degree; ++i) {
        const double re = eig[i].real();
        if (std::abs(eig[i].imag()) > 1e-6 * std::max(1.0, std::abs(re))) continue;
        double x = re;
        for (int it = 0; it < 8; ++it) {
            const double d = dpoly(x);
            if (d == 0.0) break;
            const double step = poly(x) / d;
            x -= step;
            if (std::abs(step) <= 1e-15 * std::max(1.0, std::abs(x))) break;
        }
        roots.push_back(x);
    }
    std::sort(roots.begin(), roots.end());
    return roots;
}

Pose align_points(std::span<const Vec3> src, std::span<const Vec3> dst) {
    const std::size_t n = src.size();
    Vec3 ms = Vec3::Zero();
    Vec3 md = Vec3::Zero();
    for (std::size_t i = 0; i < n; ++i) {
        ms += src[i];
        md += dst[i];
    }
    ms /= static_cast<double>(n);
    md /= static_cast<double>(n);
    Mat3 cov = Mat3::Zero();
    for (std::size_t i = 0; i < n; ++i) cov += (dst[i] - md) * (src[i] - ms).transpose();
    const Eigen::JacobiSVD<Mat3> svd(cov, Eigen::ComputeFullU | Eigen::ComputeFullV);
    Mat3 d = Mat3::Identity();
    if ((svd.matrixU() * svd.matrixV().transpose()).determinant() < 0.0) d(2, 2) = -1.0;
    const Mat3 r = svd.matrixU() * d * svd.matrixV().transpose();
    return {Rotation::from_matrix(r), md - r * ms};
}

std::vector<Pose> solve_p3p(const std::array<Vec3, 3>& world, const std::array<Vec3, 3>& bearings) {
    std::vector<Pose> poses;
    const double a2 = (world[1] - world[2]).squaredNorm();
    const double b2 = (world[0] - world[2]).squaredNorm();
    const double c2 = (world[0] - world[1]).squaredNorm();
    if (a2 < 1e-12 || b2 < 1e-12 || c2 < 1e-12) return poses;
    if ((world[1] - world[0]).cross(world[2] - world[0]).norm() < 1e-9 * std::sqrt(b2 * c2)) return poses;

    const double ca = bearings[1].dot(bearings[2]);
    const double cb = bearings[0].dot(bearings[2]);
    const double cg = bearings[0].dot(bearings[1]);

    // Grunert's quartic in v = s3 / s1.
    const double p = (a2 - c2) / b2;
    const double q = (a2 + c2) / b2;
    std::array<double, 5> coeff;
    coeff[4] = (p - 1.0) * (p - 1.0) - 4.0 * c2 / b2 * ca * ca;
    coeff[3] = 4.0 * (p * (1.0 - p) * cb - (1.0 - q) * ca * cg + 2.0 * c2 / b2 * ca * ca * cb);
    coeff[2] = 2.0 * (p * p - 1.0 + 2.0 * p * p * cb * cb + 2.0 * (b2 - c2) / b2 * ca * ca -
                      4.0 * q * ca * cb * cg + 2.0 * (b2 - a2) / b2 * cg * cg);
    coeff[1] = 4.0 * (-p * (1.0 + p) * cb + 2.0 * a2 / b2 * cg * cg * cb - (1.0 - q) * ca * cg);
    coeff[0] = (1.0 + p) * (1.0 + p) - 4.0 * a2 / b2 * cg * cg;

    for (double v : solve_quartic(coeff)) {
        if (!(v > 0.0)) continue;
        const double denom_s = 1.0 + v * v - 2.0 * v * cb;
        if (!(denom_s > 0.0)) continue;
        double s1 = std::sqrt(b2 / denom_s);

        // u = s2 / s1 from the linear relation, or from the c-equation when
        // that relation is singular.
        std::vector<double> us;
        const double denom_u = 2.0 * (cg - v * ca);
        if (std::abs(denom_u) > 1e-10) {
            us.push_back(((p - 1.0) * v * v - 2.0 * p * cb * v + 1.0 + p) / denom_u);
        } else {
            const double disc = cg * cg - (1.0 - c2 / (s1 * s1));
            if (disc < 0.0) continue;
            us.push_back(cg + std::sqrt(disc));
            us.push_back(cg - std::sqrt(disc));
        }
        for (double u : us) {
            if (!(u > 0.0)) continue;
            Vec3 s(s1, u * s1, v * s1);
            // Newton polish on the three law-of-cosines equations.
            for (int it = 0; it < 5; ++it) {
                const Vec3 f(s[1] * s[1] + s[2] * s[2] - 2.0 * s[1] * s[2] * ca - a2,
                             s[0] * s[0] + s[2] * s[2] - 2.0 * s[0] * s[2] * cb - b2,
                             s[0] * s[0] + s[1] * s[1] - 2.0 * s[0] * s[1] * cg - c2);
                Mat3 j;
                j << 0.0, 2.0 * s[1] - 2.0 * s[2] * ca, 2.0 * s[2] - 2.0 * s[1] * ca,
                     2.0 * s[0] - 2.0 * s[2] * cb, 0.0, 2.0 * s[2] - 2.0 * s[0] * cb,
                     2.0 * s[0] - 2.0 * s[1] * cg, 2.0 * s[1] - 2.0 * s[0] * cg, 0.0;
                const Eigen::FullPivLU<Mat3> lu(j);
                if (!lu.isInvertible()) break;
                const Vec3 step = lu.solve(f);
                s -= step;
                if (step.norm() < 1e-14 * s.norm()) break;
            }
            if (!(s.minCoeff() > 0.0) || !s.allFinite()) continue;
            const std::array<Vec3, 3> cam{s[0] * bearings[0], s[1] * bearings[1], s[2] * bearings[2]};
            // Reject roots that do not actually satisfy the distance constraints.
            const double err = std::abs((cam[1] - cam[2]).squaredNorm() - a2) / a2 +
                               std::abs((cam[0] - cam[2]).squaredNorm() - b2) / b2 +
                               std::abs((cam[0] - cam[1]).squaredNorm() - c2) / c2;
            if (err > 1e-6) continue;
            poses.push_back(align_points(world, cam));
        }
    }
    return poses;
}

}  // namespace peng
