#include "peng/pnp.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include <Eigen/Cholesky>

#include "peng/error.hpp"
#include "peng/rng.hpp"
#include "peng/simd/kernels.hpp"

namespace peng {

void RansacConfig::validate() const {
    if (!(epsilon > 0.0)) throw Error(Errc::invalid_argument, "ransac epsilon must be positive");
    if (max_iterations < 1) throw Error(Errc::invalid_argument, "ransac max_iterations must be >= 1");
    if (refine_iterations < 0) throw Error(Errc::invalid_argument, "ransac refine_iterations must be >= 0");
}

Vec3 bearing_vector(const CameraIntrinsics& K, const Vec2& pixel) {
    return Vec3((pixel.x() - K.cx) / K.fx, (pixel.y() - K.cy) / K.fy, 1.0).normalized();
}

namespace {

struct SoaPoints {
    std::vector<double> x, y, z, u, v;

    explicit SoaPoints(std::span<const Correspondence> c) {
        const std::size_t n = c.size();
        x.resize(n);
        y.resize(n);
        z.resize(n);
        u.resize(n);
        v.resize(n);
        for (std::size_t i = 0; i < n; ++i) {
            x[i] = c[i].world.x();
            y[i] = c[i].world.y();
            z[i] = c[i].world.z();
            u[i] = c[i].pixel.x();
            v[i] = c[i].pixel.y();
        }
    }

    simd::PointsView view() const { return {x.data(), y.data(), z.data(), u.data(), v.data(), x.size()}; }
};

simd::ProjectionParams params_for(const CameraIntrinsics& K, const Pose& pose) {
    simd::ProjectionParams p{};
    const Mat3 r = pose.rotation.matrix();
    for (int i = 0; i < 3; ++i) {
        for (int j = 0; j < 3; ++j) p.r[3 * i + j] = r(i, j);
        p.t[i] = pose.translation[i];
    }
    p.fx = K.fx;
    p.fy = K.fy;
    p.cx = K.cx;
    p.cy = K.cy;
    return p;
}

struct Score {
    int inliers = 0;
    double rms = std::numeric_limits<double>::infinity();
};

Score score(const simd::KernelTable& kernels, const SoaPoints& pts, const CameraIntrinsics& K, const Pose& pose,
            double eps2, std::vector<double>& sq) {
    kernels.squared_reprojection_errors(params_for(K, pose), pts.view(), sq.data());
    Score s;
    double sum = 0.0;
    for (double e : sq) {
        if (e <= eps2) {
            ++s.inliers;
            sum += e;
        }
    }
    if (s.inliers > 0) s.rms = std::sqrt(sum / s.inliers);
    return s;
}

bool better(const Score& a, const Score& b) {
    return a.inliers > b.inliers || (a.inliers == b.inliers && a.rms < b.rms);
}

}  // namespace

PoseEstimate refine_pose(std::span<const Correspondence> correspondences, const CameraIntrinsics& K,
                         const Pose& start, const std::vector<int>& subset, int iterations) {
    using Mat6 = Eigen::Matrix<double, 6, 6>;
    using Vec6 = Eigen::Matrix<double, 6, 1>;

    auto cost = [&](const Pose& pose) {
        double sum = 0.0;
        for (int i : subset) {
            const double e = reprojection_error_or_inf(K, pose, correspondences[i]);
            sum += e * e;
        }
        return sum;
    };

    PoseEstimate out;
    out.pose = start;
    out.inlier_ids = subset;
    out.inlier_count = static_cast<int>(subset.size());
    const double n = std::max<double>(1.0, static_cast<double>(subset.size()));
    double current = cost(start);
    out.rms_trace.push_back(std::sqrt(current / n));

    double lambda = 0.1;
    for (int iter = 0; iter < iterations && std::isfinite(current) && current > 0.0; ++iter) {
        Mat6 h = Mat6::Zero();
        Vec6 g = Vec6::Zero();
        const Mat3 r = out.pose.rotation.matrix();
        for (int i : subset) {
            const Vec3 rx = r * correspondences[i].world;
            const Vec3 pc = rx + out.pose.translation;
            const double iz = 1.0 / pc.z();
            const Vec2 res(K.fx * pc.x() * iz + K.cx - correspondences[i].pixel.x(),
                           K.fy * pc.y() * iz + K.cy - correspondences[i].pixel.y());
            Eigen::Matrix<double, 2, 3> dproj;
            dproj << K.fx * iz, 0.0, -K.fx * pc.x() * iz * iz,
                     0.0, K.fy * iz, -K.fy * pc.y() * iz * iz;
            // Left perturbation exp([w]x) R: d(pc)/dw = -[R X]x, d(pc)/dt = I.
            Mat3 skew;
            skew << 0.0, -rx.z(), rx.y(),
                    rx.z(), 0.0, -rx.x(),
                    -rx.y(), rx.x(), 0.0;
            Eigen::Matrix<double, 2, 6> j;
            j.leftCols<3>() = -dproj * skew;
            j.rightCols<3>() = dproj;
            h += j.transpose() * j;
            g += j.transpose() * res;
        }

        bool accepted = false;
        while (!accepted && lambda < 1e12) {
            Mat6 damped = h;
            damped.diagonal() += lambda * h.diagonal().cwiseMax(1e-12);
            const Vec6 step = -damped.ldlt().solve(g);
            if (!step.allFinite()) {
                lambda *= 10.0;
                continue;
            }
            Pose candidate;
            candidate.rotation = Rotation::from_axis_angle(step.head<3>()) * out.pose.rotation;
            candidate.translation = Rotation::from_axis_angle(step.head<3>()) * out.pose.translation + step.tail<3>();
            const double c = cost(candidate);
            if (c < current) {
                const double gain = current - c;
                out.pose = candidate;
                current = c;
                out.rms_trace.push_back(std::sqrt(current / n));
                lambda = std::max(lambda * 0.1, 1e-12);
                accepted = true;
                if (gain <= 1e-14 * c || step.norm() < 1e-15) iter = iterations;
            } else {
                lambda *= 10.0;
            }
        }
        if (!accepted) break;
    }
    out.rms_reprojection = std::sqrt(current / n);
    return out;
}

constexpr int kReselectRounds = 3;

PoseEstimate pnp_ransac(std::span<const Correspondence> correspondences, const CameraIntrinsics& K,
                        const RansacConfig& cfg, const std::optional<Pose>& init) {
    cfg.validate();
    const std::size_t n = correspondences.size();
    if (n < 6) {
        throw Error(Errc::too_few_correspondences,
                    "pnp needs at least 6 correspondences, got " + std::to_string(n));
    }

    const simd::KernelTable& kernels = simd::active_kernels();
    const SoaPoints pts(correspondences);
    const double eps2 = cfg.epsilon * cfg.epsilon;
    std::vector<double> sq(n);

    Pose best_pose;
    Score best;
    int scored = 0;
    auto consider = [&](const Pose& pose) {
        const Score s = score(kernels, pts, K, pose, eps2, sq);
        ++scored;
        if (better(s, best)) {
            best = s;
            best_pose = pose;
        }
    };

    if (init) consider(*init);

    std::vector<Vec3> rays(n);
    for (std::size_t i = 0; i < n; ++i) rays[i] = bearing_vector(K, correspondences[i].pixel);

    static constexpr int kSubsets[4][4] = {{0, 1, 2, 3}, {0, 1, 3, 2}, {0, 2, 3, 1}, {1, 2, 3, 0}};
    Rng rng(cfg.seed);
    std::vector<int> pool(n);
    for (int iter = 0; iter < cfg.max_iterations && best.inliers < static_cast<int>(n); ++iter) {
        // Partial Fisher-Yates over a fresh identity permutation keeps every
        // draw independent of earlier iterations' results.
        for (std::size_t i = 0; i < n; ++i) pool[i] = static_cast<int>(i);
        int sample[4];
        for (int k = 0; k < 4; ++k) {
            const std::size_t j = k + rng.below(n - k);
            std::swap(pool[k], pool[j]);
            sample[k] = pool[k];
        }

        for (const auto& subset : kSubsets) {
            const std::array<Vec3, 3> world{correspondences[sample[subset[0]]].world,
                                            correspondences[sample[subset[1]]].world,
                                            correspondences[sample[subset[2]]].world};
            const std::array<Vec3, 3> b{rays[sample[subset[0]]], rays[sample[subset[1]]], rays[sample[subset[2]]]};
            const std::vector<Pose> solutions = solve_p3p(world, b);
            if (solutions.empty()) continue;

            const Correspondence& check = correspondences[sample[subset[3]]];
            const Pose* chosen = nullptr;
            double chosen_err = std::numeric_limits<double>::infinity();
            for (const Pose& pose : solutions) {
                const double e = reprojection_error_or_inf(K, pose, check);
                if (e < chosen_err) {
                    chosen_err = e;
                    chosen = &pose;
                }
            }
            if (chosen && chosen_err <= cfg.epsilon) consider(*chosen);
            break;
        }
    }

    if (best.inliers < 4) {
        throw Error(Errc::degenerate_solution, "no hypothesis reached 4 inliers");
    }

    kernels.squared_reprojection_errors(params_for(K, best_pose), pts.view(), sq.data());
    std::vector<int> inliers;
    for (std::size_t i = 0; i < n; ++i) {
        if (sq[i] <= eps2) inliers.push_back(static_cast<int>(i));
    }

    PoseEstimate out = refine_pose(correspondences, K, best_pose, inliers, cfg.refine_iterations);
    // Re-select inliers under the refined pose until the set settles, so the
    // result depends on the consensus rather than on which sample found it.
    for (int round = 0; round < kReselectRounds; ++round) {
        kernels.squared_reprojection_errors(params_for(K, out.pose), pts.view(), sq.data());
        std::vector<int> next;
        for (std::size_t i = 0; i < n; ++i) {
            if (sq[i] <= eps2) next.push_back(static_cast<int>(i));
        }
        if (next == out.inlier_ids || next.size() < 4 || next.size() < out.inlier_ids.size()) break;
        out = refine_pose(correspondences, K, out.pose, next, cfg.refine_iterations);
    }
    out.hypotheses_scored = scored;
    for (int i : out.inlier_ids) {
        if (!(out.pose.apply(correspondences[i].world).z() > 0.0)) {
            throw Error(Errc::behind_camera, "refined pose places an inlier behind the camera");
        }
    }
    return out;
}

PoseEstimate relative_pose_from_matches(const CorrespondenceSet& matches, const CameraIntrinsics& K,
                                        const RansacConfig& cfg, const std::optional<Pose>& init) {
    return pnp_ransac(matches.pairs, K, cfg, init);
}

}  // namespace peng
