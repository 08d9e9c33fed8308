#pragma once

// Absolute pose from 3D-2D correspondences: Grunert P3P inside RANSAC with
// fourth-point disambiguation, then damped least-squares refinement.

#include <array>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "peng/geometry.hpp"

namespace peng {

struct RansacConfig {
    double epsilon = 2.0;         // inlier threshold, pixels
    int max_iterations = 400;
    int refine_iterations = 400;
    std::uint64_t seed = 0;

    void validate() const;
};

inline RansacConfig offline_ransac() { return {2.0, 400, 400, 0}; }
inline RansacConfig online_ransac() { return {2.0, 100, 100, 0}; }

struct PoseEstimate {
    Pose pose;
    int inlier_count = 0;
    std::vector<int> inlier_ids;  // ascending
    double rms_reprojection = 0.0;
    int hypotheses_scored = 0;
    /// RMS over the inlier set before refinement and after every accepted step.
    std::vector<double> rms_trace;
};

/// Matched points as the match backend delivers them: 3D in the reference
/// camera frame, pixels in the query image.
struct CorrespondenceSet {
    std::vector<Correspondence> pairs;
    std::string source;
    /// Indices the backend replaced with outliers (diagnostics only).
    std::vector<int> corrupted;
};

/// Unit ray through a pixel, camera frame.
Vec3 bearing_vector(const CameraIntrinsics& K, const Vec2& pixel);

/// Up to four poses mapping `world` onto the rays `bearings`.
std::vector<Pose> solve_p3p(const std::array<Vec3, 3>& world, const std::array<Vec3, 3>& bearings);

/// Real roots of c[4] x^4 + c[3] x^3 + c[2] x^2 + c[1] x + c[0].
std::vector<double> solve_quartic(const std::array<double, 5>& c);

/// Least-squares rigid transform with dst ~ R * src + t.
Pose align_points(std::span<const Vec3> src, std::span<const Vec3> dst);

PoseEstimate pnp_ransac(std::span<const Correspondence> correspondences, const CameraIntrinsics& K,
                        const RansacConfig& cfg, const std::optional<Pose>& init = std::nullopt);

/// Damped Gauss-Newton (Levenberg-Marquardt) on the given subset. Steps that
/// do not lower the cost are rejected, so the trace is non-increasing.
PoseEstimate refine_pose(std::span<const Correspondence> correspondences, const CameraIntrinsics& K,
                         const Pose& start, const std::vector<int>& subset, int iterations);

/// Query camera pose in the reference camera frame.
PoseEstimate relative_pose_from_matches(const CorrespondenceSet& matches, const CameraIntrinsics& K,
                                        const RansacConfig& cfg, const std::optional<Pose>& init = std::nullopt);

}  // namespace peng
