#include "peng/geometry.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <numeric>

#include "peng/citygraph.hpp"
#include "peng/error.hpp"

namespace peng {

namespace {

constexpr double kDeg = std::numbers::pi / 180.0;

}  // namespace

Rotation::Rotation(const Eigen::Quaterniond& q) : q_(q.normalized()) {
    if (q_.w() < 0.0) q_.coeffs() = -q_.coeffs();
}

Rotation Rotation::from_matrix(const Mat3& m) { return Rotation(Eigen::Quaterniond(m)); }

Rotation Rotation::from_euler_deg(const Vec3& xyz) {
    const Eigen::Quaterniond q = Eigen::AngleAxisd(xyz.x() * kDeg, Vec3::UnitX()) *
                                 Eigen::AngleAxisd(xyz.y() * kDeg, Vec3::UnitY()) *
                                 Eigen::AngleAxisd(xyz.z() * kDeg, Vec3::UnitZ());
    return Rotation(q);
}

Rotation Rotation::from_axis_angle(const Vec3& omega) {
    const double angle = omega.norm();
    if (angle < 1e-300) return Rotation();
    return Rotation(Eigen::Quaterniond(Eigen::AngleAxisd(angle, omega / angle)));
}

Vec3 Rotation::euler_deg() const {
    // R = Rx(a) Ry(b) Rz(c):
    //   R02 = sin b, R12 = -sin a cos b, R22 = cos a cos b,
    //   R01 = -cos b sin c, R00 = cos b cos c
    const Mat3 m = matrix();
    const double sb = std::clamp(m(0, 2), -1.0, 1.0);
    const double b = std::asin(sb);
    double a;
    double c;
    if (std::abs(sb) < 1.0 - 1e-12) {
        a = std::atan2(-m(1, 2), m(2, 2));
        c = std::atan2(-m(0, 1), m(0, 0));
    } else {
        // Gimbal lock: only a +/- c is observable; put everything in a.
        a = std::atan2(m(2, 1), m(1, 1));
        c = 0.0;
    }
    return {wrap_degrees(a / kDeg), b / kDeg, wrap_degrees(c / kDeg)};
}

Vec3 Rotation::axis_angle() const {
    const Eigen::AngleAxisd aa(q_);
    return aa.axis() * aa.angle();
}

double Rotation::angle_to(const Rotation& other) const {
    // atan2 form keeps full precision for tiny angles, where acos does not.
    const Eigen::Quaterniond d = q_.conjugate() * other.q_;
    return 2.0 * std::atan2(d.vec().norm(), std::abs(d.w())) / kDeg;
}

Rotation Rotation::slerp(const Rotation& other, double t) const { return Rotation(q_.slerp(t, other.q_)); }

Pose Pose::inverse() const {
    const Rotation inv = rotation.inverse();
    return {inv, -(inv * translation)};
}

Pose Pose::operator*(const Pose& other) const {
    return {rotation * other.rotation, rotation * other.translation + translation};
}

Vec3 Pose::centre() const { return -(rotation.inverse() * translation); }

CameraIntrinsics intrinsics_from_fov(double hfov_deg, int width, int height) {
    if (!(hfov_deg > 0.0 && hfov_deg < 180.0)) {
        throw Error(Errc::invalid_argument, "horizontal field of view must lie in (0, 180) degrees");
    }
    if (width <= 0 || height <= 0) throw Error(Errc::invalid_argument, "image size must be positive");
    CameraIntrinsics K;
    K.width = width;
    K.height = height;
    K.fx = (width / 2.0) / std::tan(hfov_deg * kDeg / 2.0);
    K.fy = K.fx;
    K.cx = width / 2.0;
    K.cy = height / 2.0;
    return K;
}

Vec2 project(const CameraIntrinsics& K, const Pose& pose, const Vec3& point) {
    const Vec3 pc = pose.apply(point);
    if (!(pc.z() > 0.0)) throw Error(Errc::behind_camera, "point projects behind the camera");
    return {K.fx * pc.x() / pc.z() + K.cx, K.fy * pc.y() / pc.z() + K.cy};
}

double reprojection_error(const CameraIntrinsics& K, const Pose& pose, const Correspondence& c) {
    return (project(K, pose, c.world) - c.pixel).norm();
}

double reprojection_error_or_inf(const CameraIntrinsics& K, const Pose& pose, const Correspondence& c) noexcept {
    const Vec3 pc = pose.apply(c.world);
    if (!(pc.z() > 0.0)) return std::numeric_limits<double>::infinity();
    const Vec2 uv(K.fx * pc.x() / pc.z() + K.cx, K.fy * pc.y() / pc.z() + K.cy);
    return (uv - c.pixel).norm();
}

double weighted_rotation_error(const Rotation& query, const Rotation& reference, const Vec3& weights) {
    const Vec3 eq = query.euler_deg();
    const Vec3 er = reference.euler_deg();
    double sum = 0.0;
    for (int i = 0; i < 3; ++i) {
        const double d = weights[i] * wrap_degrees(eq[i] - er[i]);
        sum += d * d;
    }
    return std::sqrt(sum);
}

Rotation median_rotation(std::span<const Rotation> rotations) {
    if (rotations.empty()) throw Error(Errc::invalid_argument, "median of an empty rotation list");
    const std::size_t n = rotations.size();
    std::vector<Vec3> angles(n);
    std::transform(rotations.begin(), rotations.end(), angles.begin(),
                   [](const Rotation& r) { return r.euler_deg(); });

    Vec3 median;
    std::vector<std::size_t> order(n);
    std::vector<double> unwrapped(n);
    for (int axis = 0; axis < 3; ++axis) {
        double s = 0.0;
        double c = 0.0;
        for (const auto& a : angles) {
            s += std::sin(a[axis] * kDeg);
            c += std::cos(a[axis] * kDeg);
        }
        const double mean = std::atan2(s, c) / kDeg;
        for (std::size_t i = 0; i < n; ++i) unwrapped[i] = mean + wrap_degrees(angles[i][axis] - mean);
        std::iota(order.begin(), order.end(), std::size_t{0});
        std::stable_sort(order.begin(), order.end(),
                         [&](std::size_t l, std::size_t r) { return unwrapped[l] < unwrapped[r]; });
        // Report the observed angle, not its unwrapped copy.
        median[axis] = angles[order[(n - 1) / 2]][axis];
    }
    return Rotation::from_euler_deg(median);
}

const Mat3& body_to_camera() {
    static const Mat3 c = (Mat3() << 1, 0, 0,
                                     0, 0, -1,
                                     0, 1, 0).finished();
    return c;
}

Rotation heading_attitude(double compass_deg) { return Rotation::from_euler_deg(Vec3(0.0, 0.0, -compass_deg)); }

double compass_heading(const Rotation& attitude) {
    const Vec3 forward = attitude * Vec3::UnitY();
    const double deg = std::atan2(forward.x(), forward.y()) / kDeg;
    return deg == -180.0 ? 180.0 : deg;
}

Pose camera_pose(const Rotation& attitude, const Vec3& position) {
    const Mat3 r = body_to_camera() * attitude.matrix().transpose();
    const Rotation rot = Rotation::from_matrix(r);
    return {rot, -(rot * position)};
}

Rotation camera_attitude(const Pose& pose) {
    return Rotation::from_matrix(pose.rotation.matrix().transpose() * body_to_camera());
}

Rotation compose_attitude(const Rotation& reference_attitude, const Pose& relative) {
    const Mat3& c = body_to_camera();
    const Mat3 body_delta = c.transpose() * relative.rotation.matrix().transpose() * c;
    return reference_attitude * Rotation::from_matrix(body_delta);
}

Vec3 relative_offset_body(const Pose& relative) { return body_to_camera().transpose() * relative.centre(); }

}  // namespace peng
