#pragma once

// Rotations, poses and the pinhole camera model.
//
// Frames used throughout:
//   world   local ENU metres (east, north, up) about the graph's frame origin
//   body    vehicle frame: x right, y forward, z up
//   camera  computer-vision frame: x right, y down, z forward
//
// A Pose maps points into the camera: X_cam = R * X + t. An "attitude" is a
// body -> world rotation; its intrinsic X-Y-Z Euler angles are (pitch, roll,
// yaw) with the yaw angle counter-clockwise about up, i.e. the negative of a
// compass heading.

#include <span>
#include <vector>

#include <Eigen/Core>
#include <Eigen/Geometry>

namespace peng {

using Vec2 = Eigen::Vector2d;
using Vec3 = Eigen::Vector3d;
using Mat3 = Eigen::Matrix3d;

/// Unit quaternion rotation, canonicalised to w >= 0.
class Rotation {
public:
    Rotation() = default;
    explicit Rotation(const Eigen::Quaterniond& q);

    static Rotation identity() { return Rotation(); }
    static Rotation from_matrix(const Mat3& m);
    /// Intrinsic X-Y-Z: R = Rx(x) * Ry(y) * Rz(z), degrees.
    static Rotation from_euler_deg(const Vec3& xyz);
    static Rotation from_axis_angle(const Vec3& omega);  // radians, |omega| = angle

    const Eigen::Quaterniond& quaternion() const noexcept { return q_; }
    Mat3 matrix() const { return q_.toRotationMatrix(); }
    /// Inverse of from_euler_deg; y in [-90, 90], x and z in (-180, 180].
    Vec3 euler_deg() const;
    Vec3 axis_angle() const;

    Rotation inverse() const { return Rotation(q_.conjugate()); }
    Rotation operator*(const Rotation& other) const { return Rotation(q_ * other.q_); }
    Vec3 operator*(const Vec3& v) const { return q_ * v; }

    /// Geodesic angle between two rotations, degrees.
    double angle_to(const Rotation& other) const;

    /// Spherical interpolation, t in [0, 1].
    Rotation slerp(const Rotation& other, double t) const;

private:
    Eigen::Quaterniond q_ = Eigen::Quaterniond::Identity();
};

struct Pose {
    Rotation rotation;
    Vec3 translation = Vec3::Zero();

    Vec3 apply(const Vec3& x) const { return rotation * x + translation; }
    Pose inverse() const;
    /// (this * other).apply(x) == this->apply(other.apply(x))
    Pose operator*(const Pose& other) const;
    /// Camera centre in the source frame: -R^T t.
    Vec3 centre() const;
};

struct CameraIntrinsics {
    double fx = 1.0;
    double fy = 1.0;
    double cx = 0.0;
    double cy = 0.0;
    int width = 0;
    int height = 0;

    bool contains(const Vec2& pixel) const {
        return pixel.x() >= 0.0 && pixel.y() >= 0.0 && pixel.x() < width && pixel.y() < height;
    }
};

/// Square pixels, principal point at the image centre.
CameraIntrinsics intrinsics_from_fov(double hfov_deg, int width, int height);

struct Correspondence {
    Vec3 world;   // reference-camera frame, metres
    Vec2 pixel;   // query image, pixels
};

/// u = fx * X'x / X'z + cx, v = fy * X'y / X'z + cy with X' = R X + t.
/// Throws Errc::behind_camera for non-positive depth.
Vec2 project(const CameraIntrinsics& K, const Pose& pose, const Vec3& point);

double reprojection_error(const CameraIntrinsics& K, const Pose& pose, const Correspondence& c);

/// Same as reprojection_error but returns +infinity behind the camera.
double reprojection_error_or_inf(const CameraIntrinsics& K, const Pose& pose, const Correspondence& c) noexcept;

/// sqrt(sum((w_i * wrap(euler_q_i - euler_ref_i))^2)), degrees.
double weighted_rotation_error(const Rotation& query, const Rotation& reference,
                               const Vec3& weights = Vec3(1.0, 0.25, 1.0));

/// Per-axis circular median of Euler X-Y-Z angles; even counts take the
/// lower-middle element. Throws Errc::invalid_argument on an empty list.
Rotation median_rotation(std::span<const Rotation> rotations);

// --- frames -----------------------------------------------------------------

/// body -> camera axis permutation.
const Mat3& body_to_camera();

/// Level attitude for a compass heading (clockwise from north).
Rotation heading_attitude(double compass_deg);

/// Compass heading of an attitude's forward axis, degrees in (-180, 180].
double compass_heading(const Rotation& attitude);

/// World -> camera pose for a camera with the given attitude at `position`.
Pose camera_pose(const Rotation& attitude, const Vec3& position);

/// Attitude of a camera pose (inverse of camera_pose's rotation part).
Rotation camera_attitude(const Pose& pose);

/// Attitude of a query given the attitude of the reference it was solved
/// against and the relative pose (reference camera -> query camera).
Rotation compose_attitude(const Rotation& reference_attitude, const Pose& relative);

/// Query camera centre in the reference's body frame.
Vec3 relative_offset_body(const Pose& relative);

}  // namespace peng
