#include <gtest/gtest.h>

#include <cmath>
#include <numbers>

#include "peng/citygraph.hpp"
#include "peng/error.hpp"
#include "peng/geometry.hpp"
#include "peng/rng.hpp"

using namespace peng;

namespace {

Rotation random_rotation(Rng& rng, double max_pitch = 89.0) {
    return Rotation::from_euler_deg(Vec3(rng.uniform(-180, 180), rng.uniform(-max_pitch, max_pitch), rng.uniform(-180, 180)));
}

Rotation yaw_only(double deg) { return Rotation::from_euler_deg(Vec3(0, 0, deg)); }

}  // namespace

TEST(Rotation, MatrixRoundTrip) {
    Rng rng(1);
    for (int i = 0; i < 10000; ++i) {
        const Rotation r = random_rotation(rng);
        ASSERT_LT(Rotation::from_matrix(r.matrix()).angle_to(r), 1e-9 * 180.0 / std::numbers::pi);
    }
}

TEST(Rotation, EulerRoundTrip) {
    Rng rng(2);
    for (int i = 0; i < 10000; ++i) {
        const Rotation r = random_rotation(rng);
        const Rotation back = Rotation::from_euler_deg(r.euler_deg());
        ASSERT_LT((back.quaternion().coeffs() - r.quaternion().coeffs()).norm(), 1e-9);
    }
}

TEST(Rotation, EulerIsIntrinsicXyz) {
    const Vec3 e(10.0, 20.0, 30.0);
    const double d = std::numbers::pi / 180.0;
    const Mat3 expected = (Eigen::AngleAxisd(e.x() * d, Vec3::UnitX()) * Eigen::AngleAxisd(e.y() * d, Vec3::UnitY()) *
                           Eigen::AngleAxisd(e.z() * d, Vec3::UnitZ()))
                              .toRotationMatrix();
    EXPECT_LT((Rotation::from_euler_deg(e).matrix() - expected).norm(), 1e-12);
    EXPECT_LT((Rotation::from_euler_deg(e).euler_deg() - e).norm(), 1e-9);
}

TEST(Rotation, AxisAngleRoundTrip) {
    Rng rng(3);
    for (int i = 0; i < 1000; ++i) {
        const Vec3 w(rng.uniform(-1, 1), rng.uniform(-1, 1), rng.uniform(-1, 1));
        ASSERT_LT((Rotation::from_axis_angle(w).axis_angle() - w).norm(), 1e-12);
    }
}

TEST(Rotation, CanonicalHemisphere) {
    Rng rng(4);
    for (int i = 0; i < 1000; ++i) ASSERT_GE(random_rotation(rng).quaternion().w(), 0.0);
}

TEST(Rotation, SmallAnglesResolve) {
    const Rotation a = yaw_only(0.0);
    EXPECT_NEAR(a.angle_to(yaw_only(1e-7)), 1e-7, 1e-12);
}

TEST(Pose, CompositionAndInverse) {
    Rng rng(5);
    for (int i = 0; i < 100; ++i) {
        const Pose a{random_rotation(rng), Vec3(rng.uniform(-5, 5), rng.uniform(-5, 5), rng.uniform(-5, 5))};
        const Pose b{random_rotation(rng), Vec3(rng.uniform(-5, 5), rng.uniform(-5, 5), rng.uniform(-5, 5))};
        const Vec3 x(rng.uniform(-5, 5), rng.uniform(-5, 5), rng.uniform(-5, 5));
        ASSERT_LT(((a * b).apply(x) - a.apply(b.apply(x))).norm(), 1e-12);
        ASSERT_LT((a.inverse().apply(a.apply(x)) - x).norm(), 1e-12);
        ASSERT_LT(a.apply(a.centre()).norm(), 1e-12);
    }
}

TEST(Intrinsics, FromFov) {
    const CameraIntrinsics k90 = intrinsics_from_fov(90.0, 512, 384);
    EXPECT_NEAR(k90.fx, 256.0, 1e-12);
    EXPECT_EQ(k90.fx, k90.fy);
    EXPECT_EQ(k90.cx, 256.0);
    EXPECT_EQ(k90.cy, 192.0);
    EXPECT_NEAR(intrinsics_from_fov(70.0, 512, 384).fx, 365.606, 0.001);
    EXPECT_THROW(intrinsics_from_fov(180.0, 512, 384), Error);
    EXPECT_THROW(intrinsics_from_fov(0.0, 512, 384), Error);
}

TEST(Project, OpticalAxis) {
    const CameraIntrinsics K{1, 1, 0, 0, 1, 1};
    const Vec2 p = project(K, Pose{}, Vec3(0, 0, 1));
    EXPECT_EQ(p, Vec2(0, 0));
}

TEST(Project, Arithmetic) {
    const CameraIntrinsics K{100, 70, 50, 3, 640, 480};
    EXPECT_DOUBLE_EQ(project(K, Pose{}, Vec3(1, 0, 2)).x(), 100.0);
}

TEST(Project, BehindCamera) {
    try {
        project(CameraIntrinsics{}, Pose{}, Vec3(0, 0, -1));
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.code(), Errc::behind_camera);
    }
    const Correspondence c{Vec3(0, 0, -1), Vec2(0, 0)};
    EXPECT_TRUE(std::isinf(reprojection_error_or_inf(CameraIntrinsics{}, Pose{}, c)));
}

TEST(Reprojection, SelfConsistentAndThreeFourFive) {
    Rng rng(6);
    const CameraIntrinsics K = intrinsics_from_fov(90, 512, 384);
    for (int i = 0; i < 1000; ++i) {
        const Pose pose{random_rotation(rng, 30), Vec3(rng.uniform(-1, 1), rng.uniform(-1, 1), rng.uniform(-1, 1))};
        const Vec3 cam(rng.uniform(-5, 5), rng.uniform(-5, 5), rng.uniform(1, 20));
        const Vec3 x = pose.inverse().apply(cam);
        const Vec2 px = project(K, pose, x);
        ASSERT_LT(reprojection_error(K, pose, {x, px}), 1e-9);
        ASSERT_NEAR(reprojection_error(K, pose, {x, px + Vec2(3, 4)}), 5.0, 1e-9);
    }
}

TEST(WeightedRotationError, Identity) {
    const Rotation r = Rotation::from_euler_deg(Vec3(3, -7, 120));
    EXPECT_EQ(weighted_rotation_error(r, r), 0.0);
}

TEST(WeightedRotationError, Fixture) {
    const Rotation ref = Rotation::from_euler_deg(Vec3(0, 0, 0));
    const Rotation q = Rotation::from_euler_deg(Vec3(2, 4, 1));
    EXPECT_NEAR(weighted_rotation_error(q, ref, Vec3(1, 0.25, 1)), std::sqrt(6.0), 1e-9);
}

TEST(WeightedRotationError, WrapsDifferences) {
    // Raw differences of 359 degrees wrap to -1.
    const Rotation ref = Rotation::from_euler_deg(Vec3(-179.5, 0, 179.5));
    EXPECT_NEAR(weighted_rotation_error(Rotation::from_euler_deg(Vec3(-179.5, 0, -179.5)), ref), 1.0, 1e-9);
    EXPECT_NEAR(weighted_rotation_error(Rotation::from_euler_deg(Vec3(179.5, 0, 179.5)), ref), 1.0, 1e-9);
    // Y carries weight 0.25; its range is [-90, 90] so no raw wrap occurs.
    EXPECT_NEAR(weighted_rotation_error(Rotation::from_euler_deg(Vec3(0, -1, 0)), Rotation::identity()), 0.25, 1e-9);
}

TEST(WeightedRotationError, SymmetricAndZeroOnlyAtEquality) {
    Rng rng(8);
    for (int i = 0; i < 2000; ++i) {
        const Rotation a = random_rotation(rng, 80);
        const Rotation b = random_rotation(rng, 80);
        ASSERT_NEAR(weighted_rotation_error(a, b), weighted_rotation_error(b, a), 1e-9);
        ASSERT_GT(weighted_rotation_error(a, b), 0.0);
    }
}

TEST(MedianRotation, ConstantList) {
    const std::vector<Rotation> rs(5, yaw_only(37.0));
    EXPECT_NEAR(median_rotation(rs).euler_deg().z(), 37.0, 1e-9);
}

TEST(MedianRotation, OddCount) {
    const std::vector<Rotation> rs{yaw_only(30), yaw_only(10), yaw_only(20)};
    EXPECT_NEAR(median_rotation(rs).euler_deg().z(), 20.0, 1e-9);
}

TEST(MedianRotation, WrapAware) {
    const std::vector<Rotation> rs{yaw_only(179), yaw_only(-179), yaw_only(178)};
    EXPECT_NEAR(median_rotation(rs).euler_deg().z(), 179.0, 1e-9);
}

TEST(MedianRotation, EvenCountTakesLowerMiddle) {
    const std::vector<Rotation> rs{yaw_only(10), yaw_only(40), yaw_only(20), yaw_only(30)};
    EXPECT_NEAR(median_rotation(rs).euler_deg().z(), 20.0, 1e-9);
}

TEST(MedianRotation, EmptyList) {
    try {
        median_rotation({});
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.code(), Errc::invalid_argument);
    }
}

TEST(Frames, HeadingAttitudeFacesCompassDirection) {
    for (double h : {0.0, 45.0, 90.0, -135.0, 180.0}) {
        const Rotation a = heading_attitude(h);
        const Vec3 forward = a * Vec3::UnitY();
        const double compass = std::atan2(forward.x(), forward.y()) * 180.0 / std::numbers::pi;
        EXPECT_NEAR(angular_distance(compass, h), 0.0, 1e-9);
        EXPECT_NEAR(angular_distance(compass_heading(a), h), 0.0, 1e-9);
    }
}

TEST(Frames, CameraLooksAlongBodyForward) {
    const Rotation att = heading_attitude(30.0);
    const Vec3 pos(10, -4, 2.5);
    const Pose pose = camera_pose(att, pos);
    const Vec3 ahead = pos + att * Vec3(0, 5, 0);
    const Vec3 cam = pose.apply(ahead);
    EXPECT_NEAR(cam.x(), 0.0, 1e-12);
    EXPECT_NEAR(cam.y(), 0.0, 1e-12);
    EXPECT_NEAR(cam.z(), 5.0, 1e-12);
    EXPECT_LT(camera_attitude(pose).angle_to(att), 1e-9);
    EXPECT_LT((pose.centre() - pos).norm(), 1e-12);
}

TEST(Frames, ComposeAttitudeAndOffset) {
    Rng rng(9);
    for (int i = 0; i < 200; ++i) {
        const Rotation a_ref = heading_attitude(rng.uniform(-180, 180));
        const Rotation a_q = Rotation::from_euler_deg(Vec3(rng.uniform(-5, 5), rng.uniform(-5, 5), rng.uniform(-180, 180)));
        const Vec3 p_ref(rng.uniform(-50, 50), rng.uniform(-50, 50), 2.5);
        const Vec3 p_q(rng.uniform(-50, 50), rng.uniform(-50, 50), 2.5);
        const Pose ref = camera_pose(a_ref, p_ref);
        const Pose q = camera_pose(a_q, p_q);
        const Pose relative = q * ref.inverse();
        ASSERT_LT(compose_attitude(a_ref, relative).angle_to(a_q), 1e-9);
        ASSERT_LT((a_ref * relative_offset_body(relative) - (p_q - p_ref)).norm(), 1e-9);
    }
}
