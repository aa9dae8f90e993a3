#include <random>

#include <gtest/gtest.h>

#include "mlcalib/geometry.hpp"
#include "oracles.hpp"

namespace mlcalib {
namespace {

constexpr double kTight = 1e-12;

TEST(Rotation, IsUnitAndCanonicalAfterConstruction) {
  const Rotation r(-2.0, 0.5, -1.0, 3.0);
  EXPECT_NEAR(r.quaternion().norm(), 1.0, kTight);
  EXPECT_GE(r.w(), 0.0);
  EXPECT_EQ(Rotation(0.5, 0.5, 0.5, 0.5), Rotation(-0.5, -0.5, -0.5, -0.5));
}

TEST(Rotation, ProductsStayCanonical) {
  std::mt19937_64 rng(1);
  for (int i = 0; i < 1000; ++i) {
    const Rotation c = oracle::random_rotation(rng) * oracle::random_rotation(rng);
    EXPECT_GE(c.w(), 0.0);
    EXPECT_NEAR(c.quaternion().norm(), 1.0, kTight);
  }
}

TEST(Rotation, RpyMatchesComposedAxisRotations) {
  const Rotation r = Rotation::from_rpy(0.2, -0.4, 1.1);
  EXPECT_LT((r.matrix() - oracle::rpy_matrix(0.2, -0.4, 1.1)).norm(), 1e-12);
  const Vec3 rpy = rotation_to_rpy(r);
  EXPECT_NEAR(rpy.x(), 0.2, 1e-12);
  EXPECT_NEAR(rpy.y(), -0.4, 1e-12);
  EXPECT_NEAR(rpy.z(), 1.1, 1e-12);
}

TEST(RotationLog, IdentityHasZeroAngle) {
  const AxisAngle aa = rotation_log(Rotation::identity());
  EXPECT_EQ(aa.angle, 0.0);
  EXPECT_EQ(aa.axis, Vec3::UnitZ());
}

TEST(RotationLog, QuarterTurnAboutZ) {
  const AxisAngle aa = rotation_log(Rotation::about_z(kPi / 2));
  EXPECT_NEAR(aa.angle, kPi / 2, kTight);
  EXPECT_LT((aa.axis - Vec3::UnitZ()).norm(), kTight);
}

TEST(RotationLog, ExpRoundTripOnRandomRotations) {
  std::mt19937_64 rng(2);
  for (int i = 0; i < 10000; ++i) {
    const Rotation r = oracle::random_rotation(rng);
    const AxisAngle aa = rotation_log(r);
    ASSERT_GE(aa.angle, 0.0);
    ASSERT_LE(aa.angle, kPi);
    const Rotation back = rotation_exp(aa.vector());
    ASSERT_LT((back.wxyz() - r.wxyz()).norm(), 1e-10);
  }
}

TEST(RotationExp, ZeroIsIdentity) { EXPECT_EQ(rotation_exp(Vec3::Zero()), Rotation::identity()); }

TEST(RotationExp, HalfTurnYaw) {
  const Rotation r = rotation_exp(Vec3(0, 0, kPi));
  EXPECT_LT((r.matrix() - oracle::rodrigues(Vec3(0, 0, kPi))).norm(), 1e-12);
  EXPECT_NEAR(rotation_angle(r), kPi, 1e-12);
}

TEST(RotationExp, MatchesRodrigues) {
  std::mt19937_64 rng(3);
  std::normal_distribution<double> n(0.0, 1.0);
  for (int i = 0; i < 1000; ++i) {
    const Vec3 phi(n(rng), n(rng), n(rng));
    EXPECT_LT((rotation_exp(phi).matrix() - oracle::rodrigues(phi)).norm(), 1e-12);
  }
}

TEST(RotationExp, LogOfExpRecoversVector) {
  std::mt19937_64 rng(4);
  std::uniform_real_distribution<double> mag(-8.0, std::log10(kPi - 1e-6));
  for (int i = 0; i < 10000; ++i) {
    const Vec3 axis = oracle::random_unit_quaternion(rng).tail<3>().normalized();
    const Vec3 phi = std::pow(10.0, mag(rng)) * axis;
    ASSERT_LT((rotation_log_vector(rotation_exp(phi)) - phi).norm(), 1e-10) << phi.norm();
  }
}

TEST(RotationExp, SmallAngleBranchIsContinuous) {
  const Vec3 axis = Vec3(1, 2, -1).normalized();
  const Rotation below = rotation_exp((kSmallAngle * (1 - 1e-9)) * axis);
  const Rotation above = rotation_exp((kSmallAngle * (1 + 1e-9)) * axis);
  EXPECT_LT((below.wxyz() - above.wxyz()).norm(), 1e-13);
}

TEST(Pose, ComposeWithIdentityAndInverse) {
  std::mt19937_64 rng(5);
  for (int i = 0; i < 1000; ++i) {
    const Pose p = oracle::random_pose(rng);
    const Pose same = p * Pose::identity();
    EXPECT_EQ(same.rotation, p.rotation);
    EXPECT_LT((same.translation - p.translation).norm(), 1e-15);
    const Pose id = p * pose_invert(p);
    EXPECT_LT(rotation_angle(id.rotation), 1e-10);
    EXPECT_LT(id.translation.norm(), 1e-10);
  }
}

TEST(Pose, AssociativeAndMatchesHomogeneousMatrices) {
  std::mt19937_64 rng(6);
  for (int i = 0; i < 1000; ++i) {
    const Pose a = oracle::random_pose(rng), b = oracle::random_pose(rng), c = oracle::random_pose(rng);
    const Pose left = (a * b) * c, right = a * (b * c);
    EXPECT_LT(rotation_angle_distance(left.rotation, right.rotation), 1e-10);
    EXPECT_LT((left.translation - right.translation).norm(), 1e-10);
    const Eigen::Matrix4d m = oracle::homogeneous(a) * oracle::homogeneous(b);
    EXPECT_LT((oracle::homogeneous(a * b) - m).norm(), 1e-10);
  }
}

TEST(PoseLog, ExpRoundTrip) {
  std::mt19937_64 rng(7);
  for (int i = 0; i < 1000; ++i) {
    const Pose p = oracle::random_pose(rng);
    const Pose back = pose_exp(pose_log(p));
    EXPECT_LT(rotation_angle_distance(back.rotation, p.rotation), 1e-10);
    EXPECT_LT((back.translation - p.translation).norm(), 1e-9);
  }
}

TEST(QuatMatrices, IdentityGivesIdentity) {
  EXPECT_EQ(quat_left_matrix(Rotation::identity()), Mat4::Identity());
  EXPECT_EQ(quat_right_matrix(Rotation::identity()), Mat4::Identity());
}

TEST(QuatMatrices, ReproduceHamiltonProduct) {
  std::mt19937_64 rng(8);
  for (int i = 0; i < 1000; ++i) {
    const Rotation a = oracle::random_rotation(rng), b = oracle::random_rotation(rng);
    const Vec4 x = oracle::random_unit_quaternion(rng);
    const Vec4 ab = oracle::hamilton(a.wxyz(), b.wxyz());
    EXPECT_LT((quat_left_matrix(a) * b.wxyz() - ab).norm(), 1e-12);
    EXPECT_LT((quat_right_matrix(b) * a.wxyz() - ab).norm(), 1e-12);
    const Vec4 diff = (quat_left_matrix(a) - quat_right_matrix(b)) * x;
    EXPECT_LT((diff - (oracle::hamilton(a.wxyz(), x) - oracle::hamilton(x, b.wxyz()))).norm(), 1e-12);
  }
}

TEST(Decompose, PureYaw) {
  const Rotation q = Rotation::about_z(0.7);
  const YawPitchRoll d = quat_decompose_yaw_pitchroll(q);
  EXPECT_LT(rotation_angle_distance(d.yaw, q), 1e-12);
  EXPECT_LT(rotation_angle(d.pitch_roll), 1e-12);
  EXPECT_FALSE(d.gimbal_degenerate);
}

TEST(Decompose, PureRoll) {
  const Rotation q = Rotation::about_x(-0.4);
  const YawPitchRoll d = quat_decompose_yaw_pitchroll(q);
  EXPECT_LT(rotation_angle(d.yaw), 1e-12);
  EXPECT_LT(rotation_angle_distance(d.pitch_roll, q), 1e-12);
}

TEST(Decompose, ReconstructsAndSatisfiesConstraint) {
  std::mt19937_64 rng(9);
  for (int i = 0; i < 10000; ++i) {
    const Rotation q = oracle::random_rotation(rng);
    const YawPitchRoll d = quat_decompose_yaw_pitchroll(q);
    if (d.gimbal_degenerate) continue;
    const Rotation& p = d.pitch_roll;
    ASSERT_LT(rotation_angle_distance(d.yaw * p, q), 1e-10);
    ASSERT_LT(std::abs(p.x() * p.y() + p.z() * p.w()), 1e-10);
    ASSERT_LT(std::abs(d.yaw.x()) + std::abs(d.yaw.y()), 1e-15);
    ASSERT_GE(d.yaw.w(), 0.0);
    ASSERT_GE(p.w(), 0.0);
  }
}

TEST(Decompose, FlagsGimbalLock) {
  const Rotation q = Rotation::from_rpy(0.3, kPi / 2, 0.8);
  const YawPitchRoll d = quat_decompose_yaw_pitchroll(q);
  EXPECT_TRUE(d.gimbal_degenerate);
  EXPECT_EQ(d.yaw, Rotation::identity());
  EXPECT_EQ(d.pitch_roll, q);
}

TEST(AngleDistance, BasicValues) {
  const Rotation r = Rotation::from_rpy(0.1, 0.2, 0.3);
  EXPECT_EQ(rotation_angle_distance(r, r), 0.0);
  EXPECT_NEAR(rotation_angle_distance(Rotation::identity(), Rotation::about_z(kPi / 2)), kPi / 2, kTight);
}

TEST(AngleDistance, SymmetricBoundedAndMatchesTraceFormula) {
  std::mt19937_64 rng(10);
  for (int i = 0; i < 1000; ++i) {
    const Rotation a = oracle::random_rotation(rng), b = oracle::random_rotation(rng);
    const double d = rotation_angle_distance(a, b);
    EXPECT_NEAR(d, rotation_angle_distance(b, a), kTight);
    EXPECT_LE(d, kPi);
    EXPECT_NEAR(d, oracle::matrix_angle(a.matrix(), b.matrix()), 1e-7);
  }
}

TEST(AngleDistance, InvariantUnderConjugation) {
  std::mt19937_64 rng(11);
  for (int i = 0; i < 1000; ++i) {
    const Rotation r = oracle::random_rotation(rng), s = oracle::random_rotation(rng);
    EXPECT_NEAR(rotation_angle(s * r * s.inverse()), rotation_angle(r), 1e-10);
  }
}

}  // namespace
}  // namespace mlcalib
