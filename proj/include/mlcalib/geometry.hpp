#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>

#include <Eigen/Core>
#include <Eigen/Geometry>

namespace mlcalib {

using Vec2 = Eigen::Vector2d;
using Vec3 = Eigen::Vector3d;
using Vec4 = Eigen::Vector4d;
using Vec6 = Eigen::Matrix<double, 6, 1>;
using Mat2 = Eigen::Matrix2d;
using Mat3 = Eigen::Matrix3d;
using Mat4 = Eigen::Matrix4d;

inline constexpr double kPi = std::numbers::pi;

// Below this angle log/exp switch to their Taylor expansions.
inline constexpr double kSmallAngle = 1e-5;
// Angles at or below this have no meaningful axis.
inline constexpr double kAxisEpsilon = 1e-9;
// Pitch closer than this to +-pi/2 makes the yaw / pitch-roll split non-unique.
inline constexpr double kGimbalEpsilon = 1e-6;

inline Mat3 skew(const Vec3& v) {
  Mat3 m;
  m << 0.0, -v.z(), v.y(),
       v.z(), 0.0, -v.x(),
       -v.y(), v.x(), 0.0;
  return m;
}

/// Unit quaternion rotation, Hamilton convention, scalar-first.
///
/// The stored quaternion is renormalized on construction and kept in the
/// canonical hemisphere (w >= 0, ties broken on the first nonzero vector
/// component), so two equal rotations compare equal coefficient-wise.
class Rotation {
 public:
  Rotation() : q_(Eigen::Quaterniond::Identity()) {}

  Rotation(double w, double x, double y, double z) : q_(w, x, y, z) { canonicalize(); }

  explicit Rotation(const Eigen::Quaterniond& q) : q_(q) { canonicalize(); }

  explicit Rotation(const Mat3& m) : q_(m) { canonicalize(); }

  static Rotation identity() { return Rotation(); }

  static Rotation about_z(double angle) {
    return Rotation(std::cos(0.5 * angle), 0.0, 0.0, std::sin(0.5 * angle));
  }
  static Rotation about_y(double angle) {
    return Rotation(std::cos(0.5 * angle), 0.0, std::sin(0.5 * angle), 0.0);
  }
  static Rotation about_x(double angle) {
    return Rotation(std::cos(0.5 * angle), std::sin(0.5 * angle), 0.0, 0.0);
  }

  /// Fixed-axis roll, pitch, yaw: R = Rz(yaw) * Ry(pitch) * Rx(roll).
  static Rotation from_rpy(double roll, double pitch, double yaw) {
    Eigen::Quaterniond q = Eigen::AngleAxisd(yaw, Vec3::UnitZ()) *
                           Eigen::AngleAxisd(pitch, Vec3::UnitY()) *
                           Eigen::AngleAxisd(roll, Vec3::UnitX());
    return Rotation(q);
  }

  /// Coefficients as (w, x, y, z).
  static Rotation from_wxyz(const Vec4& c) { return Rotation(c[0], c[1], c[2], c[3]); }

  double w() const { return q_.w(); }
  double x() const { return q_.x(); }
  double y() const { return q_.y(); }
  double z() const { return q_.z(); }
  Vec3 vec() const { return q_.vec(); }
  Vec4 wxyz() const { return Vec4(q_.w(), q_.x(), q_.y(), q_.z()); }

  const Eigen::Quaterniond& quaternion() const { return q_; }
  Mat3 matrix() const { return q_.toRotationMatrix(); }

  Rotation inverse() const { return Rotation(q_.conjugate()); }
  Vec3 operator*(const Vec3& v) const { return q_ * v; }
  Rotation operator*(const Rotation& other) const { return Rotation(q_ * other.q_); }

  bool operator==(const Rotation& other) const { return wxyz() == other.wxyz(); }

 private:
  void canonicalize() {
    // Already-unit input is kept bit-exact so serialized rotations round-trip.
    if (std::abs(q_.squaredNorm() - 1.0) > 4.0 * std::numeric_limits<double>::epsilon()) q_.normalize();
    const bool flip =
        q_.w() < 0.0 ||
        (q_.w() == 0.0 &&
         (q_.x() < 0.0 || (q_.x() == 0.0 && (q_.y() < 0.0 || (q_.y() == 0.0 && q_.z() < 0.0)))));
    if (flip) q_.coeffs() = -q_.coeffs();
  }

  Eigen::Quaterniond q_;
};

/// Rigid transform; maps a point p to rotation * p + translation.
struct Pose {
  Rotation rotation;
  Vec3 translation = Vec3::Zero();

  static Pose identity() { return Pose{}; }

  Mat4 matrix() const {
    Mat4 m = Mat4::Identity();
    m.topLeftCorner<3, 3>() = rotation.matrix();
    m.topRightCorner<3, 1>() = translation;
    return m;
  }

  Vec3 operator*(const Vec3& p) const { return rotation * p + translation; }
};

inline Pose pose_compose(const Pose& a, const Pose& b) {
  return Pose{a.rotation * b.rotation, a.rotation * b.translation + a.translation};
}

inline Pose pose_invert(const Pose& a) {
  const Rotation inv = a.rotation.inverse();
  return Pose{inv, -(inv * a.translation)};
}

inline Pose operator*(const Pose& a, const Pose& b) { return pose_compose(a, b); }

struct AxisAngle {
  Vec3 axis = Vec3::UnitZ();
  double angle = 0.0;

  Vec3 vector() const { return angle * axis; }
};

/// Logarithm of SO(3); the angle lies in [0, pi].
inline AxisAngle rotation_log(const Rotation& r) {
  const Vec3 v = r.vec();
  const double vn = v.norm();
  const double w = r.w();  // >= 0 by canonical form
  const double angle = 2.0 * std::atan2(vn, w);
  AxisAngle out;
  out.angle = angle;
  if (angle > kAxisEpsilon) out.axis = v / vn;
  return out;
}

/// Rotation vector phi = angle * axis.
inline Vec3 rotation_log_vector(const Rotation& r) {
  const Vec3 v = r.vec();
  const double vn = v.norm();
  const double w = r.w();
  if (vn < 0.5 * kSmallAngle * w) {
    // angle / sin(angle/2) ~ 2/w * (1 - (vn/w)^2 / 3)
    const double ratio = vn / w;
    return (2.0 / w) * (1.0 - ratio * ratio / 3.0) * v;
  }
  return (2.0 * std::atan2(vn, w) / vn) * v;
}

inline Rotation rotation_exp(const Vec3& phi) {
  const double theta = phi.norm();
  if (theta < kSmallAngle) {
    const double t2 = theta * theta;
    const Vec3 v = 0.5 * (1.0 - t2 / 24.0) * phi;
    return Rotation(1.0 - t2 / 8.0, v.x(), v.y(), v.z());
  }
  const Vec3 v = (std::sin(0.5 * theta) / theta) * phi;
  return Rotation(std::cos(0.5 * theta), v.x(), v.y(), v.z());
}

/// Geodesic angle between two rotations, computed from the relative quaternion.
inline double rotation_angle_distance(const Rotation& a, const Rotation& b) {
  const Eigen::Quaterniond rel = a.quaternion() * b.quaternion().conjugate();
  return 2.0 * std::atan2(rel.vec().norm(), std::abs(rel.w()));
}

inline double rotation_angle(const Rotation& r) { return rotation_log(r).angle; }

namespace detail {

// Left Jacobian of SO(3) and its inverse, used by the SE(3) maps.
inline Mat3 so3_left_jacobian(const Vec3& phi) {
  const double theta = phi.norm();
  const Mat3 k = skew(phi);
  if (theta < kSmallAngle) return Mat3::Identity() + 0.5 * k + (1.0 / 6.0) * k * k;
  const double t2 = theta * theta;
  return Mat3::Identity() + ((1.0 - std::cos(theta)) / t2) * k +
         ((theta - std::sin(theta)) / (t2 * theta)) * k * k;
}

inline Mat3 so3_left_jacobian_inverse(const Vec3& phi) {
  const double theta = phi.norm();
  const Mat3 k = skew(phi);
  if (theta < kSmallAngle) return Mat3::Identity() - 0.5 * k + (1.0 / 12.0) * k * k;
  const double t2 = theta * theta;
  const double coeff = (1.0 - theta * std::sin(theta) / (2.0 * (1.0 - std::cos(theta)))) / t2;
  return Mat3::Identity() - 0.5 * k + coeff * k * k;
}

}  // namespace detail

/// SE(3) logarithm as the 6-vector (rho, phi): translation part first.
inline Vec6 pose_log(const Pose& p) {
  const Vec3 phi = rotation_log_vector(p.rotation);
  Vec6 xi;
  xi.head<3>() = detail::so3_left_jacobian_inverse(phi) * p.translation;
  xi.tail<3>() = phi;
  return xi;
}

inline Pose pose_exp(const Vec6& xi) {
  const Vec3 phi = xi.tail<3>();
  return Pose{rotation_exp(phi), detail::so3_left_jacobian(phi) * xi.head<3>()};
}

/// Matrix L(a) with L(a) * b == a (x) b, all quaternions as (w, x, y, z).
///
/// This is the left-multiplication block [q_w I + [q_xyz]x, q_xyz; -q_xyz^T, q_w]
/// with the scalar row and column moved to the front.
inline Mat4 quat_left_matrix(const Rotation& q) {
  const double w = q.w(), x = q.x(), y = q.y(), z = q.z();
  Mat4 m;
  m << w, -x, -y, -z,
       x,  w, -z,  y,
       y,  z,  w, -x,
       z, -y,  x,  w;
  return m;
}

/// Matrix R(b) with R(b) * a == a (x) b, all quaternions as (w, x, y, z).
inline Mat4 quat_right_matrix(const Rotation& q) {
  const double w = q.w(), x = q.x(), y = q.y(), z = q.z();
  Mat4 m;
  m << w, -x, -y, -z,
       x,  w,  z, -y,
       y, -z,  w,  x,
       z,  y, -x,  w;
  return m;
}

struct YawPitchRoll {
  Rotation yaw;         // pure rotation about z
  Rotation pitch_roll;  // Ry(pitch) * Rx(roll); satisfies x*y == -z*w
  double yaw_angle = 0.0;
  bool gimbal_degenerate = false;
};

/// Splits q into q_z (x) q_yx. Near pitch = +-pi/2 the split is not unique;
/// the yaw = 0 branch is returned and `gimbal_degenerate` is set.
inline YawPitchRoll quat_decompose_yaw_pitchroll(const Rotation& q) {
  const double w = q.w(), x = q.x(), y = q.y(), z = q.z();
  const double sin_pitch = std::clamp(2.0 * (w * y - z * x), -1.0, 1.0);
  YawPitchRoll out;
  if (kPi / 2.0 - std::abs(std::asin(sin_pitch)) < kGimbalEpsilon) {
    out.gimbal_degenerate = true;
    out.pitch_roll = q;
    return out;
  }
  out.yaw_angle = std::atan2(2.0 * (w * z + x * y), 1.0 - 2.0 * (y * y + z * z));
  out.yaw = Rotation::about_z(out.yaw_angle);
  out.pitch_roll = out.yaw.inverse() * q;
  return out;
}

/// Roll, pitch, yaw of R = Rz(yaw) Ry(pitch) Rx(roll), pitch in [-pi/2, pi/2].
inline Vec3 rotation_to_rpy(const Rotation& q) {
  const double w = q.w(), x = q.x(), y = q.y(), z = q.z();
  const double roll = std::atan2(2.0 * (w * x + y * z), 1.0 - 2.0 * (x * x + y * y));
  const double pitch = std::asin(std::clamp(2.0 * (w * y - z * x), -1.0, 1.0));
  const double yaw = std::atan2(2.0 * (w * z + x * y), 1.0 - 2.0 * (y * y + z * z));
  return Vec3(roll, pitch, yaw);
}

}  // namespace mlcalib
