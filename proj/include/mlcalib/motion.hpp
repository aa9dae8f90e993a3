#pragma once

#include <cmath>
#include <cstdint>
#include <vector>

#include "mlcalib/geometry.hpp"

namespace mlcalib {

struct ScrewResiduals {
  double rotation = 0.0;     // |theta_a - theta_b|, radians
  double translation = 0.0;  // (r_a . t_a - r_b . t_b)^2, m^2
};

/// Screw-motion invariants of a conjugate pair: equal angles and equal
/// translation components along the rotation axis.
inline ScrewResiduals screw_residuals(const Pose& motion_a, const Pose& motion_b) {
  const AxisAngle aa = rotation_log(motion_a.rotation);
  const AxisAngle ab = rotation_log(motion_b.rotation);
  const double pitch_diff = aa.axis.dot(motion_a.translation) - ab.axis.dot(motion_b.translation);
  return {std::abs(aa.angle - ab.angle), pitch_diff * pitch_diff};
}

/// Synchronized incremental motions of the reference (a) and target (b)
/// sensors over the interval [k-1, k].
struct MotionPair {
  std::int64_t k = 0;
  Pose motion_a;
  Pose motion_b;
  double rot_residual = 0.0;
  double trans_residual = 0.0;
  bool inlier = true;

  static MotionPair make(std::int64_t k, const Pose& a, const Pose& b) {
    MotionPair p{k, a, b};
    p.refresh_residuals();
    return p;
  }

  void refresh_residuals() {
    const ScrewResiduals r = screw_residuals(motion_a, motion_b);
    rot_residual = r.rotation;
    trans_residual = r.translation;
  }
};

inline ScrewResiduals screw_residuals(const MotionPair& pair) {
  return screw_residuals(pair.motion_a, pair.motion_b);
}

/// Incremental motion T_{k}^{k-1} between two absolute poses.
inline Pose relative_motion(const Pose& previous, const Pose& current) {
  return pose_invert(previous) * current;
}

}  // namespace mlcalib
