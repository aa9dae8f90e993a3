#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Dense>

#include "mlcalib/error.hpp"
#include "mlcalib/geometry.hpp"
#include "mlcalib/motion.hpp"

namespace mlcalib {

// Relative singular-value floors used for observability checks.
inline constexpr double kPitchRollRankTolerance = 1e-6;
inline constexpr double kYawTranslationRankTolerance = 1e-8;
inline constexpr double kKabschRankTolerance = 1e-9;
// Below this the stacked quaternion system holds only rounding noise (no rotation at all).
inline constexpr double kMinRotationExcitation = 1e-9;
inline constexpr std::size_t kMinInliers = 4;

enum class OutlierPolicy {
  kBoth,    // reject when rotation AND translation residuals exceed their thresholds
  kEither,  // reject when either residual exceeds its threshold
};

enum class ExtrinsicsSource { kInit, kKabsch, kRefined };

inline std::string_view to_string(ExtrinsicsSource s) {
  switch (s) {
    case ExtrinsicsSource::kInit: return "init";
    case ExtrinsicsSource::kKabsch: return "kabsch";
    case ExtrinsicsSource::kRefined: return "refined";
  }
  return "init";
}

struct HandEyeOptions {
  double eps_r = 0.01;  // rad
  double eps_t = 0.01;  // m^2
  OutlierPolicy policy = OutlierPolicy::kBoth;
  bool weighted_rows = false;  // scale each pair's rows by 1 / (1 + rot_residual / eps_r)
};

struct SolverDiagnostics {
  std::size_t input_count = 0;
  std::size_t filtered_count = 0;
  std::vector<double> pitch_roll_singular_values;
  std::vector<double> yaw_translation_singular_values;
  double pitch_roll_condition = 0.0;       // s_1 / s_3 of Q_N
  double yaw_translation_condition = 0.0;  // s_1 / s_4 of A
  double constraint_residual = 0.0;        // |x y + z w| of the pitch-roll quaternion
  double nullspace_residual = 0.0;         // ||Q_N q_yx||
  double yaw_translation_residual = 0.0;   // ||A x + b|| / sqrt(2N)
  int pitch_roll_roots = 0;
};

/// Estimate of T_b^a together with what produced it.
struct Extrinsics {
  Pose transform;
  bool tz_observable = false;
  ExtrinsicsSource source = ExtrinsicsSource::kInit;
  SolverDiagnostics diagnostics;
};

// ---------------------------------------------------------------------------
// Outlier filter

struct FilterResult {
  std::vector<MotionPair> pairs;  // every input pair with its inlier flag set
  std::size_t inlier_count = 0;
  std::size_t rejected_rotation_only = 0;     // only the rotation residual exceeded
  std::size_t rejected_translation_only = 0;  // only the translation residual exceeded
  std::size_t rejected_both = 0;

  std::vector<MotionPair> inliers() const {
    std::vector<MotionPair> out;
    out.reserve(inlier_count);
    for (const MotionPair& p : pairs)
      if (p.inlier) out.push_back(p);
    return out;
  }
};

inline FilterResult filter_motion_pairs(std::span<const MotionPair> pairs, double eps_r, double eps_t,
                                        OutlierPolicy policy = OutlierPolicy::kBoth) {
  if (!(eps_r > 0.0) || !(eps_t > 0.0))
    throw CalibError(ErrorCode::kConfigError, "screw thresholds must be positive");
  FilterResult out;
  out.pairs.assign(pairs.begin(), pairs.end());
  for (MotionPair& p : out.pairs) {
    const bool rot_bad = p.rot_residual > eps_r;
    const bool trans_bad = p.trans_residual > eps_t;
    p.inlier = policy == OutlierPolicy::kBoth ? !(rot_bad && trans_bad) : !(rot_bad || trans_bad);
    if (p.inlier) {
      ++out.inlier_count;
    } else if (rot_bad && trans_bad) {
      ++out.rejected_both;
    } else if (rot_bad) {
      ++out.rejected_rotation_only;
    } else {
      ++out.rejected_translation_only;
    }
  }
  if (out.inlier_count < kMinInliers)
    throw CalibError(ErrorCode::kTooFewInliers, std::to_string(out.inlier_count) +
                                                    " motion pairs survive the screw filter, need at least " +
                                                    std::to_string(kMinInliers));
  return out;
}

namespace detail {

inline std::vector<double> row_weights(std::span<const MotionPair> pairs, const HandEyeOptions* opts) {
  std::vector<double> w(pairs.size(), 1.0);
  if (opts != nullptr && opts->weighted_rows)
    for (std::size_t i = 0; i < pairs.size(); ++i) w[i] = 1.0 / (1.0 + pairs[i].rot_residual / opts->eps_r);
  return w;
}

template <typename Derived>
std::vector<double> to_vector(const Eigen::MatrixBase<Derived>& v) {
  return std::vector<double>(v.derived().data(), v.derived().data() + v.size());
}

// Symmetric bilinear form of x*y + z*w on (w, x, y, z) coefficient vectors.
inline double constraint_form(const Vec4& p, const Vec4& q) {
  return 0.5 * (p[1] * q[2] + q[1] * p[2] + p[3] * q[0] + q[3] * p[0]);
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Pitch-roll rotation

struct PitchRollSolution {
  Rotation pitch_roll;
  Vec4 singular_values = Vec4::Zero();
  double constraint_residual = 0.0;
  double nullspace_residual = 0.0;
  int roots = 0;
};

/// Solves q_a (x) q_yx = q_yx (x) q_b for the pitch-roll part of the extrinsic.
///
/// Planar motions leave a two-dimensional null space of the stacked
/// [L(q_a) - R(q_b)] system; inside it the quaternion satisfying
/// x*y = -z*w with unit norm is selected. The constraint has two roots that
/// differ by a half turn about z; the one with |pitch| <= pi/2 is kept, the
/// yaw solve absorbs the other half turn.
inline PitchRollSolution solve_pitchroll(std::span<const MotionPair> pairs, const HandEyeOptions* opts = nullptr) {
  if (pairs.size() < kMinInliers)
    throw CalibError(ErrorCode::kTooFewInliers, "pitch-roll solve needs at least 4 motion pairs");
  const std::vector<double> weights = detail::row_weights(pairs, opts);
  Eigen::MatrixXd qn(4 * pairs.size(), 4);
  for (std::size_t i = 0; i < pairs.size(); ++i)
    qn.block<4, 4>(4 * i, 0) =
        weights[i] * (quat_left_matrix(pairs[i].motion_a.rotation) - quat_right_matrix(pairs[i].motion_b.rotation));

  Eigen::JacobiSVD<Eigen::MatrixXd> svd(qn, Eigen::ComputeFullV);
  PitchRollSolution out;
  out.singular_values = svd.singularValues();
  const Vec4& s = out.singular_values;
  if (!(s[0] > kMinRotationExcitation) || s[1] < kPitchRollRankTolerance * s[0])
    throw CalibError(ErrorCode::kDegenerateMotion,
                     "motions do not constrain pitch and roll (singular values s2/s1 = " +
                         std::to_string(s[0] > 0.0 ? s[1] / s[0] : 0.0) + ")");

  const Vec4 v3 = svd.matrixV().col(2);
  const Vec4 v4 = svd.matrixV().col(3);
  Mat2 form;
  form << detail::constraint_form(v3, v3), detail::constraint_form(v3, v4), detail::constraint_form(v3, v4),
      detail::constraint_form(v4, v4);
  Eigen::SelfAdjointEigenSolver<Mat2> eig(form);
  const double mu1 = eig.eigenvalues()[0];
  const double mu2 = eig.eigenvalues()[1];
  const Vec2 e1 = eig.eigenvectors().col(0);
  const Vec2 e2 = eig.eigenvectors().col(1);

  std::vector<Vec2> lambdas;
  if (mu1 <= 0.0 && mu2 >= 0.0 && (mu1 < 0.0 || mu2 > 0.0)) {
    // cos^2 * mu1 + sin^2 * mu2 = 0
    const double phi = mu2 > 0.0 ? std::atan(std::sqrt(-mu1 / mu2)) : 0.5 * kPi;
    lambdas.push_back(std::cos(phi) * e1 + std::sin(phi) * e2);
    lambdas.push_back(std::cos(phi) * e1 - std::sin(phi) * e2);
    out.roots = 2;
  } else {
    // no exact root (noise) or an isotropic form: closest admissible direction
    lambdas.push_back(std::abs(mu1) <= std::abs(mu2) ? e1 : e2);
    out.roots = 0;
  }

  struct Candidate {
    Rotation q;
    bool canonical_pitch;
    double residual;
  };
  std::vector<Candidate> candidates;
  for (const Vec2& l : lambdas) {
    Rotation q = Rotation::from_wxyz(l[0] * v3 + l[1] * v4);
    if (out.roots == 0) q = quat_decompose_yaw_pitchroll(q).pitch_roll;
    // R(0,0) = cos(pitch) for a pure pitch-roll rotation
    const bool canonical = 1.0 - 2.0 * (q.y() * q.y() + q.z() * q.z()) >= 0.0;
    candidates.push_back({q, canonical, (qn * q.wxyz()).norm()});
  }
  const auto best = std::min_element(candidates.begin(), candidates.end(), [](const Candidate& a, const Candidate& b) {
    if (a.canonical_pitch != b.canonical_pitch) return a.canonical_pitch;
    return a.residual < b.residual;
  });
  out.pitch_roll = best->q;
  out.nullspace_residual = best->residual;
  out.constraint_residual = std::abs(best->q.x() * best->q.y() + best->q.z() * best->q.w());
  return out;
}

// ---------------------------------------------------------------------------
// Yaw and planar translation

struct YawTranslationSolution {
  double yaw = 0.0;
  double tx = 0.0;
  double ty = 0.0;
  double residual = 0.0;
  Vec4 singular_values = Vec4::Zero();
};

/// Least squares on the first two rows of (R_a - I) t = R t_b - t_a with t_z = 0.
///
/// Per pair: [R1 J] [t_x, t_y, -cos(yaw), -sin(yaw)]^T = -t_a(0:2), where R1 is
/// the upper-left 2x2 block of R_a - I and J is built from the first two
/// components u of R(q_yx) t_b as [u0 -u1; u1 u0]. With this sign convention
/// the noiseless system is satisfied exactly by the true extrinsic.
inline YawTranslationSolution solve_yaw_translation(std::span<const MotionPair> pairs, const Rotation& pitch_roll,
                                                    const HandEyeOptions* opts = nullptr) {
  if (pairs.size() < 2)
    throw CalibError(ErrorCode::kTooFewInliers, "yaw/translation solve needs at least 2 motion pairs");
  const std::vector<double> weights = detail::row_weights(pairs, opts);
  const Mat3 r_yx = pitch_roll.matrix();
  const Eigen::Index rows = 2 * static_cast<Eigen::Index>(pairs.size());
  Eigen::MatrixXd a(rows, 4);
  Eigen::VectorXd b(rows);
  for (std::size_t i = 0; i < pairs.size(); ++i) {
    const Mat3 ra = pairs[i].motion_a.rotation.matrix() - Mat3::Identity();
    const Vec3 u = r_yx * pairs[i].motion_b.translation;
    Eigen::Matrix<double, 2, 4> g;
    g << ra(0, 0), ra(0, 1), u.x(), -u.y(),
         ra(1, 0), ra(1, 1), u.y(), u.x();
    a.block<2, 4>(2 * i, 0) = weights[i] * g;
    b.segment<2>(2 * i) = weights[i] * pairs[i].motion_a.translation.head<2>();
  }

  Eigen::JacobiSVD<Eigen::MatrixXd> svd(a, Eigen::ComputeThinU | Eigen::ComputeThinV);
  YawTranslationSolution out;
  out.singular_values = svd.singularValues();
  const Vec4& s = out.singular_values;
  if (!(s[0] > 0.0) || s[3] < kYawTranslationRankTolerance * s[0])
    throw CalibError(ErrorCode::kDegenerateMotion,
                     "motions do not constrain yaw and planar translation (s4/s1 = " +
                         std::to_string(s[0] > 0.0 ? s[3] / s[0] : 0.0) + ")");
  const Vec4 x = svd.solve(-b);
  Vec2 trig(-x[2], -x[3]);
  trig.normalize();
  out.yaw = std::atan2(trig.y(), trig.x());

  // Translation re-solved with the unit-norm (cos, sin) held fixed.
  const Eigen::VectorXd rhs = -b - a.rightCols<2>() * (-trig);
  const Vec2 t = a.leftCols<2>().colPivHouseholderQr().solve(rhs);
  out.tx = t.x();
  out.ty = t.y();
  Vec4 x_final;
  x_final << t, -trig;
  out.residual = (a * x_final + b).norm() / std::sqrt(static_cast<double>(rows));
  return out;
}

// ---------------------------------------------------------------------------
// Full initialization

inline Extrinsics initialize_extrinsic(std::span<const MotionPair> pairs, const HandEyeOptions& opts = {}) {
  if (pairs.size() < kMinInliers)
    throw CalibError(ErrorCode::kTooFewInliers, "initialization needs at least 4 motion pairs");
  const FilterResult filtered = filter_motion_pairs(pairs, opts.eps_r, opts.eps_t, opts.policy);
  const std::vector<MotionPair> inliers = filtered.inliers();

  const PitchRollSolution pr = solve_pitchroll(inliers, &opts);
  const YawTranslationSolution yt = solve_yaw_translation(inliers, pr.pitch_roll, &opts);

  Extrinsics out;
  out.transform = Pose{Rotation::about_z(yt.yaw) * pr.pitch_roll, Vec3(yt.tx, yt.ty, 0.0)};
  out.tz_observable = false;
  out.source = ExtrinsicsSource::kInit;
  SolverDiagnostics& d = out.diagnostics;
  d.input_count = pairs.size();
  d.filtered_count = filtered.inlier_count;
  d.pitch_roll_singular_values = detail::to_vector(pr.singular_values);
  d.yaw_translation_singular_values = detail::to_vector(yt.singular_values);
  d.pitch_roll_condition = pr.singular_values[0] / pr.singular_values[2];
  d.yaw_translation_condition = yt.singular_values[0] / yt.singular_values[3];
  d.constraint_residual = pr.constraint_residual;
  d.nullspace_residual = pr.nullspace_residual;
  d.yaw_translation_residual = yt.residual;
  d.pitch_roll_roots = pr.roots;
  return out;
}

// ---------------------------------------------------------------------------
// Kabsch baseline

/// Rotation from aligning rotation vectors theta_a r_a = R theta_b r_b with an
/// SVD (reflection-corrected), translation from least squares on
/// (R_a - I) t = R t_b - t_a over all three rows.
inline Extrinsics kabsch_baseline(std::span<const MotionPair> pairs) {
  if (pairs.size() < 3) throw CalibError(ErrorCode::kTooFewInliers, "Kabsch baseline needs at least 3 motion pairs");
  Mat3 cov = Mat3::Zero();
  for (const MotionPair& p : pairs)
    cov += rotation_log_vector(p.motion_b.rotation) * rotation_log_vector(p.motion_a.rotation).transpose();

  Eigen::JacobiSVD<Mat3> svd(cov, Eigen::ComputeFullU | Eigen::ComputeFullV);
  const Vec3 s = svd.singularValues();
  if (!(s[0] > 0.0) || s[1] < kKabschRankTolerance * s[0])
    throw CalibError(ErrorCode::kDegenerateMotion, "rotation axes span less than a plane; Kabsch is undetermined");
  const Mat3 u = svd.matrixU();
  const Mat3 v = svd.matrixV();
  Mat3 fix = Mat3::Identity();
  fix(2, 2) = (v * u.transpose()).determinant() < 0.0 ? -1.0 : 1.0;
  const Mat3 r = v * fix * u.transpose();

  const Eigen::Index rows = 3 * static_cast<Eigen::Index>(pairs.size());
  Eigen::MatrixXd a(rows, 3);
  Eigen::VectorXd b(rows);
  for (std::size_t i = 0; i < pairs.size(); ++i) {
    a.block<3, 3>(3 * i, 0) = pairs[i].motion_a.rotation.matrix() - Mat3::Identity();
    b.segment<3>(3 * i) = r * pairs[i].motion_b.translation - pairs[i].motion_a.translation;
  }
  Eigen::JacobiSVD<Eigen::MatrixXd> tsvd(a, Eigen::ComputeThinU | Eigen::ComputeThinV);
  tsvd.setThreshold(1e-6);

  Extrinsics out;
  out.transform = Pose{Rotation(r), tsvd.solve(b)};
  out.source = ExtrinsicsSource::kKabsch;
  out.tz_observable = false;
  out.diagnostics.input_count = pairs.size();
  out.diagnostics.filtered_count = pairs.size();
  return out;
}

// ---------------------------------------------------------------------------
// Joint cost

struct JointCost {
  double rotation = 0.0;     // sum ||R_a R - R R_b||_F^2
  double translation = 0.0;  // sum ||(R_a - I) t + t_a - R t_b||^2

  double total() const { return rotation + translation; }
};

/// Objective of the constrained hand-eye problem evaluated at a candidate.
/// Both terms vanish exactly when A_k X = X B_k for every pair.
inline JointCost evaluate_joint_cost(std::span<const MotionPair> pairs, const Pose& candidate) {
  const Mat3 r = candidate.rotation.matrix();
  const Vec3& t = candidate.translation;
  JointCost cost;
  for (const MotionPair& p : pairs) {
    const Mat3 ra = p.motion_a.rotation.matrix();
    const Mat3 rb = p.motion_b.rotation.matrix();
    cost.rotation += (ra * r - r * rb).squaredNorm();
    cost.translation += ((ra - Mat3::Identity()) * t + p.motion_a.translation - r * p.motion_b.translation).squaredNorm();
  }
  return cost;
}

inline JointCost evaluate_joint_cost(std::span<const MotionPair> pairs, const Extrinsics& candidate) {
  return evaluate_joint_cost(pairs, candidate.transform);
}

}  // namespace mlcalib
