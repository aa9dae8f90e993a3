#include <algorithm>
#include <random>
#include <vector>

#include <gtest/gtest.h>

#include "mlcalib/handeye.hpp"
#include "mlcalib/simulation.hpp"
#include "oracles.hpp"

namespace mlcalib {
namespace {

std::vector<MotionPair> planar_pairs(const Pose& x, TrajectoryKind kind = TrajectoryKind::kLoop, int k = 200,
                                     std::uint64_t seed = 0, double sigma2 = 0.0) {
  const Trajectory t = generate_trajectory(kind, k, 10.0, seed);
  return add_motion_noise(derive_target_motions(t, x), sigma2, seed);
}

// Motions rotating about all three axes, for solvers that need them.
std::vector<MotionPair> spatial_pairs(const Pose& x, std::uint64_t seed, int n = 40) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> g(0.0, 0.4);
  const Pose inv = pose_invert(x);
  std::vector<MotionPair> pairs;
  for (int k = 1; k <= n; ++k) {
    const Pose a{rotation_exp(Vec3(g(rng), g(rng), g(rng))), Vec3(g(rng), g(rng), g(rng))};
    pairs.push_back(MotionPair::make(k, a, inv * a * x));
  }
  return pairs;
}

double planar_error(const Pose& est, const Pose& truth) {
  return (est.translation - truth.translation).head<2>().norm();
}

TEST(ScrewResiduals, VanishOnConjugatePairs) {
  for (const MotionPair& p : planar_pairs(simulated_car_rig().extrinsic)) {
    const ScrewResiduals r = screw_residuals(p);
    EXPECT_LT(r.rotation, 1e-10);
    EXPECT_LT(r.translation, 1e-10);
  }
}

TEST(ScrewResiduals, ExactlyZeroForEqualMotions) {
  const Pose m{Rotation::from_rpy(0.1, -0.3, 0.7), Vec3(0.3, -1.0, 2.0)};
  const ScrewResiduals r = screw_residuals(m, m);
  EXPECT_EQ(r.rotation, 0.0);
  EXPECT_EQ(r.translation, 0.0);
}

TEST(ScrewResiduals, CachedValuesMatchRecomputation) {
  for (const MotionPair& p : planar_pairs(top_front_rig().extrinsic, TrajectoryKind::kLoop, 100, 1, 0.001)) {
    const ScrewResiduals r = screw_residuals(p.motion_a, p.motion_b);
    EXPECT_NEAR(p.rot_residual, r.rotation, 1e-12);
    EXPECT_NEAR(p.trans_residual, r.translation, 1e-12);
  }
}

TEST(ScrewResiduals, NoisyMedianScalesWithSigma) {
  const double sigma2 = 0.001, sigma = std::sqrt(sigma2);
  std::vector<double> rot;
  for (std::uint64_t seed = 0; seed < 5; ++seed)
    for (const MotionPair& p : planar_pairs(simulated_car_rig().extrinsic, TrajectoryKind::kLoop, 200, seed, sigma2))
      rot.push_back(p.rot_residual);
  std::nth_element(rot.begin(), rot.begin() + rot.size() / 2, rot.end());
  const double median = rot[rot.size() / 2];
  // Each angle moves by about N(0, sigma^2) along the yaw axis, so the
  // difference is N(0, 2 sigma^2) whose absolute median is 0.6745 sqrt(2) sigma.
  const double expected = 0.6745 * std::sqrt(2.0) * sigma;
  EXPECT_NEAR(median, expected, 0.25 * expected);
}

TEST(Filter, KeepsEveryCleanPair) {
  const auto pairs = planar_pairs(simulated_car_rig().extrinsic);
  const FilterResult f = filter_motion_pairs(pairs, 0.01, 0.01);
  EXPECT_EQ(f.inlier_count, pairs.size());
}

TEST(Filter, DropsPairExceedingBothThresholds) {
  auto pairs = planar_pairs(simulated_car_rig().extrinsic, TrajectoryKind::kLoop, 20);
  pairs[5].rot_residual = 1.0;
  pairs[5].trans_residual = 1.0;
  pairs[6].rot_residual = 1.0;  // one residual only: kept under the default policy
  const FilterResult both = filter_motion_pairs(pairs, 0.01, 0.01);
  EXPECT_FALSE(both.pairs[5].inlier);
  EXPECT_TRUE(both.pairs[6].inlier);
  EXPECT_EQ(both.inlier_count, pairs.size() - 1);
  EXPECT_EQ(both.rejected_both, 1u);

  const FilterResult either = filter_motion_pairs(pairs, 0.01, 0.01, OutlierPolicy::kEither);
  EXPECT_FALSE(either.pairs[6].inlier);
  EXPECT_EQ(either.rejected_rotation_only, 1u);
}

TEST(Filter, TooFewInliers) {
  auto pairs = planar_pairs(simulated_car_rig().extrinsic, TrajectoryKind::kLoop, 6);
  for (std::size_t i = 0; i < 3; ++i) pairs[i].rot_residual = pairs[i].trans_residual = 1.0;
  try {
    filter_motion_pairs(pairs, 0.01, 0.01);
    FAIL();
  } catch (const CalibError& e) {
    EXPECT_EQ(e.code(), ErrorCode::kTooFewInliers);
  }
}

TEST(Filter, TighterThresholdsNeverKeepMore) {
  const auto pairs = planar_pairs(simulated_car_rig().extrinsic, TrajectoryKind::kFigureEight, 200, 2, 0.001);
  std::size_t previous = pairs.size();
  for (double eps : {1.0, 0.1, 0.03, 0.01, 0.005, 0.003}) {
    std::size_t n = 0;
    try {
      n = filter_motion_pairs(pairs, eps, eps).inlier_count;
    } catch (const CalibError&) {
      n = 0;
    }
    EXPECT_LE(n, previous);
    previous = n;
  }
}

TEST(Filter, HelpsAgainstGrossOutliers) {
  // One pair in ten gets a spurious extra rotation, as a bad odometry step would.
  int better = 0;
  const Pose x = simulated_car_rig().extrinsic;
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    auto pairs = planar_pairs(x, TrajectoryKind::kLoop, 200, seed, 0.0001);
    std::mt19937_64 rng(seed);
    for (std::size_t i = 0; i < pairs.size(); i += 10) {
      const Vec3 kick = 0.3 * oracle::random_unit_quaternion(rng).tail<3>().normalized();
      pairs[i] = MotionPair::make(pairs[i].k, pairs[i].motion_a,
                                  Pose{rotation_exp(kick) * pairs[i].motion_b.rotation,
                                       pairs[i].motion_b.translation + Vec3(0.5, -0.5, 0.0)});
    }
    HandEyeOptions loose;
    loose.eps_r = loose.eps_t = 1e9;
    const double e_filtered = rotation_angle_distance(initialize_extrinsic(pairs).transform.rotation, x.rotation);
    const double e_all = rotation_angle_distance(initialize_extrinsic(pairs, loose).transform.rotation, x.rotation);
    if (e_filtered < e_all) ++better;
  }
  EXPECT_GE(better, 8);
}

TEST(PitchRoll, RecoversSimRigComponent) {
  const Pose x = simulated_car_rig().extrinsic;
  const PitchRollSolution s = solve_pitchroll(planar_pairs(x));
  const YawPitchRoll truth = quat_decompose_yaw_pitchroll(x.rotation);
  // The solver may return the pitch-roll rotation composed with a half turn
  // about z; that ambiguity is absorbed by the yaw, so compare modulo it.
  const double direct = rotation_angle_distance(s.pitch_roll, truth.pitch_roll);
  const double flipped = rotation_angle_distance(Rotation::about_z(kPi) * s.pitch_roll, truth.pitch_roll);
  EXPECT_LT(std::min(direct, flipped), 1e-8);
  const Rotation& q = s.pitch_roll;
  EXPECT_LT(std::abs(q.x() * q.y() + q.z() * q.w()), 1e-9);
  EXPECT_NEAR(q.quaternion().norm(), 1.0, 1e-12);
  EXPECT_GE(q.w(), 0.0);
}

TEST(PitchRoll, IdentityRig) {
  const PitchRollSolution s = solve_pitchroll(planar_pairs(Pose::identity()));
  EXPECT_LT(rotation_angle(s.pitch_roll), 1e-8);
}

TEST(PitchRoll, SingularValuesShowTwoDimensionalNullSpace) {
  const PitchRollSolution s = solve_pitchroll(planar_pairs(top_front_rig().extrinsic));
  EXPECT_GT(s.singular_values[1], 1e-6 * s.singular_values[0]);
  EXPECT_LT(s.singular_values[3], 1e-10);
}

TEST(PitchRoll, StraightLineMotionIsDegenerate) {
  Trajectory t;
  for (int k = 0; k < 10; ++k) {
    t.stamps.push_back(k);
    t.poses.push_back(Pose{Rotation::identity(), Vec3(k, 0, 0)});
  }
  try {
    solve_pitchroll(derive_target_motions(t, top_front_rig().extrinsic));
    FAIL();
  } catch (const CalibError& e) {
    EXPECT_EQ(e.code(), ErrorCode::kDegenerateMotion);
  }
}

TEST(PitchRoll, LowNoiseAccuracy) {
  const Pose x = simulated_car_rig().extrinsic;
  const YawPitchRoll truth = quat_decompose_yaw_pitchroll(x.rotation);
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    const PitchRollSolution s = solve_pitchroll(planar_pairs(x, TrajectoryKind::kLoop, 200, seed, 0.0001));
    const double e = std::min(rotation_angle_distance(s.pitch_roll, truth.pitch_roll),
                              rotation_angle_distance(Rotation::about_z(kPi) * s.pitch_roll, truth.pitch_roll));
    EXPECT_LE(e, 0.05);
  }
}

TEST(YawTranslation, SimRigNoiseless) {
  const Pose x = simulated_car_rig().extrinsic;
  const auto pairs = planar_pairs(x);
  const PitchRollSolution pr = solve_pitchroll(pairs);
  const YawTranslationSolution yt = solve_yaw_translation(pairs, pr.pitch_roll);
  const Rotation r = Rotation::about_z(yt.yaw) * pr.pitch_roll;
  EXPECT_LT(rotation_angle_distance(r, x.rotation), 1e-8);
  EXPECT_LT(std::abs(yt.tx - x.translation.x()), 1e-8);
  EXPECT_LT(std::abs(yt.ty - x.translation.y()), 1e-8);
  EXPECT_LT(yt.residual, 1e-10);
}

TEST(YawTranslation, IdentityRig) {
  const auto pairs = planar_pairs(Pose::identity());
  const YawTranslationSolution yt = solve_yaw_translation(pairs, Rotation::identity());
  EXPECT_LT(std::abs(yt.yaw), 1e-8);
  EXPECT_LT(std::hypot(yt.tx, yt.ty), 1e-8);
}

TEST(YawTranslation, PureTranslationIsDegenerate) {
  Trajectory t;
  for (int k = 0; k < 10; ++k) {
    t.stamps.push_back(k);
    t.poses.push_back(Pose{Rotation::identity(), Vec3(k, 0.3 * k * k, 0)});
  }
  try {
    solve_yaw_translation(derive_target_motions(t, top_front_rig().extrinsic), Rotation::identity());
    FAIL();
  } catch (const CalibError& e) {
    EXPECT_EQ(e.code(), ErrorCode::kDegenerateMotion);
  }
}

TEST(YawTranslation, LowNoiseTranslation) {
  const Pose x = simulated_car_rig().extrinsic;
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    const auto pairs = planar_pairs(x, TrajectoryKind::kFigureEight, 200, seed, 0.0001);
    EXPECT_LE(planar_error(initialize_extrinsic(pairs).transform, x), 0.5);
  }
}

TEST(Initialize, NoiselessRecoveryAcrossRigs) {
  std::mt19937_64 rng(21);
  std::uniform_real_distribution<double> ang(-kPi, kPi), tilt(-1.2, 1.2), tr(-3.0, 3.0);
  for (int i = 0; i < 20; ++i) {
    const Pose x{Rotation::from_rpy(ang(rng), tilt(rng), ang(rng)), Vec3(tr(rng), tr(rng), tr(rng))};
    for (auto kind : {TrajectoryKind::kLoop, TrajectoryKind::kFigureEight, TrajectoryKind::kLowRotationSweep}) {
      const Extrinsics e = initialize_extrinsic(planar_pairs(x, kind, 100, i));
      EXPECT_LT(rotation_angle_distance(e.transform.rotation, x.rotation), 1e-7);
      EXPECT_LT(planar_error(e.transform, x), 1e-7);
      EXPECT_EQ(e.transform.translation.z(), 0.0);
      EXPECT_FALSE(e.tz_observable);
      EXPECT_EQ(e.source, ExtrinsicsSource::kInit);
    }
  }
}

TEST(Initialize, IdentityRig) {
  const Extrinsics e = initialize_extrinsic(planar_pairs(Pose::identity()));
  EXPECT_LT(rotation_angle(e.transform.rotation), 1e-8);
  EXPECT_LT(e.transform.translation.norm(), 1e-8);
}

TEST(Initialize, DiagnosticsPopulated) {
  const auto pairs = planar_pairs(top_tail_rig().extrinsic, TrajectoryKind::kLoop, 100, 0, 0.0001);
  const Extrinsics e = initialize_extrinsic(pairs);
  const SolverDiagnostics& d = e.diagnostics;
  EXPECT_EQ(d.input_count, pairs.size());
  EXPECT_GT(d.filtered_count, 4u);
  EXPECT_EQ(d.pitch_roll_singular_values.size(), 4u);
  EXPECT_EQ(d.yaw_translation_singular_values.size(), 4u);
  EXPECT_GT(d.pitch_roll_condition, 1.0);
  EXPECT_GT(d.yaw_translation_condition, 1.0);
  EXPECT_LT(d.constraint_residual, 1e-9);
  EXPECT_GE(d.pitch_roll_roots, 1);
}

TEST(Initialize, IgnoresTrueHeightOffset) {
  Pose x = top_front_rig().extrinsic;
  const Extrinsics a = initialize_extrinsic(planar_pairs(x, TrajectoryKind::kLoop, 150, 4));
  x.translation.z() += 3.7;
  const Extrinsics b = initialize_extrinsic(planar_pairs(x, TrajectoryKind::kLoop, 150, 4));
  EXPECT_LT(rotation_angle_distance(a.transform.rotation, b.transform.rotation), 1e-10);
  EXPECT_LT((a.transform.translation - b.transform.translation).norm(), 1e-10);
  for (std::size_t i = 0; i < 4; ++i)
    EXPECT_NEAR(a.diagnostics.pitch_roll_singular_values[i], b.diagnostics.pitch_roll_singular_values[i], 1e-10);
  EXPECT_NEAR(a.diagnostics.yaw_translation_residual, b.diagnostics.yaw_translation_residual, 1e-10);
}

TEST(Initialize, HighNoiseRotation) {
  const Pose x = simulated_car_rig().extrinsic;
  std::vector<double> errs;
  for (std::uint64_t seed = 0; seed < 10; ++seed)
    errs.push_back(rotation_angle_distance(
        initialize_extrinsic(planar_pairs(x, TrajectoryKind::kFigureEight, 200, seed, 0.001)).transform.rotation,
        x.rotation));
  std::nth_element(errs.begin(), errs.begin() + 5, errs.end());
  EXPECT_LE(errs[5], 0.15);
}

TEST(Initialize, WeightedRowsStillExactWithoutNoise) {
  HandEyeOptions opts;
  opts.weighted_rows = true;
  const Pose x = top_tail_rig().extrinsic;
  const Extrinsics e = initialize_extrinsic(planar_pairs(x), opts);
  EXPECT_LT(rotation_angle_distance(e.transform.rotation, x.rotation), 1e-7);
}

TEST(Kabsch, RecoversRotationFromSpatialMotions) {
  const Pose x = simulated_car_rig().extrinsic;
  const Extrinsics e = kabsch_baseline(spatial_pairs(x, 3));
  EXPECT_LT(rotation_angle_distance(e.transform.rotation, x.rotation), 1e-6);
  EXPECT_LT((e.transform.translation - x.translation).norm(), 1e-6);
  EXPECT_EQ(e.source, ExtrinsicsSource::kKabsch);
}

TEST(Kabsch, IdentityRig) {
  const Extrinsics e = kabsch_baseline(spatial_pairs(Pose::identity(), 4));
  EXPECT_LT(rotation_angle(e.transform.rotation), 1e-8);
  EXPECT_LT(e.transform.translation.norm(), 1e-8);
}

TEST(Kabsch, PlanarNoiselessAxesAreRankDeficient) {
  try {
    kabsch_baseline(planar_pairs(simulated_car_rig().extrinsic));
    FAIL();
  } catch (const CalibError& e) {
    EXPECT_EQ(e.code(), ErrorCode::kDegenerateMotion);
  }
}

TEST(Kabsch, ProducesProperRotation) {
  const auto pairs = planar_pairs(simulated_car_rig().extrinsic, TrajectoryKind::kLoop, 200, 1, 0.0001);
  const Extrinsics e = kabsch_baseline(pairs);
  EXPECT_NEAR(e.transform.rotation.matrix().determinant(), 1.0, 1e-12);
}

TEST(JointCost, ZeroAtTruth) {
  const Pose x = top_front_rig().extrinsic;
  const JointCost c = evaluate_joint_cost(planar_pairs(x), x);
  EXPECT_LT(c.rotation, 1e-12);
  EXPECT_LT(c.translation, 1e-12);
}

TEST(JointCost, PositiveAwayFromTruth) {
  const Pose x = top_front_rig().extrinsic;
  const Pose off{Rotation::about_z(0.1) * x.rotation, x.translation};
  const JointCost c = evaluate_joint_cost(planar_pairs(x), off);
  EXPECT_GT(c.rotation, 0.0);
  EXPECT_GT(c.translation, 0.0);
}

TEST(JointCost, TruthIsLocalMinimum) {
  const Pose x = simulated_car_rig().extrinsic;
  const auto pairs = spatial_pairs(x, 8);
  const double at_truth = evaluate_joint_cost(pairs, x).total();
  for (int axis = 0; axis < 6; ++axis)
    for (double step : {-0.05, 0.05}) {
      Vec6 xi = Vec6::Zero();
      xi[axis] = step;
      const Pose moved = x * pose_exp(xi);
      EXPECT_GT(evaluate_joint_cost(pairs, moved).total(), at_truth) << axis << " " << step;
    }
}

TEST(JointCost, ProposedBeatsKabschOnPlanarData) {
  const Pose x = simulated_car_rig().extrinsic;
  int wins = 0;
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const auto pairs = planar_pairs(x, TrajectoryKind::kLoop, 200, seed, 0.0001);
    const double proposed = evaluate_joint_cost(pairs, initialize_extrinsic(pairs)).total();
    const double kabsch = evaluate_joint_cost(pairs, kabsch_baseline(pairs)).total();
    if (proposed <= kabsch) ++wins;
  }
  EXPECT_GE(wins, 8);
}

}  // namespace
}  // namespace mlcalib
