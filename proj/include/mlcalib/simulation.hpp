#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <random>
#include <string>
#include <string_view>
#include <vector>

#include "mlcalib/error.hpp"
#include "mlcalib/geometry.hpp"
#include "mlcalib/motion.hpp"
#include "mlcalib/point_cloud.hpp"

namespace mlcalib {

using Rng = std::mt19937_64;

/// splitmix64 finalizer; derives independent streams from one user seed.
inline std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t stream) {
  std::uint64_t z = seed + 0x9E3779B97F4A7C15ull * (stream + 1);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
  return z ^ (z >> 31);
}

struct Trajectory {
  std::string sensor;
  std::vector<std::int64_t> stamps;
  std::vector<Pose> poses;  // world frame

  std::size_t size() const { return poses.size(); }

  void validate() const {
    if (stamps.size() != poses.size())
      throw CalibError(ErrorCode::kConfigError, "trajectory stamps and poses differ in length");
    if (poses.size() < 3)
      throw CalibError(ErrorCode::kConfigError, "trajectory needs at least 3 poses (K >= 2)");
    for (std::size_t i = 1; i < stamps.size(); ++i)
      if (stamps[i] <= stamps[i - 1])
        throw CalibError(ErrorCode::kConfigError, "trajectory timestamps must increase strictly");
  }
};

enum class TrajectoryKind { kLoop, kFigureEight, kLowRotationSweep };

inline std::string_view to_string(TrajectoryKind kind) {
  switch (kind) {
    case TrajectoryKind::kLoop: return "loop";
    case TrajectoryKind::kFigureEight: return "eight";
    case TrajectoryKind::kLowRotationSweep: return "sweep";
  }
  return "loop";
}

inline std::optional<TrajectoryKind> parse_trajectory_kind(std::string_view s) {
  if (s == "loop") return TrajectoryKind::kLoop;
  if (s == "eight" || s == "figure-eight") return TrajectoryKind::kFigureEight;
  if (s == "sweep" || s == "low-rotation-sweep") return TrajectoryKind::kLowRotationSweep;
  return std::nullopt;
}

// Peak heading deviation of the sweep trajectory; keeps the heading range below 0.2 rad.
inline constexpr double kSweepHeadingAmplitude = 0.09;

/// Planar vehicle path with K + 1 poses at stamps 0..K.
///
/// `scale` is the loop radius for kLoop; for the other kinds the step length
/// is 0.06 * scale. The seed jitters yaw rates and phases.
inline Trajectory generate_trajectory(TrajectoryKind kind, int steps, double scale, std::uint64_t seed,
                                      std::string sensor = "a") {
  if (steps < 2) throw CalibError(ErrorCode::kConfigError, "trajectory needs K >= 2");
  Rng rng(mix_seed(seed, 0x7261));
  std::uniform_real_distribution<double> unit(-1.0, 1.0);
  const double phase = kPi * unit(rng);
  const double k_steps = static_cast<double>(steps);

  std::vector<double> yaw_rate(steps);
  double step_length = 0.06 * scale;
  double heading = 0.0;
  switch (kind) {
    case TrajectoryKind::kLoop: {
      // three laps with a modulated turn rate (tight and wide arcs), capped so
      // short trajectories still turn a sensible amount per step
      const double base = std::min(6.0 * kPi / k_steps, 0.25);
      const double omega = 2.0 * kPi * 3.0 / k_steps;
      for (int k = 0; k < steps; ++k)
        yaw_rate[k] = base * (1.0 + 0.7 * std::sin(omega * k + phase)) * (1.0 + 0.1 * unit(rng));
      step_length = scale * base;
      heading = phase;
      break;
    }
    case TrajectoryKind::kFigureEight: {
      const double cycles = 2.0;
      const double omega = 2.0 * kPi * cycles / k_steps;
      const double amplitude = 2.4;
      const double peak_rate = std::min(amplitude * omega, 0.3);
      for (int k = 0; k < steps; ++k)
        yaw_rate[k] = peak_rate * std::cos(omega * (k + 0.5) + phase) * (1.0 + 0.1 * unit(rng));
      heading = 0.5 * phase;
      break;
    }
    case TrajectoryKind::kLowRotationSweep: {
      const double period = 4.0 + 1.5 * (unit(rng) + 1.0);
      auto sweep_heading = [&](double k) {
        return kSweepHeadingAmplitude * std::sin(2.0 * kPi * k / period + phase);
      };
      for (int k = 0; k < steps; ++k) yaw_rate[k] = sweep_heading(k + 1) - sweep_heading(k);
      heading = sweep_heading(0);
      break;
    }
  }

  Trajectory traj;
  traj.sensor = std::move(sensor);
  traj.stamps.reserve(steps + 1);
  traj.poses.reserve(steps + 1);
  Vec3 position = Vec3::Zero();
  for (int k = 0; k <= steps; ++k) {
    traj.stamps.push_back(k);
    traj.poses.push_back(Pose{Rotation::about_z(heading), position});
    if (k == steps) break;
    const double mid = heading + 0.5 * yaw_rate[k];
    const double length = step_length * (1.0 + 0.1 * unit(rng));
    position += length * Vec3(std::cos(mid), std::sin(mid), 0.0);
    heading += yaw_rate[k];
  }
  return traj;
}

/// Sensor trajectory of a rigidly attached sensor: world_T_b = world_T_a * T_b^a.
inline Trajectory attach_sensor(const Trajectory& reference, const Pose& extrinsic, std::string sensor) {
  Trajectory out;
  out.sensor = std::move(sensor);
  out.stamps = reference.stamps;
  out.poses.reserve(reference.size());
  for (const Pose& p : reference.poses) out.poses.push_back(p * extrinsic);
  return out;
}

/// Motion pairs satisfying A_k X = X B_k, i.e. B_k = X^-1 A_k X.
inline std::vector<MotionPair> derive_target_motions(const Trajectory& reference, const Pose& extrinsic) {
  reference.validate();
  const Pose inv = pose_invert(extrinsic);
  std::vector<MotionPair> pairs;
  pairs.reserve(reference.size() - 1);
  for (std::size_t k = 1; k < reference.size(); ++k) {
    const Pose a = relative_motion(reference.poses[k - 1], reference.poses[k]);
    pairs.push_back(MotionPair::make(reference.stamps[k], a, inv * a * extrinsic));
  }
  return pairs;
}

/// Incremental motions of two synchronized trajectories.
inline std::vector<MotionPair> motions_from_trajectories(const Trajectory& a, const Trajectory& b) {
  a.validate();
  b.validate();
  if (a.stamps != b.stamps)
    throw CalibError(ErrorCode::kFrameMismatch, "pose files " + a.sensor + " and " + b.sensor +
                                                    " do not share the same timestamps");
  std::vector<MotionPair> pairs;
  pairs.reserve(a.size() - 1);
  for (std::size_t k = 1; k < a.size(); ++k)
    pairs.push_back(MotionPair::make(a.stamps[k], relative_motion(a.poses[k - 1], a.poses[k]),
                                     relative_motion(b.poses[k - 1], b.poses[k])));
  return pairs;
}

/// T_noise = exp(log(T) + n), n ~ N(0, sigma2 I_6) in the se(3) tangent space.
inline Pose perturb_motion(const Pose& motion, double sigma2, Rng& rng) {
  if (sigma2 < 0.0) throw CalibError(ErrorCode::kConfigError, "noise variance must be >= 0");
  if (sigma2 == 0.0) return motion;
  std::normal_distribution<double> noise(0.0, std::sqrt(sigma2));
  Vec6 xi = pose_log(motion);
  for (int i = 0; i < 6; ++i) xi[i] += noise(rng);
  return pose_exp(xi);
}

inline Pose perturb_motion(const Pose& motion, double sigma2, std::uint64_t seed) {
  Rng rng(mix_seed(seed, 0x6e6f));
  return perturb_motion(motion, sigma2, rng);
}

/// Independently perturbs both motions of every pair and refreshes residuals.
inline std::vector<MotionPair> add_motion_noise(std::vector<MotionPair> pairs, double sigma2, std::uint64_t seed) {
  Rng rng(mix_seed(seed, 0x6e70));
  for (MotionPair& p : pairs) {
    p.motion_a = perturb_motion(p.motion_a, sigma2, rng);
    p.motion_b = perturb_motion(p.motion_b, sigma2, rng);
    p.refresh_residuals();
  }
  return pairs;
}

/// Rebuilds absolute poses from a start pose and a chain of motions.
inline Trajectory integrate_motions(const Pose& start, const std::vector<Pose>& motions,
                                    const std::vector<std::int64_t>& stamps, std::string sensor) {
  Trajectory out;
  out.sensor = std::move(sensor);
  out.stamps = stamps;
  out.poses.reserve(motions.size() + 1);
  out.poses.push_back(start);
  for (const Pose& m : motions) out.poses.push_back(out.poses.back() * m);
  return out;
}

struct RigConfig {
  std::string reference = "a";
  std::string target = "b";
  Pose extrinsic;                 // T_b^a
  double reference_height = 1.9;  // mounting height of the reference sensor above ground, m
};

/// Simulated-car mounting: rpy [0, 3.14, 1.57] rad, t [-2.5, 1.5, 0] m.
inline RigConfig simulated_car_rig() {
  return {"a", "b", Pose{Rotation::from_rpy(0.0, 3.14, 1.57), Vec3(-2.5, 1.5, 0.0)}, 1.9};
}

/// Manufacturer values of the top/front pair: rpy [0.01, 0.08, 0.03], t [0.42, 0.00, -1.26].
inline RigConfig top_front_rig() {
  return {"l1", "l2", Pose{Rotation::from_rpy(0.01, 0.08, 0.03), Vec3(0.42, 0.00, -1.26)}, 2.0};
}

/// Manufacturer values of the top/tail pair: rpy [-0.02, 0.01, -3.11], t [-2.11, 0.06, -1.18].
inline RigConfig top_tail_rig() {
  return {"l1", "l3", Pose{Rotation::from_rpy(-0.02, 0.01, -3.11), Vec3(-2.11, 0.06, -1.18)}, 2.0};
}

// ---------------------------------------------------------------------------
// Scene and scanner

struct Patch {
  std::vector<Vec3> corners;  // convex polygon, coplanar
  Vec3 normal = Vec3::UnitZ();
  bool ground = false;
  bool unbounded = false;  // infinite plane through corners[0]

  static Patch make(std::vector<Vec3> corners, bool ground = false) {
    Patch p;
    p.normal = (corners[1] - corners[0]).cross(corners[2] - corners[0]).normalized();
    p.corners = std::move(corners);
    p.ground = ground;
    return p;
  }

  /// Axis-aligned-in-z vertical wall from (x0, y0) to (x1, y1).
  static Patch wall(const Vec2& from, const Vec2& to, double height) {
    return make({Vec3(from.x(), from.y(), 0.0), Vec3(to.x(), to.y(), 0.0), Vec3(to.x(), to.y(), height),
                 Vec3(from.x(), from.y(), height)});
  }

  bool contains(const Vec3& p) const {
    if (unbounded) return true;
    constexpr double kEps = 1e-9;
    bool any_pos = false, any_neg = false;
    for (std::size_t i = 0; i < corners.size(); ++i) {
      const Vec3& c0 = corners[i];
      const Vec3& c1 = corners[(i + 1) % corners.size()];
      const double s = normal.dot((c1 - c0).cross(p - c0));
      if (s > kEps) any_pos = true;
      if (s < -kEps) any_neg = true;
      if (any_pos && any_neg) return false;
    }
    return true;
  }
};

struct SceneModel {
  std::vector<Patch> patches;

  /// Scene holding only the ground plane z = 0 (unbounded when half_extent is infinite).
  static SceneModel with_ground(double half_extent = std::numeric_limits<double>::infinity()) {
    SceneModel scene;
    Patch ground;
    if (std::isinf(half_extent)) {
      ground.corners = {Vec3::Zero()};
      ground.unbounded = true;
    } else {
      const double e = half_extent;
      ground.corners = {Vec3(-e, -e, 0), Vec3(e, -e, 0), Vec3(e, e, 0), Vec3(-e, e, 0)};
    }
    ground.normal = Vec3::UnitZ();
    ground.ground = true;
    scene.patches.push_back(std::move(ground));
    return scene;
  }

  void add_box(const Vec2& center, const Vec2& half_size, double yaw, double height) {
    const Mat2 r = Eigen::Rotation2Dd(yaw).toRotationMatrix();
    std::array<Vec2, 4> c = {center + r * Vec2(-half_size.x(), -half_size.y()),
                             center + r * Vec2(half_size.x(), -half_size.y()),
                             center + r * Vec2(half_size.x(), half_size.y()),
                             center + r * Vec2(-half_size.x(), half_size.y())};
    for (int i = 0; i < 4; ++i) patches.push_back(Patch::wall(c[i], c[(i + 1) % 4], height));
  }

  void validate() const {
    bool has_ground = false;
    for (const Patch& p : patches) {
      if (std::abs(p.normal.norm() - 1.0) > 1e-9)
        throw CalibError(ErrorCode::kConfigError, "scene patch normal is not unit length");
      if (p.corners.empty() || (!p.unbounded && p.corners.size() < 3))
        throw CalibError(ErrorCode::kConfigError, "scene patch needs at least 3 corners");
      has_ground = has_ground || p.ground;
    }
    if (!has_ground) throw CalibError(ErrorCode::kConfigError, "scene has no ground plane");
  }
};

/// Street canyon closed by cross facades, with a few rotated buildings so the
/// scans hold planes in several non-parallel directions.
inline SceneModel urban_block_scene() {
  SceneModel scene = SceneModel::with_ground(200.0);
  scene.patches.push_back(Patch::wall(Vec2(-60, 10), Vec2(60, 10), 9.0));
  scene.patches.push_back(Patch::wall(Vec2(60, -10), Vec2(-60, -10), 7.0));
  scene.patches.push_back(Patch::wall(Vec2(45, -30), Vec2(45, 30), 12.0));
  scene.patches.push_back(Patch::wall(Vec2(-45, 30), Vec2(-45, -30), 10.0));
  scene.add_box(Vec2(12.0, 6.5), Vec2(2.0, 1.2), 0.5, 3.0);
  scene.add_box(Vec2(-14.0, -6.0), Vec2(1.5, 2.5), -0.35, 2.5);
  scene.add_box(Vec2(28.0, -5.5), Vec2(1.0, 1.0), 0.8, 4.0);
  scene.add_box(Vec2(-30.0, 5.0), Vec2(2.5, 1.0), 0.2, 2.0);
  scene.add_box(Vec2(2.0, -7.0), Vec2(1.2, 1.2), 1.1, 1.5);
  return scene;
}

struct ScannerModel {
  int beams = 16;
  double fov_min_deg = -15.0;
  double fov_max_deg = 15.0;
  double horizontal_resolution_deg = 1.0;
  double max_range = 80.0;
  double min_range = 0.3;
  double range_noise_std = 0.01;

  void validate() const {
    if (beams < 1) throw CalibError(ErrorCode::kConfigError, "scanner beam count must be >= 1");
    if (!(max_range > 0.0)) throw CalibError(ErrorCode::kConfigError, "scanner max range must be > 0");
    if (!(horizontal_resolution_deg > 0.0))
      throw CalibError(ErrorCode::kConfigError, "scanner horizontal resolution must be > 0");
    if (range_noise_std < 0.0) throw CalibError(ErrorCode::kConfigError, "range noise must be >= 0");
  }
};

/// Casts the scanner's rays from `sensor_pose` (world frame) into the scene;
/// the nearest hit per ray within range is returned in the sensor frame.
inline PointCloud scan_scene(const SceneModel& scene, const Pose& sensor_pose, const ScannerModel& scanner,
                             std::uint64_t seed) {
  scanner.validate();
  scene.validate();
  Rng rng(mix_seed(seed, 0x7363));
  std::normal_distribution<double> range_noise(0.0, 1.0);

  const int azimuth_steps = std::max(1, static_cast<int>(std::lround(360.0 / scanner.horizontal_resolution_deg)));
  const double deg = kPi / 180.0;
  const Mat3 rot = sensor_pose.rotation.matrix();
  const Vec3 origin = sensor_pose.translation;

  PointCloud cloud;
  cloud.points.reserve(static_cast<std::size_t>(scanner.beams) * azimuth_steps);
  cloud.ground.reserve(cloud.points.capacity());
  for (int b = 0; b < scanner.beams; ++b) {
    const double elevation =
        scanner.beams == 1
            ? scanner.fov_min_deg * deg
            : (scanner.fov_min_deg + (scanner.fov_max_deg - scanner.fov_min_deg) * b / (scanner.beams - 1)) * deg;
    for (int s = 0; s < azimuth_steps; ++s) {
      const double azimuth = 2.0 * kPi * s / azimuth_steps;
      const Vec3 dir_sensor(std::cos(elevation) * std::cos(azimuth), std::cos(elevation) * std::sin(azimuth),
                            std::sin(elevation));
      const Vec3 dir = rot * dir_sensor;
      double best = scanner.max_range;
      const Patch* hit = nullptr;
      for (const Patch& patch : scene.patches) {
        const double denom = patch.normal.dot(dir);
        if (std::abs(denom) < 1e-12) continue;
        const double range = patch.normal.dot(patch.corners[0] - origin) / denom;
        if (range < scanner.min_range || range > best) continue;
        if (!patch.contains(origin + range * dir)) continue;
        best = range;
        hit = &patch;
      }
      if (hit == nullptr) continue;
      const double measured = best + scanner.range_noise_std * range_noise(rng);
      cloud.points.push_back(measured * dir_sensor);
      cloud.ground.push_back(hit->ground ? 1 : 0);
    }
  }
  if (cloud.points.empty()) throw CalibError(ErrorCode::kEmptyScan, "no ray hit the scene");
  return cloud;
}

/// Scans every `stride`-th pose of the vehicle trajectory with both sensors.
/// The reference sensor sits `rig.reference_height` above the vehicle origin.
inline std::vector<FramePair> scan_rig_frames(const SceneModel& scene, const Trajectory& vehicle, const RigConfig& rig,
                                              const ScannerModel& scanner, std::size_t stride, std::uint64_t seed) {
  std::vector<FramePair> frames;
  const Pose mount{Rotation::identity(), Vec3(0.0, 0.0, rig.reference_height)};
  for (std::size_t i = 0; i < vehicle.size(); i += std::max<std::size_t>(stride, 1)) {
    const Pose world_a = vehicle.poses[i] * mount;
    const Pose world_b = world_a * rig.extrinsic;
    FramePair f;
    f.k = vehicle.stamps[i];
    f.a = scan_scene(scene, world_a, scanner, mix_seed(seed, 4 * i));
    f.b = scan_scene(scene, world_b, scanner, mix_seed(seed, 4 * i + 1));
    f.a.sensor = rig.reference;
    f.b.sensor = rig.target;
    f.a.stamp = f.b.stamp = f.k;
    frames.push_back(std::move(f));
  }
  return frames;
}

}  // namespace mlcalib
