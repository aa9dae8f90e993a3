#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "mlcalib/error.hpp"
#include "mlcalib/geometry.hpp"
#include "mlcalib/handeye.hpp"
#include "mlcalib/kdtree.hpp"
#include "mlcalib/point_cloud.hpp"
#include "mlcalib/simulation.hpp"

namespace mlcalib {

// ---------------------------------------------------------------------------
// RANSAC plane

/// Plane n . p + d = 0 with n_z >= 0.
struct Plane {
  Vec3 normal = Vec3::UnitZ();
  double offset = 0.0;
  std::size_t inlier_count = 0;
  double inlier_rms = 0.0;
  Vec3 centroid = Vec3::Zero();  // of the inliers
  std::vector<std::size_t> inliers;

  double signed_distance(const Vec3& p) const { return normal.dot(p) + offset; }
};

struct RansacOptions {
  int max_iterations = 500;
  double inlier_distance = 0.05;  // m
  double confidence = 0.99;
  // When set, hypotheses whose normal is more than `max_tilt` radians away
  // from this direction (either sign) are discarded.
  std::optional<Vec3> up;
  double max_tilt = 0.35;
};

namespace detail {

struct PlaneFit {
  Vec3 normal;
  Vec3 centroid;
  Vec3 eigenvalues;  // ascending
};

inline PlaneFit fit_plane_pca(std::span<const Vec3> points, std::span<const std::size_t> indices) {
  Vec3 centroid = Vec3::Zero();
  for (std::size_t i : indices) centroid += points[i];
  centroid /= static_cast<double>(indices.size());
  Mat3 cov = Mat3::Zero();
  for (std::size_t i : indices) {
    const Vec3 d = points[i] - centroid;
    cov += d * d.transpose();
  }
  Eigen::SelfAdjointEigenSolver<Mat3> eig(cov);
  return {eig.eigenvectors().col(0), centroid, eig.eigenvalues()};
}

}  // namespace detail

/// Plane with the largest consensus set, refit to its inliers by PCA.
/// The iteration budget adapts to the running inlier ratio and is capped at
/// `max_iterations`.
inline Plane ransac_plane(std::span<const Vec3> points, const RansacOptions& opts, std::uint64_t seed) {
  const std::size_t n = points.size();
  if (n < 3) throw CalibError(ErrorCode::kDegenerateGeometry, "plane fit needs at least 3 points");
  Rng rng(mix_seed(seed, 0x706c));
  std::uniform_int_distribution<std::size_t> pick(0, n - 1);

  double extent = 0.0;
  for (const Vec3& p : points) extent = std::max(extent, (p - points[0]).norm());
  const double area_floor = 1e-12 * std::max(extent * extent, 1e-300);

  Vec3 best_normal = Vec3::UnitZ();
  double best_offset = 0.0;
  std::size_t best_count = 0;
  bool found = false;
  double needed = static_cast<double>(opts.max_iterations);
  for (int iter = 0; iter < opts.max_iterations && iter < needed; ++iter) {
    std::size_t i0 = pick(rng), i1 = pick(rng), i2 = pick(rng);
    if (n == 3) {
      i0 = 0;
      i1 = 1;
      i2 = 2;
    }
    if (i0 == i1 || i1 == i2 || i0 == i2) continue;
    const Vec3 cross = (points[i1] - points[i0]).cross(points[i2] - points[i0]);
    if (cross.norm() <= area_floor) continue;
    const Vec3 normal = cross.normalized();
    if (opts.up && std::abs(normal.dot(*opts.up)) < std::cos(opts.max_tilt)) continue;
    const double offset = -normal.dot(points[i0]);
    std::size_t count = 0;
    for (const Vec3& p : points)
      if (std::abs(normal.dot(p) + offset) < opts.inlier_distance) ++count;
    if (!found || count > best_count) {
      found = true;
      best_count = count;
      best_normal = normal;
      best_offset = offset;
      const double ratio = static_cast<double>(count) / static_cast<double>(n);
      const double p_all = std::pow(ratio, 3.0);
      if (p_all >= 1.0) {
        needed = 0.0;
      } else if (p_all > 0.0) {
        needed = std::log(1.0 - opts.confidence) / std::log(1.0 - p_all);
      }
    }
  }
  if (!found) throw CalibError(ErrorCode::kDegenerateGeometry, "no admissible plane hypothesis");

  auto collect = [&](const Vec3& normal, double offset) {
    std::vector<std::size_t> idx;
    for (std::size_t i = 0; i < n; ++i)
      if (std::abs(normal.dot(points[i]) + offset) < opts.inlier_distance) idx.push_back(i);
    return idx;
  };

  Plane plane;
  plane.normal = best_normal;
  plane.offset = best_offset;
  plane.inliers = collect(best_normal, best_offset);
  if (plane.inliers.size() >= 3) {
    const detail::PlaneFit fit = detail::fit_plane_pca(points, plane.inliers);
    std::vector<std::size_t> refit_inliers = collect(fit.normal, -fit.normal.dot(fit.centroid));
    if (refit_inliers.size() >= 3) {
      plane.normal = fit.normal;
      plane.offset = -fit.normal.dot(fit.centroid);
      plane.inliers = std::move(refit_inliers);
    }
  }
  if (plane.normal.dot(opts.up.value_or(Vec3::UnitZ())) < 0.0) {
    plane.normal = -plane.normal;
    plane.offset = -plane.offset;
  }
  plane.inlier_count = plane.inliers.size();
  double sq = 0.0;
  plane.centroid = Vec3::Zero();
  for (std::size_t i : plane.inliers) {
    const double d = plane.signed_distance(points[i]);
    sq += d * d;
    plane.centroid += points[i];
  }
  if (plane.inlier_count > 0) {
    plane.inlier_rms = std::sqrt(sq / static_cast<double>(plane.inlier_count));
    plane.centroid /= static_cast<double>(plane.inlier_count);
  }
  return plane;
}

// ---------------------------------------------------------------------------
// Ground alignment

struct GroundPair {
  std::int64_t k = 0;
  std::vector<Vec3> a;  // ground points of the reference sensor
  std::vector<Vec3> b;  // ground points of the target sensor
};

struct TzEstimate {
  double tz = 0.0;
  std::size_t frames_used = 0;
  std::vector<double> per_frame;
};

/// t_z as the mean over frames of (c_a - R c_b)_z, with c the centroids of
/// the RANSAC ground inliers on each side. The reference sensor moves in the
/// ground plane, so its z axis is the ground normal; unless the caller gives
/// one, planes are searched near that direction (mapped through R for b).
inline TzEstimate estimate_tz(std::span<const GroundPair> frames, const Rotation& rotation,
                              const RansacOptions& ransac = {}, std::uint64_t seed = 0) {
  RansacOptions opts_a = ransac, opts_b = ransac;
  if (!ransac.up) {
    opts_a.up = Vec3::UnitZ();
    opts_b.up = rotation.inverse() * Vec3::UnitZ();
  }
  TzEstimate out;
  double sum = 0.0;
  std::uint64_t stream = 0;
  for (const GroundPair& f : frames) {
    ++stream;
    if (f.a.size() < 3 || f.b.size() < 3) continue;
    try {
      const Plane pa = ransac_plane(f.a, opts_a, mix_seed(seed, 2 * stream));
      const Plane pb = ransac_plane(f.b, opts_b, mix_seed(seed, 2 * stream + 1));
      if (pa.inlier_count == 0 || pb.inlier_count == 0) continue;
      const double value = (pa.centroid - rotation * pb.centroid).z();
      out.per_frame.push_back(value);
      sum += value;
    } catch (const CalibError& e) {
      if (e.code() != ErrorCode::kDegenerateGeometry) throw;
    }
  }
  if (out.per_frame.empty())
    throw CalibError(ErrorCode::kNoGroundOverlap, "no frame has ground inliers on both sensors");
  out.frames_used = out.per_frame.size();
  out.tz = sum / static_cast<double>(out.frames_used);
  return out;
}

// ---------------------------------------------------------------------------
// Overlap filter

struct OverlapResult {
  std::vector<Vec3> points_a;  // S_a, reference frame
  std::vector<Vec3> points_b;  // S_b, target frame
  std::vector<std::size_t> indices_a;
  std::vector<std::size_t> indices_b;
  double omega = 0.0;
};

/// Keeps the points of each cloud lying within `radius` of the other cloud
/// once b is mapped into a's frame, and reports the overlap factor
/// omega = |S_a|/|P_a| * |S_b|/|P_b|.
inline OverlapResult overlap_filter(std::span<const Vec3> cloud_a, std::span<const Vec3> cloud_b,
                                    const Pose& b_to_a, double radius) {
  if (!(radius > 0.0)) throw CalibError(ErrorCode::kConfigError, "overlap radius must be positive");
  OverlapResult out;
  if (cloud_a.empty() || cloud_b.empty()) return out;
  const std::vector<Vec3> b_in_a = transform_points(b_to_a, {cloud_b.begin(), cloud_b.end()});
  const KdTree index_a(cloud_a);
  const KdTree index_b(b_in_a);
  for (std::size_t i = 0; i < cloud_a.size(); ++i)
    if (index_b.any_within(cloud_a[i], radius)) {
      out.indices_a.push_back(i);
      out.points_a.push_back(cloud_a[i]);
    }
  for (std::size_t i = 0; i < cloud_b.size(); ++i)
    if (index_a.any_within(b_in_a[i], radius)) {
      out.indices_b.push_back(i);
      out.points_b.push_back(cloud_b[i]);
    }
  out.omega = (static_cast<double>(out.points_a.size()) / static_cast<double>(cloud_a.size())) *
              (static_cast<double>(out.points_b.size()) / static_cast<double>(cloud_b.size()));
  return out;
}

inline OverlapResult overlap_filter(const PointCloud& a, const PointCloud& b, const Pose& b_to_a, double radius) {
  return overlap_filter(a.points, b.points, b_to_a, radius);
}

// ---------------------------------------------------------------------------
// Point-to-plane ICP

struct IcpOptions {
  int max_iterations = 50;
  double tolerance = 1e-6;      // norm of the tangent increment
  std::size_t normal_neighbors = 10;
  double trim_factor = 3.0;     // reject pairs farther than trim * median distance
  std::size_t min_correspondences = 6;
  double max_curvature = 0.02;  // lambda_min / sum(lambda) above this: not planar enough
  double degeneracy_ratio = 1e-6;
};

struct RegistrationResult {
  Pose transform;
  double error = 0.0;          // mean |n . (T p_s - p_t)| over accepted pairs
  double initial_error = 0.0;  // same statistic at the initial transform
  int iterations = 0;
  double omega = 0.0;
  bool converged = false;
  bool degenerate = false;
  std::size_t correspondences = 0;
};

struct NormalField {
  std::vector<Vec3> normals;
  std::vector<std::uint8_t> valid;
  std::size_t valid_count = 0;
};

/// PCA normals over the k nearest neighbours, oriented toward the sensor at
/// the origin. Collinear or strongly curved neighbourhoods are marked invalid.
inline NormalField estimate_normals(const KdTree& index, std::size_t neighbors, double max_curvature) {
  NormalField field;
  const std::size_t n = index.size();
  field.normals.assign(n, Vec3::Zero());
  field.valid.assign(n, 0);
  std::vector<std::size_t> idx;
  for (std::size_t i = 0; i < n; ++i) {
    const Vec3& p = index.point(i);
    const std::vector<Neighbor> nn = index.knn(p, neighbors);
    if (nn.size() < 3) continue;
    idx.clear();
    for (const Neighbor& nb : nn) idx.push_back(nb.index);
    const detail::PlaneFit fit = detail::fit_plane_pca(index.points(), idx);
    const Vec3& ev = fit.eigenvalues;
    const double total = ev.sum();
    if (!(ev[2] > 0.0) || ev[1] < 1e-6 * ev[2]) continue;
    if (ev[0] / total > max_curvature) continue;
    Vec3 normal = fit.normal;
    if (normal.dot(p) > 0.0) normal = -normal;
    field.normals[i] = normal;
    field.valid[i] = 1;
    ++field.valid_count;
  }
  return field;
}

namespace detail {

struct Correspondences {
  std::vector<Vec3> source;  // transformed source points
  std::vector<Vec3> target;
  std::vector<Vec3> normal;
  double error = 0.0;
};

inline Correspondences match(std::span<const Vec3> source, const Pose& pose, const KdTree& target,
                             const NormalField& normals, double trim_factor) {
  struct Raw {
    Vec3 p;
    std::size_t t;
    double d;
  };
  std::vector<Raw> raw;
  raw.reserve(source.size());
  const Mat3 r = pose.rotation.matrix();
  for (const Vec3& s : source) {
    const Vec3 p = r * s + pose.translation;
    const Neighbor nb = target.nearest(p);
    if (normals.valid[nb.index]) raw.push_back({p, nb.index, nb.distance});
  }
  Correspondences out;
  if (raw.empty()) return out;
  std::vector<double> d;
  d.reserve(raw.size());
  for (const Raw& c : raw) d.push_back(c.d);
  const auto mid = d.begin() + static_cast<std::ptrdiff_t>(d.size() / 2);
  std::nth_element(d.begin(), mid, d.end());
  const double cap = std::max(trim_factor * *mid, 1e-9);
  double sum = 0.0;
  for (const Raw& c : raw) {
    if (c.d > cap) continue;
    const Vec3& q = target.point(c.t);
    const Vec3& n = normals.normals[c.t];
    out.source.push_back(c.p);
    out.target.push_back(q);
    out.normal.push_back(n);
    sum += std::abs(n.dot(c.p - q));
  }
  if (!out.source.empty()) out.error = sum / static_cast<double>(out.source.size());
  return out;
}

}  // namespace detail

/// Registers `source` onto `target`; the returned transform maps source
/// coordinates into the target frame. The best iterate (by registration
/// error) is returned, so the result never scores worse than `initial`.
inline RegistrationResult icp_point_to_plane(std::span<const Vec3> source, std::span<const Vec3> target,
                                             const Pose& initial, const IcpOptions& opts = {}) {
  if (source.size() < 10 || target.size() < 10)
    throw CalibError(ErrorCode::kInsufficientCorrespondences, "ICP needs at least 10 points in each cloud");
  if (target.size() < opts.normal_neighbors)
    throw CalibError(ErrorCode::kNormalEstimationFailure, "target has fewer points than the normal neighbourhood");
  const KdTree index(target);
  const NormalField normals = estimate_normals(index, opts.normal_neighbors, opts.max_curvature);
  if (normals.valid_count < opts.min_correspondences)
    throw CalibError(ErrorCode::kNormalEstimationFailure,
                     "only " + std::to_string(normals.valid_count) + " target points have a well-defined normal");

  RegistrationResult result;
  Pose pose = initial;
  double best_error = std::numeric_limits<double>::infinity();
  Pose best_pose = initial;
  std::size_t best_count = 0;

  auto consider = [&](const detail::Correspondences& c, const Pose& at) {
    if (c.source.size() >= opts.min_correspondences && c.error < best_error) {
      best_error = c.error;
      best_pose = at;
      best_count = c.source.size();
    }
  };

  for (int iter = 0; iter < opts.max_iterations; ++iter) {
    const detail::Correspondences c = detail::match(source, pose, index, normals, opts.trim_factor);
    if (c.source.size() < opts.min_correspondences)
      throw CalibError(ErrorCode::kInsufficientCorrespondences,
                       std::to_string(c.source.size()) + " accepted correspondences, need " +
                           std::to_string(opts.min_correspondences));
    if (iter == 0) result.initial_error = c.error;
    consider(c, pose);

    Eigen::Matrix<double, 6, 6> h = Eigen::Matrix<double, 6, 6>::Zero();
    Vec6 g = Vec6::Zero();
    for (std::size_t i = 0; i < c.source.size(); ++i) {
      Vec6 j;
      j.head<3>() = c.source[i].cross(c.normal[i]);
      j.tail<3>() = c.normal[i];
      const double r = c.normal[i].dot(c.source[i] - c.target[i]);
      h.noalias() += j * j.transpose();
      g.noalias() += j * r;
    }
    Eigen::SelfAdjointEigenSolver<Eigen::Matrix<double, 6, 6>> eig(h);
    const auto& ev = eig.eigenvalues();
    Vec6 delta = Vec6::Zero();
    bool degenerate = false;
    for (int k = 0; k < 6; ++k) {
      if (ev[k] <= opts.degeneracy_ratio * ev[5]) {
        degenerate = true;
        continue;
      }
      const Vec6 v = eig.eigenvectors().col(k);
      delta -= (v.dot(g) / ev[k]) * v;
    }
    result.degenerate = result.degenerate || degenerate;

    // delta = (omega, v): p -> exp(omega) p + v
    pose = Pose{rotation_exp(delta.head<3>()), delta.tail<3>()} * pose;
    result.iterations = iter + 1;
    if (delta.norm() < opts.tolerance) {
      result.converged = true;
      break;
    }
  }
  const detail::Correspondences last = detail::match(source, pose, index, normals, opts.trim_factor);
  consider(last, pose);

  result.transform = best_pose;
  result.error = best_error;
  result.correspondences = best_count;
  if (result.degenerate) result.converged = false;
  return result;
}

// ---------------------------------------------------------------------------
// Refinement

enum class GateMode {
  kAbsolute,        // omega > omega_gate
  kRelativeToMax,   // omega >= relative_gate * max omega
};

struct RefineOptions {
  double overlap_radius = 10.0;
  double omega_gate = 0.8;
  GateMode gate_mode = GateMode::kAbsolute;
  double relative_gate = 0.6;
  std::size_t candidates = 10;
  IcpOptions icp;
  RansacOptions ransac;
  std::uint64_t seed = 0;
};

struct FrameResult {
  std::int64_t k = 0;
  double omega = 0.0;
  bool gated_in = false;
  bool selected = false;
  std::optional<RegistrationResult> registration;
  std::string status;  // "ok", "gated", or the failure reason
};

struct RefinementOutcome {
  Extrinsics extrinsics;
  std::vector<FrameResult> frames;
  std::size_t candidate_count = 0;
  TzEstimate tz;
};

/// Chordal L2 mean of rotations: sign-aligned quaternion sum, renormalized.
inline Rotation average_rotations(std::span<const Rotation> rotations) {
  if (rotations.empty()) return Rotation::identity();
  Vec4 sum = Vec4::Zero();
  const Vec4 ref = rotations.front().wxyz();
  for (const Rotation& r : rotations) {
    const Vec4 c = r.wxyz();
    sum += c.dot(ref) < 0.0 ? Vec4(-c) : c;
  }
  return Rotation::from_wxyz(sum);
}

namespace detail {

inline std::vector<Vec3> ground_candidates(const PointCloud& cloud) {
  return cloud.has_ground_labels() ? cloud.ground_points() : cloud.points;
}

}  // namespace detail

/// Completes the initial estimate's t_z from the ground, registers every
/// frame whose overlap passes the gate, and averages the lowest-error
/// converged registrations.
inline RefinementOutcome refine_extrinsic(std::span<const FramePair> frames, const Extrinsics& init,
                                          const RefineOptions& opts = {}) {
  if (frames.empty()) throw CalibError(ErrorCode::kNoUsableFrames, "no frames given to refinement");
  RefinementOutcome out;

  std::vector<GroundPair> ground;
  ground.reserve(frames.size());
  for (const FramePair& f : frames)
    ground.push_back({f.k, detail::ground_candidates(f.a), detail::ground_candidates(f.b)});
  out.tz = estimate_tz(ground, init.transform.rotation, opts.ransac, opts.seed);

  Pose start = init.transform;
  start.translation.z() = out.tz.tz;

  std::vector<OverlapResult> overlaps;
  overlaps.reserve(frames.size());
  double omega_max = 0.0;
  for (const FramePair& f : frames) {
    overlaps.push_back(overlap_filter(f.a, f.b, start, opts.overlap_radius));
    omega_max = std::max(omega_max, overlaps.back().omega);
  }

  for (std::size_t i = 0; i < frames.size(); ++i) {
    FrameResult fr;
    fr.k = frames[i].k;
    fr.omega = overlaps[i].omega;
    fr.gated_in = opts.gate_mode == GateMode::kAbsolute ? fr.omega > opts.omega_gate
                                                        : fr.omega >= opts.relative_gate * omega_max && fr.omega > 0.0;
    if (!fr.gated_in) {
      fr.status = "gated";
      out.frames.push_back(std::move(fr));
      continue;
    }
    try {
      RegistrationResult reg = icp_point_to_plane(overlaps[i].points_b, overlaps[i].points_a, start, opts.icp);
      reg.omega = fr.omega;
      fr.status = reg.converged ? "ok" : (reg.degenerate ? "degenerate" : "not converged");
      fr.registration = reg;
    } catch (const CalibError& e) {
      fr.status = std::string(to_string(e.code()));
    }
    out.frames.push_back(std::move(fr));
  }

  std::vector<std::size_t> usable;
  for (std::size_t i = 0; i < out.frames.size(); ++i)
    if (out.frames[i].registration && out.frames[i].registration->converged) usable.push_back(i);
  if (usable.empty())
    throw CalibError(ErrorCode::kNoUsableFrames, "no frame passed the overlap gate and converged");
  std::stable_sort(usable.begin(), usable.end(), [&](std::size_t a, std::size_t b) {
    return out.frames[a].registration->error < out.frames[b].registration->error;
  });
  usable.resize(std::min(usable.size(), std::max<std::size_t>(opts.candidates, 1)));

  std::vector<Rotation> rotations;
  Vec3 translation = Vec3::Zero();
  for (std::size_t i : usable) {
    out.frames[i].selected = true;
    rotations.push_back(out.frames[i].registration->transform.rotation);
    translation += out.frames[i].registration->transform.translation;
  }
  out.candidate_count = usable.size();

  out.extrinsics.transform = Pose{average_rotations(rotations), translation / static_cast<double>(usable.size())};
  out.extrinsics.source = ExtrinsicsSource::kRefined;
  out.extrinsics.tz_observable = true;
  out.extrinsics.diagnostics = init.diagnostics;
  return out;
}

}  // namespace mlcalib
