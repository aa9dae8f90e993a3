#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "mlcalib/geometry.hpp"

namespace mlcalib {

/// Points captured by one sensor at one timestamp, in that sensor's frame.
/// `ground` is either empty (no labels) or one flag per point.
struct PointCloud {
  std::string sensor;
  std::int64_t stamp = 0;
  std::vector<Vec3> points;
  std::vector<std::uint8_t> ground;

  std::size_t size() const { return points.size(); }
  bool empty() const { return points.empty(); }
  bool has_ground_labels() const { return !ground.empty(); }

  bool valid() const {
    if (!ground.empty() && ground.size() != points.size()) return false;
    for (const Vec3& p : points)
      if (!p.allFinite()) return false;
    return true;
  }

  std::vector<Vec3> ground_points() const {
    std::vector<Vec3> out;
    for (std::size_t i = 0; i < ground.size(); ++i)
      if (ground[i]) out.push_back(points[i]);
    return out;
  }
};

/// Simultaneous scans of the reference (a) and target (b) sensors.
struct FramePair {
  std::int64_t k = 0;
  PointCloud a;
  PointCloud b;
};

inline std::vector<Vec3> transform_points(const Pose& pose, const std::vector<Vec3>& points) {
  std::vector<Vec3> out;
  out.reserve(points.size());
  const Mat3 r = pose.rotation.matrix();
  for (const Vec3& p : points) out.push_back(r * p + pose.translation);
  return out;
}

}  // namespace mlcalib
