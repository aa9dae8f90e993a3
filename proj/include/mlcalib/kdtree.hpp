#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numeric>
#include <span>
#include <vector>

#include "mlcalib/error.hpp"
#include "mlcalib/geometry.hpp"
#include "mlcalib/point_cloud.hpp"

namespace mlcalib {

struct Neighbor {
  std::size_t index = 0;
  double distance = std::numeric_limits<double>::infinity();
};

/// Static 3-d tree over a copy of the input points. Queries are exact and
/// the tree is immutable after construction, so it can be shared read-only
/// between threads.
class KdTree {
 public:
  explicit KdTree(std::span<const Vec3> points) : points_(points.begin(), points.end()) {
    if (points_.empty()) throw CalibError(ErrorCode::kEmptyCloud, "cannot index an empty cloud");
    order_.resize(points_.size());
    std::iota(order_.begin(), order_.end(), std::size_t{0});
    nodes_.reserve(2 * points_.size() / kLeafSize + 1);
    build(0, order_.size());
  }

  std::size_t size() const { return points_.size(); }
  const Vec3& point(std::size_t i) const { return points_[i]; }
  const std::vector<Vec3>& points() const { return points_; }

  Neighbor nearest(const Vec3& query) const {
    Neighbor best;
    double best_sq = std::numeric_limits<double>::infinity();
    search_nearest(0, query, best.index, best_sq);
    best.distance = std::sqrt(best_sq);
    return best;
  }

  /// The k nearest points sorted by increasing distance (fewer if the cloud is smaller).
  std::vector<Neighbor> knn(const Vec3& query, std::size_t k) const {
    k = std::min(k, points_.size());
    std::vector<std::pair<double, std::size_t>> heap;
    heap.reserve(k + 1);
    if (k > 0) search_knn(0, query, k, heap);
    std::sort_heap(heap.begin(), heap.end());
    std::vector<Neighbor> out;
    out.reserve(heap.size());
    for (const auto& [d2, i] : heap) out.push_back({i, std::sqrt(d2)});
    return out;
  }

  bool any_within(const Vec3& query, double radius) const { return nearest(query).distance < radius; }

 private:
  static constexpr std::size_t kLeafSize = 8;

  struct Node {
    std::size_t begin, end;  // range in order_
    int axis = -1;           // -1 for leaves
    double split = 0.0;
    std::uint32_t left = 0, right = 0;
  };

  std::uint32_t build(std::size_t begin, std::size_t end) {
    const auto id = static_cast<std::uint32_t>(nodes_.size());
    nodes_.push_back({begin, end});
    if (end - begin <= kLeafSize) return id;

    Vec3 lo = Vec3::Constant(std::numeric_limits<double>::infinity());
    Vec3 hi = -lo;
    for (std::size_t i = begin; i < end; ++i) {
      lo = lo.cwiseMin(points_[order_[i]]);
      hi = hi.cwiseMax(points_[order_[i]]);
    }
    int axis;
    (hi - lo).maxCoeff(&axis);
    const std::size_t mid = begin + (end - begin) / 2;
    std::nth_element(order_.begin() + begin, order_.begin() + mid, order_.begin() + end,
                     [&](std::size_t a, std::size_t b) { return points_[a][axis] < points_[b][axis]; });
    const double split = points_[order_[mid]][axis];
    const std::uint32_t left = build(begin, mid);
    const std::uint32_t right = build(mid, end);
    Node& n = nodes_[id];
    n.axis = axis;
    n.split = split;
    n.left = left;
    n.right = right;
    return id;
  }

  void search_nearest(std::uint32_t id, const Vec3& q, std::size_t& best, double& best_sq) const {
    const Node& n = nodes_[id];
    if (n.axis < 0) {
      for (std::size_t i = n.begin; i < n.end; ++i) {
        const std::size_t idx = order_[i];
        const double d2 = (points_[idx] - q).squaredNorm();
        if (d2 < best_sq || (d2 == best_sq && idx < best)) {
          best_sq = d2;
          best = idx;
        }
      }
      return;
    }
    const double diff = q[n.axis] - n.split;
    const std::uint32_t near = diff < 0.0 ? n.left : n.right;
    const std::uint32_t far = diff < 0.0 ? n.right : n.left;
    search_nearest(near, q, best, best_sq);
    if (diff * diff <= best_sq) search_nearest(far, q, best, best_sq);
  }

  void search_knn(std::uint32_t id, const Vec3& q, std::size_t k,
                  std::vector<std::pair<double, std::size_t>>& heap) const {
    const Node& n = nodes_[id];
    if (n.axis < 0) {
      for (std::size_t i = n.begin; i < n.end; ++i) {
        const std::size_t idx = order_[i];
        const std::pair<double, std::size_t> cand{(points_[idx] - q).squaredNorm(), idx};
        if (heap.size() < k) {
          heap.push_back(cand);
          std::push_heap(heap.begin(), heap.end());
        } else if (cand < heap.front()) {
          std::pop_heap(heap.begin(), heap.end());
          heap.back() = cand;
          std::push_heap(heap.begin(), heap.end());
        }
      }
      return;
    }
    const double diff = q[n.axis] - n.split;
    const std::uint32_t near = diff < 0.0 ? n.left : n.right;
    const std::uint32_t far = diff < 0.0 ? n.right : n.left;
    search_knn(near, q, k, heap);
    if (heap.size() < k || diff * diff <= heap.front().first) search_knn(far, q, k, heap);
  }

  std::vector<Vec3> points_;
  std::vector<std::size_t> order_;
  std::vector<Node> nodes_;
};

inline KdTree build_index(const PointCloud& cloud) { return KdTree(cloud.points); }

inline Neighbor nearest(const KdTree& index, const Vec3& p) { return index.nearest(p); }

}  // namespace mlcalib
