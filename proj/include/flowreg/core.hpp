#pragma once

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <numeric>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace flowreg {

using Vec3 = Eigen::Vector3d;
using Vec6 = Eigen::Matrix<double, 6, 1>;
using Mat3 = Eigen::Matrix3d;

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

template <int Dim>
inline bool all_finite(const Eigen::Matrix<double, Dim, 1>& v) {
  for (int d = 0; d < Dim; ++d) {
    if (!std::isfinite(v[d])) return false;
  }
  return true;
}

/// Ordered set of 3D positions captured at one instant. Never empty, always finite.
class PointCloud {
 public:
  explicit PointCloud(std::vector<Vec3> points) : points_(std::move(points)) {
    if (points_.empty()) throw Error("empty point set");
    for (const auto& p : points_) {
      if (!all_finite<3>(p)) throw Error("non-finite input");
    }
  }

  std::size_t size() const { return points_.size(); }
  const Vec3& operator[](std::size_t i) const { return points_[i]; }
  std::span<const Vec3> points() const { return points_; }

  auto begin() const { return points_.begin(); }
  auto end() const { return points_.end(); }

  friend bool operator==(const PointCloud&, const PointCloud&) = default;

 private:
  std::vector<Vec3> points_;
};

/// One displacement per source point.
struct FlowField {
  std::vector<Vec3> vectors;

  FlowField() = default;
  explicit FlowField(std::vector<Vec3> v) : vectors(std::move(v)) {}
  static FlowField zeros(std::size_t n) { return FlowField(std::vector<Vec3>(n, Vec3::Zero())); }
  static FlowField constant(std::size_t n, const Vec3& c) { return FlowField(std::vector<Vec3>(n, c)); }

  std::size_t size() const { return vectors.size(); }
  const Vec3& operator[](std::size_t i) const { return vectors[i]; }
  Vec3& operator[](std::size_t i) { return vectors[i]; }

  bool finite() const {
    return std::all_of(vectors.begin(), vectors.end(), [](const Vec3& v) { return all_finite<3>(v); });
  }

  friend bool operator==(const FlowField&, const FlowField&) = default;
};

inline void check_flow(const PointCloud& source, const FlowField& flow) {
  if (flow.size() != source.size()) {
    throw Error("flow has " + std::to_string(flow.size()) + " vectors but source cloud has " +
                std::to_string(source.size()) + " points");
  }
  if (!flow.finite()) throw Error("non-finite input");
}

inline std::vector<Vec3> warp(const PointCloud& source, const FlowField& flow) {
  check_flow(source, flow);
  std::vector<Vec3> out(source.size());
  for (std::size_t i = 0; i < source.size(); ++i) out[i] = source[i] + flow[i];
  return out;
}

struct Neighbor {
  std::size_t index;
  double sq_distance;
};

/// Strict ordering used everywhere for neighbor lists: distance first, then index.
inline bool neighbor_less(const Neighbor& a, const Neighbor& b) {
  if (a.sq_distance != b.sq_distance) return a.sq_distance < b.sq_distance;
  return a.index < b.index;
}

/// Coordinates are summed in axis order so every caller gets the same rounding.
template <int Dim>
inline double squared_distance(const Eigen::Matrix<double, Dim, 1>& a, const Eigen::Matrix<double, Dim, 1>& b) {
  double s = 0.0;
  for (int d = 0; d < Dim; ++d) {
    const double t = a[d] - b[d];
    s += t * t;
  }
  return s;
}

/// Exact k-nearest-neighbor search over a fixed set of Dim-dimensional points.
///
/// Results are sorted by squared Euclidean distance with ties broken by lower
/// index, so they are identical to an exhaustive scan. Immutable after
/// construction; concurrent queries are safe.
template <int Dim>
class KdTree {
  static_assert(Dim >= 1);

 public:
  using Point = Eigen::Matrix<double, Dim, 1>;
  static constexpr int dimension = Dim;

  explicit KdTree(std::span<const Point> points, std::size_t leaf_size = 8)
      : points_(points.begin(), points.end()), leaf_size_(std::max<std::size_t>(leaf_size, 1)) {
    if (points_.empty()) throw Error("empty point set");
    for (const auto& p : points_) {
      if (!all_finite<Dim>(p)) throw Error("non-finite input");
    }
    order_.resize(points_.size());
    std::iota(order_.begin(), order_.end(), std::size_t{0});
    nodes_.reserve(2 * points_.size() / leaf_size_ + 1);
    build(0, points_.size());
  }

  std::size_t size() const { return points_.size(); }
  const Point& point(std::size_t i) const { return points_[i]; }

  /// The min(k, size()) nearest points with their squared distances.
  std::vector<Neighbor> knn_with_distances(const Point& query, std::size_t k) const {
    std::vector<Neighbor> best;
    k = std::min(k, points_.size());
    if (k == 0) return best;
    best.reserve(k + 1);
    search(0, query, k, best);
    return best;
  }

  std::vector<std::size_t> knn(const Point& query, std::size_t k) const {
    const auto found = knn_with_distances(query, k);
    std::vector<std::size_t> out(found.size());
    std::transform(found.begin(), found.end(), out.begin(), [](const Neighbor& n) { return n.index; });
    return out;
  }

  /// Runtime-dimension entry point, for callers holding untyped coordinates.
  std::vector<std::size_t> knn(std::span<const double> query, std::size_t k) const {
    if (query.size() != static_cast<std::size_t>(Dim)) {
      throw Error("query dimension " + std::to_string(query.size()) + " does not match index dimension " +
                  std::to_string(Dim));
    }
    Point q;
    for (int d = 0; d < Dim; ++d) q[d] = query[static_cast<std::size_t>(d)];
    return knn(q, k);
  }

 private:
  struct Node {
    int axis = -1;  // -1 marks a leaf
    double split = 0.0;
    std::size_t left = 0;
    std::size_t right = 0;
    std::size_t begin = 0;
    std::size_t end = 0;
  };

  std::size_t build(std::size_t begin, std::size_t end) {
    const std::size_t id = nodes_.size();
    nodes_.push_back(Node{});
    nodes_[id].begin = begin;
    nodes_[id].end = end;
    if (end - begin <= leaf_size_) return id;

    Point lo = points_[order_[begin]];
    Point hi = lo;
    for (std::size_t i = begin + 1; i < end; ++i) {
      lo = lo.cwiseMin(points_[order_[i]]);
      hi = hi.cwiseMax(points_[order_[i]]);
    }
    int axis = 0;
    (hi - lo).maxCoeff(&axis);
    if (hi[axis] == lo[axis]) return id;  // all coincident

    const std::size_t mid = begin + (end - begin) / 2;
    std::nth_element(order_.begin() + static_cast<std::ptrdiff_t>(begin),
                     order_.begin() + static_cast<std::ptrdiff_t>(mid),
                     order_.begin() + static_cast<std::ptrdiff_t>(end), [&](std::size_t a, std::size_t b) {
                       const double ca = points_[a][axis];
                       const double cb = points_[b][axis];
                       return ca != cb ? ca < cb : a < b;
                     });
    const double split = points_[order_[mid]][axis];
    const std::size_t left = build(begin, mid);
    const std::size_t right = build(mid, end);
    nodes_[id].axis = axis;
    nodes_[id].split = split;
    nodes_[id].left = left;
    nodes_[id].right = right;
    return id;
  }

  static void offer(std::vector<Neighbor>& best, std::size_t k, Neighbor cand) {
    if (best.size() == k && !neighbor_less(cand, best.back())) return;
    auto pos = std::upper_bound(best.begin(), best.end(), cand, neighbor_less);
    best.insert(pos, cand);
    if (best.size() > k) best.pop_back();
  }

  // Left children hold coordinates <= split, right children >= split, so the
  // squared axis gap is a lower bound on any distance across the split. Ties
  // at the bound are still visited because a lower index may win them.
  void search(std::size_t id, const Point& q, std::size_t k, std::vector<Neighbor>& best) const {
    const Node& node = nodes_[id];
    if (node.axis < 0) {
      for (std::size_t i = node.begin; i < node.end; ++i) {
        const std::size_t idx = order_[i];
        offer(best, k, Neighbor{idx, squared_distance<Dim>(q, points_[idx])});
      }
      return;
    }
    const double diff = q[node.axis] - node.split;
    const std::size_t near = diff < 0 ? node.left : node.right;
    const std::size_t far = diff < 0 ? node.right : node.left;
    search(near, q, k, best);
    if (best.size() < k || diff * diff <= best.back().sq_distance) search(far, q, k, best);
  }

  std::vector<Point> points_;
  std::vector<std::size_t> order_;
  std::vector<Node> nodes_;
  std::size_t leaf_size_;
};

using NeighborIndex3 = KdTree<3>;
using NeighborIndex6 = KdTree<6>;

template <int Dim>
KdTree<Dim> build_index(std::span<const Eigen::Matrix<double, Dim, 1>> points) {
  return KdTree<Dim>(points);
}

inline KdTree<3> build_index(const PointCloud& cloud) { return KdTree<3>(cloud.points()); }

}  // namespace flowreg
