#pragma once

#include "flowreg/core.hpp"
#include "flowreg/normals.hpp"
#include "flowreg/parallel.hpp"

#include <optional>
#include <utility>
#include <vector>

namespace flowreg {

/// A scalar loss and its gradient with respect to every flow vector.
struct LossTerm {
  double value = 0.0;
  std::vector<Vec3> grad;
};

/// target_index[i] is the target point nearest to x_i + f_i.
struct Correspondences {
  std::vector<std::size_t> target_index;

  std::size_t size() const { return target_index.size(); }
};

enum class ClusterKind { knn, surf, cyc };

/// Rigid cluster of every source point, as source indices.
struct ClusterSet {
  ClusterKind kind = ClusterKind::knn;
  std::vector<std::vector<std::size_t>> clusters;

  std::size_t size() const { return clusters.size(); }
  const std::vector<std::size_t>& operator[](std::size_t i) const { return clusters[i]; }
};

// ---------------------------------------------------------------------------
// Nearest-neighbor distance
// ---------------------------------------------------------------------------

inline Correspondences match_targets(const PointCloud& source, const FlowField& flow, const KdTree<3>& target_index) {
  check_flow(source, flow);
  Correspondences corr;
  corr.target_index.resize(source.size());
  parallel_for(source.size(), [&](std::size_t i) {
    const Vec3 warped = source[i] + flow[i];
    corr.target_index[i] = target_index.knn(warped, 1).front();
  });
  return corr;
}

/// Mean squared distance from each warped source point to its nearest target.
/// The matched target is treated as locally constant when differentiating.
inline std::pair<LossTerm, Correspondences> loss_dist(const PointCloud& source, const FlowField& flow,
                                                      const PointCloud& target, const KdTree<3>& target_index) {
  if (target_index.size() != target.size()) throw Error("target index was built over a different cloud");
  Correspondences corr = match_targets(source, flow, target_index);

  const double inv_n = 1.0 / static_cast<double>(source.size());
  LossTerm term;
  term.grad.resize(source.size());
  double sum = 0.0;
  for (std::size_t i = 0; i < source.size(); ++i) {
    const Vec3 residual = source[i] + flow[i] - target[corr.target_index[i]];
    sum += squared_distance<3>(source[i] + flow[i], target[corr.target_index[i]]);
    term.grad[i] = 2.0 * inv_n * residual;
  }
  term.value = sum * inv_n;
  return {std::move(term), std::move(corr)};
}

inline std::pair<LossTerm, Correspondences> loss_dist(const PointCloud& source, const FlowField& flow,
                                                      const PointCloud& target) {
  const KdTree<3> index(target.points());
  return loss_dist(source, flow, target, index);
}

// ---------------------------------------------------------------------------
// Rigid clusters
// ---------------------------------------------------------------------------

namespace detail {

// k nearest neighbors of point i among the indexed set, with i itself removed.
template <int Dim>
std::vector<std::size_t> neighbors_without_self(const KdTree<Dim>& index, std::size_t i, std::size_t k) {
  const std::size_t m = index.size();
  k = std::min(k, m - 1);
  auto found = index.knn(index.point(i), k + 1);
  auto self = std::find(found.begin(), found.end(), i);
  if (self != found.end()) {
    found.erase(self);
  } else {
    found.pop_back();  // more than k coincident points with lower index
  }
  found.resize(k);
  return found;
}

template <int Dim>
ClusterSet self_excluding_clusters(const KdTree<Dim>& index, std::size_t k, ClusterKind kind) {
  ClusterSet out;
  out.kind = kind;
  out.clusters.resize(index.size());
  if (index.size() < 2) return out;
  parallel_for(index.size(), [&](std::size_t i) { out.clusters[i] = neighbors_without_self(index, i, k); });
  return out;
}

}  // namespace detail

/// R(x_i): the k nearest neighbors of x_i in the source cloud, excluding x_i.
inline ClusterSet clusters_knn(const PointCloud& source, std::size_t k) {
  const KdTree<3> index(source.points());
  return detail::self_excluding_clusters(index, k, ClusterKind::knn);
}

/// R_surf(x_i): the k nearest neighbors of phi_i in descriptor space, excluding phi_i.
inline ClusterSet clusters_surf(const DescriptorSet& descriptors, std::size_t k) {
  const KdTree<6> index(std::span<const Vec6>(descriptors.descriptors));
  return detail::self_excluding_clusters(index, k, ClusterKind::surf);
}

/// N^k_Y(y_j) for every target point j. Depends only on the target cloud, so
/// it is built once and reused across flow updates. Each neighborhood always
/// contains j itself, even when coincident points with lower index exist.
struct TargetNeighborhoods {
  std::size_t k = 0;
  std::vector<std::vector<std::size_t>> neighbors;

  TargetNeighborhoods() = default;
  TargetNeighborhoods(const KdTree<3>& target_index, std::size_t k_) : k(k_) {
    if (k == 0) throw Error("k must be >= 1");
    neighbors.resize(target_index.size());
    parallel_for(target_index.size(), [&](std::size_t j) {
      auto found = target_index.knn(target_index.point(j), k);
      if (std::find(found.begin(), found.end(), j) == found.end()) found.back() = j;
      neighbors[j] = std::move(found);
    });
  }
};

/// R_cyc(x_i) = { r : y*_r in N^k_Y(y*_i) }, sorted ascending. Contains i.
inline ClusterSet clusters_cyc(std::size_t n_source, const Correspondences& corr, const TargetNeighborhoods& hoods) {
  if (corr.size() != n_source) throw Error("correspondences do not match source cloud");
  const std::size_t m = hoods.neighbors.size();

  // Sources grouped by matched target (CSR layout, ascending source index).
  std::vector<std::size_t> offsets(m + 1, 0);
  for (std::size_t t : corr.target_index) {
    if (t >= m) throw Error("correspondence index out of range");
    ++offsets[t + 1];
  }
  for (std::size_t j = 0; j < m; ++j) offsets[j + 1] += offsets[j];
  std::vector<std::size_t> sources(n_source);
  {
    std::vector<std::size_t> cursor(offsets.begin(), offsets.end() - 1);
    for (std::size_t r = 0; r < n_source; ++r) sources[cursor[corr.target_index[r]]++] = r;
  }

  ClusterSet out;
  out.kind = ClusterKind::cyc;
  out.clusters.resize(n_source);
  parallel_for(n_source, [&](std::size_t i) {
    auto& cluster = out.clusters[i];
    for (std::size_t t : hoods.neighbors[corr.target_index[i]]) {
      cluster.insert(cluster.end(), sources.begin() + static_cast<std::ptrdiff_t>(offsets[t]),
                     sources.begin() + static_cast<std::ptrdiff_t>(offsets[t + 1]));
    }
    std::sort(cluster.begin(), cluster.end());
  });
  return out;
}

inline ClusterSet clusters_cyc(const PointCloud& source, const FlowField& flow, const PointCloud& target,
                               const Correspondences& corr, std::size_t k) {
  check_flow(source, flow);
  if (corr.size() != source.size()) throw Error("correspondences do not match source cloud");
  const KdTree<3> index(target.points());
  return clusters_cyc(source.size(), corr, TargetNeighborhoods(index, k));
}

// ---------------------------------------------------------------------------
// L1 smoothness
// ---------------------------------------------------------------------------

inline double sign0(double v) { return v > 0.0 ? 1.0 : (v < 0.0 ? -1.0 : 0.0); }

/// (1/N) sum_i (1/|R_i|) sum_{r in R_i} |f_i - f_r|_1 with its exact
/// subgradient (sign(0) = 0). Empty clusters contribute nothing.
inline LossTerm loss_smooth(const FlowField& flow, const ClusterSet& clusters) {
  if (clusters.size() != flow.size()) throw Error("cluster set does not match flow field");
  const std::size_t n = flow.size();
  LossTerm term;
  term.grad.assign(n, Vec3::Zero());
  if (n == 0) return term;

  const double inv_n = 1.0 / static_cast<double>(n);
  double sum = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const auto& cluster = clusters[i];
    if (cluster.empty()) continue;
    const double w = inv_n / static_cast<double>(cluster.size());
    double inner = 0.0;
    for (std::size_t r : cluster) {
      if (r >= n) throw Error("cluster index out of range");
      const Vec3 d = flow[i] - flow[r];
      inner += std::abs(d[0]) + std::abs(d[1]) + std::abs(d[2]);
      const Vec3 s(sign0(d[0]), sign0(d[1]), sign0(d[2]));
      term.grad[i] += w * s;
      term.grad[r] -= w * s;
    }
    sum += inner / static_cast<double>(cluster.size());
  }
  term.value = sum * inv_n;
  return term;
}

// ---------------------------------------------------------------------------
// Combined objective
// ---------------------------------------------------------------------------

struct LossWeights {
  double alpha_smooth = 0.0;  // plain k-NN smoothness; L_surf replaces it in the full objective
  double alpha_surf = 1.0;
  double alpha_cyc = 10.0;
};

struct LossConfig {
  LossWeights weights;
  std::size_t k = 4;
  std::size_t k_n = default_normal_neighbors;
  double normal_scale = 1.0;
  Vec3 viewpoint = Vec3::Zero();
};

struct LossBreakdown {
  double dist = 0.0;
  double smooth = 0.0;
  double surf = 0.0;
  double cyc = 0.0;
  double total = 0.0;
  std::vector<Vec3> grad_total;
  LossWeights weights;
};

/// Precomputed state for repeated evaluation of
///   L = L_dist + a_smooth L_smooth + a_surf L_surf + a_cyc L_cyc
/// on a fixed (source, target) pair. Structures that depend only on the
/// geometry (target index, k-NN and surface clusters, target neighborhoods)
/// are built once; correspondences and cyclic clusters follow the flow.
class Objective {
 public:
  Objective(const PointCloud& source, const PointCloud& target, const LossConfig& cfg)
      : Objective(source, target, cfg, std::nullopt) {}

  Objective(const PointCloud& source, const PointCloud& target, const DescriptorSet& descriptors,
            const LossConfig& cfg)
      : Objective(source, target, cfg, std::optional<DescriptorSet>(descriptors)) {}

  const LossConfig& config() const { return cfg_; }
  const PointCloud& source() const { return source_; }
  const PointCloud& target() const { return target_; }
  const KdTree<3>& target_index() const { return target_index_; }
  const ClusterSet& knn_clusters() const { return knn_clusters_; }
  const ClusterSet& surf_clusters() const { return surf_clusters_; }
  const TargetNeighborhoods& target_neighborhoods() const { return hoods_; }

  /// Full evaluation with fresh correspondences and cyclic clusters.
  LossBreakdown evaluate(const FlowField& flow) const { return evaluate(flow, nullptr); }

  /// When cyc_cache is given and non-empty it is reused; when empty it is
  /// filled with the clusters computed from the current flow.
  LossBreakdown evaluate(const FlowField& flow, ClusterSet* cyc_cache) const {
    auto [dist, corr] = loss_dist(source_, flow, target_, target_index_);

    ClusterSet fresh;
    const ClusterSet* cyc_clusters = nullptr;
    if (cyc_cache != nullptr && cyc_cache->size() == source_.size()) {
      cyc_clusters = cyc_cache;
    } else {
      fresh = clusters_cyc(source_.size(), corr, hoods_);
      if (cyc_cache != nullptr) {
        *cyc_cache = std::move(fresh);
        cyc_clusters = cyc_cache;
      } else {
        cyc_clusters = &fresh;
      }
    }

    const LossTerm smooth = loss_smooth(flow, knn_clusters_);
    const LossTerm surf = loss_smooth(flow, surf_clusters_);
    const LossTerm cyc = loss_smooth(flow, *cyc_clusters);

    const LossWeights& w = cfg_.weights;
    LossBreakdown out;
    out.weights = w;
    out.dist = dist.value;
    out.smooth = smooth.value;
    out.surf = surf.value;
    out.cyc = cyc.value;
    out.total = dist.value + w.alpha_smooth * smooth.value + w.alpha_surf * surf.value + w.alpha_cyc * cyc.value;
    out.grad_total.resize(source_.size());
    for (std::size_t i = 0; i < source_.size(); ++i) {
      out.grad_total[i] = dist.grad[i] + w.alpha_smooth * smooth.grad[i] + w.alpha_surf * surf.grad[i] +
                          w.alpha_cyc * cyc.grad[i];
    }
    return out;
  }

 private:
  Objective(const PointCloud& source, const PointCloud& target, const LossConfig& cfg,
            std::optional<DescriptorSet> descriptors)
      : source_(source), target_(target), cfg_(cfg), target_index_(target.points()) {
    if (cfg_.k == 0) throw Error("k must be >= 1");
    const auto& w = cfg_.weights;
    if (!(w.alpha_smooth >= 0.0) || !(w.alpha_surf >= 0.0) || !(w.alpha_cyc >= 0.0)) {
      throw Error("loss weights must be >= 0");
    }
    if (source_.size() > 1) {
      knn_clusters_ = clusters_knn(source_, cfg_.k);
      if (!descriptors && source_.size() >= cfg_.k_n) {
        descriptors = build_descriptors(source_, estimate_normals(source_, cfg_.k_n, cfg_.viewpoint), cfg_.normal_scale);
      } else if (!descriptors) {
        // Too few points for any normal: fall back to position-only descriptors.
        NormalField none{std::vector<Vec3>(source_.size(), Vec3::Zero()), std::vector<std::uint8_t>(source_.size(), 0)};
        descriptors = build_descriptors(source_, none, cfg_.normal_scale);
      }
      if (descriptors->size() != source_.size()) throw Error("descriptor set does not match source cloud");
      surf_clusters_ = clusters_surf(*descriptors, cfg_.k);
    } else {
      knn_clusters_.clusters.resize(1);
      surf_clusters_.kind = ClusterKind::surf;
      surf_clusters_.clusters.resize(1);
    }
    hoods_ = TargetNeighborhoods(target_index_, cfg_.k);
  }

  PointCloud source_;
  PointCloud target_;
  LossConfig cfg_;
  KdTree<3> target_index_;
  ClusterSet knn_clusters_;
  ClusterSet surf_clusters_;
  TargetNeighborhoods hoods_;
};

/// One-shot evaluation of the combined objective.
inline LossBreakdown total_loss(const PointCloud& source, const FlowField& flow, const PointCloud& target,
                                const DescriptorSet& descriptors, const LossConfig& cfg) {
  return Objective(source, target, descriptors, cfg).evaluate(flow);
}

}  // namespace flowreg
