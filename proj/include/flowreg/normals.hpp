#pragma once

#include "flowreg/core.hpp"
#include "flowreg/parallel.hpp"

#include <Eigen/Eigenvalues>

#include <cstdint>
#include <vector>

namespace flowreg {

/// Per-point unit normals. Points whose neighborhood covariance has rank < 2
/// are flagged invalid and carry a zero vector.
struct NormalField {
  std::vector<Vec3> normals;
  std::vector<std::uint8_t> valid;

  std::size_t size() const { return normals.size(); }
  bool is_valid(std::size_t i) const { return valid[i] != 0; }
};

struct DescriptorSet {
  std::vector<Vec6> descriptors;
  double normal_scale = 1.0;

  std::size_t size() const { return descriptors.size(); }
};

inline constexpr std::size_t default_normal_neighbors = 5;

namespace detail {

// Second-largest eigenvalue below this fraction of the largest means the
// neighborhood is (numerically) a line or a point.
inline constexpr double rank_tolerance = 1e-10;

struct PlaneFit {
  Vec3 normal = Vec3::Zero();
  bool valid = false;
};

inline PlaneFit fit_plane(const PointCloud& cloud, std::span<const std::size_t> neighborhood) {
  Vec3 mean = Vec3::Zero();
  for (std::size_t j : neighborhood) mean += cloud[j];
  mean /= static_cast<double>(neighborhood.size());

  Mat3 cov = Mat3::Zero();
  for (std::size_t j : neighborhood) {
    const Vec3 d = cloud[j] - mean;
    cov.noalias() += d * d.transpose();
  }
  cov /= static_cast<double>(neighborhood.size());

  // Eigenvalues come back in increasing order.
  Eigen::SelfAdjointEigenSolver<Mat3> solver(cov);
  const Vec3 lambda = solver.eigenvalues();
  PlaneFit fit;
  if (solver.info() != Eigen::Success || !(lambda[2] > 0.0) || lambda[1] <= rank_tolerance * lambda[2]) {
    return fit;
  }
  fit.normal = solver.eigenvectors().col(0).normalized();
  fit.valid = true;
  return fit;
}

}  // namespace detail

/// Local PCA normals over the k_n nearest neighbors of each point (the point
/// itself included), oriented so that n . (viewpoint - x) >= 0.
inline NormalField estimate_normals(const PointCloud& cloud, std::size_t k_n = default_normal_neighbors,
                                    const Vec3& viewpoint = Vec3::Zero()) {
  if (k_n < 3) throw Error("degenerate neighborhood");
  if (cloud.size() < k_n) {
    throw Error("normal estimation needs at least k_n = " + std::to_string(k_n) + " points, got " +
                std::to_string(cloud.size()));
  }
  if (!all_finite<3>(viewpoint)) throw Error("non-finite input");

  const KdTree<3> index(cloud.points());
  NormalField out;
  out.normals.assign(cloud.size(), Vec3::Zero());
  out.valid.assign(cloud.size(), 0);

  parallel_for(cloud.size(), [&](std::size_t i) {
    const auto neighborhood = index.knn(cloud[i], k_n);
    const auto fit = detail::fit_plane(cloud, neighborhood);
    if (!fit.valid) return;
    Vec3 n = fit.normal;
    if (n.dot(viewpoint - cloud[i]) < 0.0) n = -n;
    out.normals[i] = n;
    out.valid[i] = 1;
  });
  return out;
}

/// phi_i = (x_i, normal_scale * n_i); invalid normals leave the last three slots at zero.
inline DescriptorSet build_descriptors(const PointCloud& cloud, const NormalField& normals, double normal_scale = 1.0) {
  if (normals.size() != cloud.size() || normals.valid.size() != cloud.size()) {
    throw Error("normal field length does not match cloud");
  }
  if (!(normal_scale >= 0.0) || !std::isfinite(normal_scale)) throw Error("normal_scale must be finite and >= 0");

  DescriptorSet out;
  out.normal_scale = normal_scale;
  out.descriptors.resize(cloud.size());
  for (std::size_t i = 0; i < cloud.size(); ++i) {
    Vec6 phi;
    phi.head<3>() = cloud[i];
    phi.tail<3>() = normals.is_valid(i) ? Vec3(normal_scale * normals.normals[i]) : Vec3::Zero();
    out.descriptors[i] = phi;
  }
  return out;
}

}  // namespace flowreg
