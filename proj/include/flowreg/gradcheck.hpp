#pragma once

#include "flowreg/flowmodel.hpp"
#include "flowreg/losses.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <random>
#include <vector>

namespace flowreg {

struct GradcheckOptions {
  std::size_t configurations = 100;  // alternating direct / coordnet
  std::size_t max_points = 64;
  double step = 1e-5;
  double tolerance = 1e-4;
  double min_margin = 1e-6;  // distance to any kink or decision boundary
  std::vector<std::size_t> hidden{8, 8};
};

struct GradcheckCase {
  ModelKind model = ModelKind::direct;
  std::size_t n_points = 0;
  std::size_t n_params = 0;
  double rel_error = 0.0;
};

struct GradcheckResult {
  std::vector<GradcheckCase> cases;
  std::size_t resampled = 0;
  double max_rel_error = 0.0;
  bool passed = false;
};

namespace detail {

// Everything piecewise-constant about an evaluation: matched targets, signs of
// every clustered flow difference and ReLU activation masks.
struct Pattern {
  std::vector<std::size_t> matches;
  std::vector<signed char> signs;
  std::vector<bool> active;
  double margin = std::numeric_limits<double>::infinity();

  bool same_branch(const Pattern& o) const { return matches == o.matches && signs == o.signs && active == o.active; }
};

inline Pattern pattern_of(const Objective& obj, const FlowModel& model, const FlowField& flow) {
  Pattern p;
  const PointCloud& x = obj.source();
  const auto& tree = obj.target_index();
  for (std::size_t i = 0; i < x.size(); ++i) {
    const auto nn = tree.knn_with_distances(Vec3(x[i] + flow[i]), 2);
    p.matches.push_back(nn[0].index);
    if (nn.size() > 1) p.margin = std::min(p.margin, std::sqrt(nn[1].sq_distance) - std::sqrt(nn[0].sq_distance));
  }
  Correspondences corr;
  corr.target_index = p.matches;
  const ClusterSet cyc = clusters_cyc(x.size(), corr, obj.target_neighborhoods());
  const auto& w = obj.config().weights;
  auto scan = [&](const ClusterSet& clusters, double weight) {
    if (weight == 0.0) return;
    for (std::size_t i = 0; i < clusters.size(); ++i) {
      for (std::size_t r : clusters[i]) {
        if (r == i) continue;
        for (int d = 0; d < 3; ++d) {
          const double diff = flow[i][d] - flow[r][d];
          p.signs.push_back(static_cast<signed char>((diff > 0.0) - (diff < 0.0)));
          p.margin = std::min(p.margin, std::abs(diff));
        }
      }
    }
  };
  scan(obj.knn_clusters(), w.alpha_smooth);
  scan(obj.surf_clusters(), w.alpha_surf);
  scan(cyc, w.alpha_cyc);
  for (const auto& z : model.pre_activations(x)) {
    for (Eigen::Index c = 0; c < z.size(); ++c) {
      p.active.push_back(z.data()[c] > 0.0);
      p.margin = std::min(p.margin, std::abs(z.data()[c]));
    }
  }
  return p;
}

inline double total_at(const Objective& obj, const FlowModel& model) {
  return obj.evaluate(model.forward(obj.source())).total;
}

}  // namespace detail

/// Compares analytic parameter gradients of the total loss against central
/// differences on random small scenes. Configurations whose nonsmooth
/// structure is within min_margin of switching, or switches inside the
/// difference stencil, are redrawn.
inline GradcheckResult gradcheck(std::uint64_t seed, const GradcheckOptions& opt = {}) {
  GradcheckResult result;
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  std::uniform_real_distribution<double> u01(0.0, 1.0);
  std::normal_distribution<double> g(0.0, 1.0);
  const std::size_t min_points = std::min<std::size_t>(12, opt.max_points);

  while (result.cases.size() < opt.configurations) {
    const ModelKind kind = result.cases.size() % 2 == 0 ? ModelKind::direct : ModelKind::coordnet;
    const std::size_t n = std::uniform_int_distribution<std::size_t>(min_points, opt.max_points)(rng);
    const std::size_t m = std::uniform_int_distribution<std::size_t>(std::max<std::size_t>(2, n / 2), 2 * n)(rng);
    const Vec3 shift(0.3 * u(rng), 0.3 * u(rng), 0.3 * u(rng));
    std::vector<Vec3> xs(n), ys(m);
    for (auto& p : xs) p = Vec3(u(rng), u(rng), u(rng));
    for (std::size_t j = 0; j < m; ++j) ys[j] = xs[j % n] + shift + 0.1 * Vec3(g(rng), g(rng), g(rng));
    const PointCloud source(std::move(xs)), target(std::move(ys));

    LossConfig cfg;
    cfg.k = std::uniform_int_distribution<std::size_t>(1, 6)(rng);
    cfg.normal_scale = 2.0 * u01(rng);
    cfg.weights = {2.0 * u01(rng), 2.0 * u01(rng), 10.0 * u01(rng)};
    const Objective obj(source, target, cfg);

    FlowModel model = kind == ModelKind::direct ? FlowModel::direct(n) : FlowModel::coordnet_zero(opt.hidden);
    Eigen::VectorXd& theta = model.parameters();
    if (kind == ModelKind::direct) {
      for (std::size_t i = 0; i < n; ++i) theta.segment<3>(static_cast<Eigen::Index>(3 * i)) = shift + 0.2 * Vec3(g(rng), g(rng), g(rng));
    } else {
      for (Eigen::Index j = 0; j < theta.size(); ++j) theta[j] = u(rng);
    }

    const FlowField flow = model.forward(source);
    const detail::Pattern base = detail::pattern_of(obj, model, flow);
    if (!(base.margin >= std::max(opt.min_margin, 2.0 * opt.step))) {
      ++result.resampled;
      continue;
    }
    const Eigen::VectorXd analytic = model.backward(source, obj.evaluate(flow).grad_total);

    Eigen::VectorXd numeric(theta.size());
    bool switched = false;
    for (Eigen::Index j = 0; j < theta.size() && !switched; ++j) {
      const double saved = theta[j];
      theta[j] = saved + opt.step;
      const double up = detail::total_at(obj, model);
      switched = !detail::pattern_of(obj, model, model.forward(source)).same_branch(base);
      theta[j] = saved - opt.step;
      const double down = detail::total_at(obj, model);
      switched = switched || !detail::pattern_of(obj, model, model.forward(source)).same_branch(base);
      theta[j] = saved;
      numeric[j] = (up - down) / (2.0 * opt.step);
    }
    if (switched) {
      ++result.resampled;
      continue;
    }

    const double scale = std::max({analytic.cwiseAbs().maxCoeff(), numeric.cwiseAbs().maxCoeff(), 1e-300});
    GradcheckCase c;
    c.model = kind;
    c.n_points = n;
    c.n_params = static_cast<std::size_t>(theta.size());
    c.rel_error = (analytic - numeric).cwiseAbs().maxCoeff() / scale;
    result.max_rel_error = std::max(result.max_rel_error, c.rel_error);
    result.cases.push_back(c);
  }
  result.passed = result.max_rel_error < opt.tolerance;
  return result;
}

}  // namespace flowreg
