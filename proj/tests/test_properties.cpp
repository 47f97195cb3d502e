#include "oracles.hpp"

#include <gtest/gtest.h>

using namespace flowreg;

namespace {

// Coordinates on a 1/256 grid keep sums with integer shifts exact.
std::vector<Vec3> dyadic(std::mt19937_64& rng, std::size_t n, int range = 512) {
  std::uniform_int_distribution<int> u(-range, range);
  std::vector<Vec3> p(n);
  for (auto& v : p) v = Vec3(u(rng), u(rng), u(rng)) / 256.0;
  return p;
}

std::vector<Vec3> plus(const std::vector<Vec3>& p, const Vec3& t) {
  std::vector<Vec3> out;
  for (const auto& v : p) out.push_back(v + t);
  return out;
}

class Seeds : public ::testing::TestWithParam<std::uint64_t> {};

}  // namespace

INSTANTIATE_TEST_SUITE_P(Random, Seeds, ::testing::Range<std::uint64_t>(0, 10));

TEST_P(Seeds, DistIsTranslationEquivariant) {
  std::mt19937_64 rng(GetParam());
  const auto x = dyadic(rng, 100), y = dyadic(rng, 120), f = dyadic(rng, 100, 64);
  const Vec3 t(3, -5, 2);
  const auto a = loss_dist(PointCloud(x), FlowField(f), PointCloud(y));
  const auto b = loss_dist(PointCloud(plus(x, t)), FlowField(f), PointCloud(plus(y, t)));
  const auto c = loss_dist(PointCloud(x), FlowField(plus(f, t)), PointCloud(plus(y, t)));
  EXPECT_EQ(a.first.value, b.first.value);
  EXPECT_EQ(a.first.value, c.first.value);
  EXPECT_EQ(a.second.target_index, b.second.target_index);
  EXPECT_EQ(a.first.grad, c.first.grad);
}

TEST_P(Seeds, SmoothIsShiftInvariant) {
  std::mt19937_64 rng(GetParam());
  const auto x = oracle::random_cloud(rng, 80);
  const auto f = dyadic(rng, 80, 64);
  const auto clusters = clusters_knn(x, 1 + GetParam() % 6);
  const auto a = loss_smooth(FlowField(f), clusters);
  const auto b = loss_smooth(FlowField(plus(f, Vec3(1, -2, 7))), clusters);
  EXPECT_EQ(a.value, b.value);
  EXPECT_EQ(a.grad, b.grad);
}

TEST_P(Seeds, RigidTranslationHasZeroLoss) {
  std::mt19937_64 rng(GetParam());
  const auto x = oracle::random_cloud(rng, 150, 3.0);
  std::uniform_real_distribution<double> u(-1, 1);
  const Vec3 c(u(rng), u(rng), u(rng));
  std::vector<Vec3> y;
  for (const auto& p : x) y.push_back(p + c);
  std::shuffle(y.begin(), y.end(), rng);
  LossConfig cfg;
  cfg.weights = {1.0, 1.0, 10.0};
  const auto loss = Objective(x, PointCloud(y), cfg).evaluate(FlowField::constant(x.size(), c));
  EXPECT_LE(loss.total, 1e-12);
  EXPECT_EQ(loss.smooth, 0.0);
  EXPECT_EQ(loss.surf, 0.0);
  EXPECT_EQ(loss.cyc, 0.0);
}

TEST_P(Seeds, CycReducesToNeighborhoodsAtIdentity) {
  std::mt19937_64 rng(GetParam());
  const auto x = oracle::random_cloud(rng, 90);
  const std::size_t k = 1 + GetParam() % 7;
  const auto f = FlowField::zeros(x.size());
  const auto corr = loss_dist(x, f, x).second;
  const auto cyc = clusters_cyc(x, f, x, corr, k);
  const auto pts = oracle::points_of(x);
  for (std::size_t i = 0; i < x.size(); ++i) {
    auto expect = oracle::knn<3>(pts, x[i], k);
    std::sort(expect.begin(), expect.end());
    EXPECT_EQ(cyc[i], expect);
  }
}

TEST_P(Seeds, ZeroNormalScaleGivesKnnClusters) {
  std::mt19937_64 rng(GetParam());
  const auto x = oracle::random_cloud(rng, 120);
  const auto d = build_descriptors(x, estimate_normals(x, 5), 0.0);
  const std::size_t k = 1 + GetParam() % 8;
  EXPECT_EQ(clusters_surf(d, k).clusters, clusters_knn(x, k).clusters);
}

TEST_P(Seeds, MetricInvariants) {
  std::mt19937_64 rng(GetParam());
  auto g = oracle::random_flow(rng, 200, 0.3);
  auto f = oracle::random_flow(rng, 200, 0.3);
  for (std::size_t i = 0; i < 200; i += 9) g[i] = Vec3::Zero();
  for (std::size_t i = 0; i < 200; i += 4) f[i] = g[i] + 0.01 * f[i];
  const auto m = compute_metrics(f, g);
  EXPECT_LE(m.acc_strict, m.acc_relaxed);
  const auto e = point_errors(f, g);
  double sum = 0.0;
  for (const auto& pe : e) sum += pe.abs;
  EXPECT_EQ(m.epe, sum / 200.0);
  EXPECT_EQ(compute_metrics(f, f).angle_error, 0.0);

  std::vector<std::size_t> perm(200);
  std::iota(perm.begin(), perm.end(), 0);
  std::shuffle(perm.begin(), perm.end(), rng);
  FlowField pf = f, pg = g;
  for (std::size_t i = 0; i < 200; ++i) {
    pf[i] = f[perm[i]];
    pg[i] = g[perm[i]];
  }
  const auto pm = compute_metrics(pf, pg);
  EXPECT_NEAR(pm.epe, m.epe, 1e-15);
  EXPECT_EQ(pm.acc_strict, m.acc_strict);
  EXPECT_EQ(pm.acc_relaxed, m.acc_relaxed);
  EXPECT_EQ(pm.outliers, m.outliers);
  EXPECT_NEAR(pm.angle_error, m.angle_error, 1e-15);
}

TEST_P(Seeds, SceneBodyIdsPartitionSource) {
  SceneSpec spec;
  spec.seed = GetParam();
  spec.n_bodies = 1 + GetParam() % 4;
  spec.points_per_body = 64;
  spec.background_points = 32;
  spec.shapes = {Shape::box, Shape::sphere, Shape::plane};
  const auto s = generate_scene(spec);
  ASSERT_EQ(s.body_id.size(), s.source.size());
  for (int id : s.body_id) {
    EXPECT_GE(id, 0);
    EXPECT_LE(id, static_cast<int>(spec.n_bodies));
  }
}

TEST(Properties, TranslatingBodyHasZeroGroundTruthSmoothness) {
  SceneSpec spec;
  spec.n_bodies = 3;
  spec.points_per_body = 100;
  spec.background_points = 0;
  spec.max_rotation = 0.0;
  const auto s = generate_scene(spec);
  const auto clusters = clusters_knn(s.source, 4);
  for (std::size_t i = 0; i < s.source.size(); ++i) {
    for (std::size_t r : clusters[i]) {
      if (s.body_id[r] == s.body_id[i]) EXPECT_EQ(s.gt[r], s.gt[i]);
    }
  }
}

TEST(Properties, FitIsReproducibleInDeterministicMode) {
  ScopedThreadLimit one(1);
  SceneSpec spec;
  spec.seed = 6;
  spec.points_per_body = 120;
  spec.background_points = 0;
  const auto s = generate_scene(spec);
  FitConfig cfg;
  cfg.model = ModelKind::coordnet;
  cfg.hidden = {16, 16};
  cfg.max_iters = 40;
  cfg.seed = 3;
  const auto a = fit(s.source, s.target, cfg);
  const auto b = fit(s.source, s.target, cfg);
  EXPECT_EQ(a.flow, b.flow);
  ASSERT_EQ(a.history.size(), b.history.size());
  for (std::size_t i = 0; i < a.history.size(); ++i) EXPECT_EQ(a.history[i].total, b.history[i].total);
}

TEST(Properties, GradientsMatchFiniteDifferences) {
  GradcheckOptions opt;
  opt.configurations = 20;
  const auto r = gradcheck(5, opt);
  EXPECT_TRUE(r.passed) << r.max_rel_error;
  EXPECT_EQ(r.cases.size(), 20u);
  EXPECT_LT(r.max_rel_error, 1e-4);
}
