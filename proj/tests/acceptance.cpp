// Acceptance suite: one PASS/FAIL line per criterion, nonzero exit if any fails.

#include "oracles.hpp"

#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <sstream>
#include <string>

#include <sys/wait.h>

using namespace flowreg;
namespace fs = std::filesystem;

namespace {

int failures = 0;

void report(int id, const char* name, bool ok, const std::string& detail) {
  std::printf("[%s] %d %s: %s\n", ok ? "PASS" : "FAIL", id, name, detail.c_str());
  std::fflush(stdout);
  if (!ok) ++failures;
}

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

double angle(const Vec3& a, const Vec3& b) {
  return std::acos(std::clamp(a.normalized().dot(b.normalized()), -1.0, 1.0));
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

// 1 ---------------------------------------------------------------------------

void ablation_trend() {
  const auto t0 = std::chrono::steady_clock::now();
  std::vector<SynthScene> scenes;
  for (std::size_t i = 0; i < default_suite_size; ++i) scenes.push_back(generate_scene(suite_scene(i)));
  const std::vector<AblationFlags> combos{{false, false, false}, {true, false, false}, {false, true, true}};
  const auto rows = run_ablation(scenes, suite_fit_config(), combos);
  const auto& dist = rows[0];
  const auto& smooth = rows[1];
  const auto& full = rows[2];
  const double reduction = 1.0 - full.median_epe / dist.median_epe;
  std::size_t wins = 0;
  for (std::size_t s = 0; s < scenes.size(); ++s) wins += full.epe[s] < dist.epe[s] ? 1 : 0;
  const bool ok = full.mean.epe < smooth.mean.epe && smooth.mean.epe < dist.mean.epe && reduction >= 0.20;
  report(1, "ablation trend", ok,
         fmt("mean EPE dist %.4f, dist+smooth %.4f, dist+cyc+surf %.4f; median %.4f -> %.4f (%.1f%% lower); "
             "full beats dist on %zu/%zu scenes; %.0f s",
             dist.mean.epe, smooth.mean.epe, full.mean.epe, dist.median_epe, full.median_epe, 100.0 * reduction, wins,
             scenes.size(), seconds_since(t0)));
}

// 2 ---------------------------------------------------------------------------

void gradient_exactness() {
  const auto t0 = std::chrono::steady_clock::now();
  const GradcheckResult r = gradcheck(1);
  const double secs = seconds_since(t0);
  std::size_t direct = 0;
  for (const auto& c : r.cases) direct += c.model == ModelKind::direct ? 1 : 0;
  report(2, "gradient exactness", r.passed && r.cases.size() == 100 && secs <= 60.0,
         fmt("%zu configurations (%zu direct, %zu coordnet), max rel err %.2e, %zu redrawn, %.1f s", r.cases.size(),
             direct, r.cases.size() - direct, r.max_rel_error, r.resampled, secs));
}

// 3 ---------------------------------------------------------------------------

void oracle_equivalence() {
  std::mt19937_64 rng(2024);
  std::size_t mismatches = 0, checks = 0;
  auto expect = [&](bool ok) {
    ++checks;
    mismatches += ok ? 0 : 1;
  };
  for (int inst = 0; inst < 50; ++inst) {
    const std::size_t n = 20 + rng() % 281;
    const std::size_t m = 20 + rng() % 281;
    const std::size_t k = 1 + rng() % 10;
    const auto x = oracle::random_cloud(rng, n);
    const auto y = oracle::random_cloud(rng, m);
    const auto f = oracle::random_flow(rng, n);
    const auto xs = oracle::points_of(x);

    const auto tree = build_index(x);
    for (int q = 0; q < 10; ++q) {
      const Vec3 query = oracle::random_cloud(rng, 1, 1.2)[0];
      expect(tree.knn(query, k) == oracle::knn<3>(xs, query, k));
    }
    const auto desc = build_descriptors(x, estimate_normals(x, 5), 1.0);
    const KdTree<6> tree6(std::span<const Vec6>(desc.descriptors));
    for (int q = 0; q < 10; ++q) {
      const Vec6& query = desc.descriptors[rng() % n];
      expect(tree6.knn(query, k) == oracle::knn<6>(desc.descriptors, query, k));
    }

    const auto [dist, corr] = loss_dist(x, f, y);
    expect(corr.target_index == oracle::match(x, f, y));
    expect(oracle::close(dist.value, oracle::loss_dist(x, f, y)));

    const auto knn_c = clusters_knn(x, k);
    const auto knn_ref = oracle::clusters_excluding_self<3>(xs, k);
    expect(knn_c.clusters == knn_ref);
    const auto surf_c = clusters_surf(desc, k);
    const auto surf_ref = oracle::clusters_excluding_self<6>(desc.descriptors, k);
    expect(surf_c.clusters == surf_ref);
    const auto cyc_c = clusters_cyc(x, f, y, corr, k);
    const auto cyc_ref = oracle::clusters_cyc(x, f, y, k);
    expect(cyc_c.clusters == cyc_ref);

    expect(oracle::close(loss_smooth(f, knn_c).value, oracle::loss_smooth(f, knn_ref)));
    expect(oracle::close(loss_smooth(f, surf_c).value, oracle::loss_smooth(f, surf_ref)));
    expect(oracle::close(loss_smooth(f, cyc_c).value, oracle::loss_smooth(f, cyc_ref)));

    auto g = oracle::random_flow(rng, n, 0.5);
    FlowField est = g;
    for (std::size_t i = 0; i < n; ++i) {
      if (i % 5 == 0) g[i] = Vec3::Zero();
      est[i] = g[i] + f[i] * (i % 3 == 0 ? 0.1 : 1.0);
    }
    const auto mm = compute_metrics(est, g);
    const auto mr = oracle::metrics(est, g);
    expect(oracle::close(mm.epe, mr.epe));
    expect(oracle::close(mm.acc_strict, mr.as));
    expect(oracle::close(mm.acc_relaxed, mr.ar));
    expect(oracle::close(mm.outliers, mr.out));
    expect(oracle::close(mm.angle_error, mr.theta));
  }
  report(3, "oracle equivalence", mismatches == 0,
         fmt("%zu mismatches in %zu comparisons over 50 instances (N <= 300)", mismatches, checks));
}

// 4 ---------------------------------------------------------------------------

void normal_correctness() {
  std::mt19937_64 rng(4);
  std::uniform_real_distribution<double> u(-1, 1);
  double worst_plane = 0.0;
  bool signs_ok = true;
  for (int trial = 0; trial < 5; ++trial) {
    const Mat3 rot = Eigen::AngleAxisd(3.0 * u(rng), Vec3(u(rng), u(rng), u(rng)).normalized()).toRotationMatrix();
    const Vec3 offset(u(rng), u(rng), u(rng));
    std::vector<Vec3> p;
    for (int i = 0; i < 10; ++i) {
      for (int j = 0; j < 10; ++j) p.push_back(rot * Vec3(i + 0.3 * u(rng), j + 0.3 * u(rng), 0.0) + offset);
    }
    const Vec3 n = rot * Vec3::UnitZ();
    const Vec3 vp = offset + (trial % 2 == 0 ? 5.0 : -5.0) * n;
    const auto normals = estimate_normals(PointCloud(p), 5, vp);
    for (std::size_t i = 0; i < p.size(); ++i) {
      const Vec3 expected = (vp - p[i]).dot(n) >= 0.0 ? n : Vec3(-n);
      if (!normals.is_valid(i) || normals.normals[i].dot(vp - p[i]) < 0.0) signs_ok = false;
      worst_plane = std::max(worst_plane, angle(normals.normals[i], expected));
    }
  }

  std::normal_distribution<double> g(0, 1);
  std::vector<Vec3> s(2000);
  for (auto& v : s) v = Vec3(g(rng), g(rng), g(rng)).normalized();
  const auto sn = estimate_normals(PointCloud(s), 5, Vec3::Zero());
  std::vector<double> err;
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (sn.is_valid(i)) err.push_back(angle(sn.normals[i], -s[i]));
  }
  std::sort(err.begin(), err.end());
  const double median = err[err.size() / 2] * 180.0 / std::numbers::pi;
  report(4, "normal correctness", worst_plane <= 1e-6 && signs_ok && median < 10.0,
         fmt("plane max error %.2e rad, signs %s; sphere median error %.2f deg", worst_plane,
             signs_ok ? "face the viewpoint" : "WRONG", median));
}

// 5 ---------------------------------------------------------------------------

std::vector<Vec3> dyadic(std::mt19937_64& rng, std::size_t n, int range) {
  std::uniform_int_distribution<int> u(-range, range);
  std::vector<Vec3> p(n);
  for (auto& v : p) v = Vec3(u(rng), u(rng), u(rng)) / 256.0;
  return p;
}

std::vector<Vec3> plus(std::vector<Vec3> p, const Vec3& t) {
  for (auto& v : p) v += t;
  return p;
}

void analytic_invariants() {
  std::mt19937_64 rng(5);
  std::vector<std::string> broken;
  double worst_rigid = 0.0;
  bool equi = true, shift = true, cyc_id = true, as_ar = true, scale0 = true;
  for (int trial = 0; trial < 20; ++trial) {
    const Vec3 t(trial - 7, 3, -2);
    const auto x = dyadic(rng, 100, 512), y = dyadic(rng, 130, 512), f = dyadic(rng, 100, 64);
    const double a = loss_dist(PointCloud(x), FlowField(f), PointCloud(y)).first.value;
    equi &= a == loss_dist(PointCloud(plus(x, t)), FlowField(f), PointCloud(plus(y, t))).first.value;
    equi &= a == loss_dist(PointCloud(x), FlowField(plus(f, t)), PointCloud(plus(y, t))).first.value;

    const auto clusters = clusters_knn(PointCloud(x), 1 + trial % 8);
    shift &= loss_smooth(FlowField(f), clusters).value == loss_smooth(FlowField(plus(f, t)), clusters).value;

    const auto cloud = oracle::random_cloud(rng, 150, 3.0);
    const Vec3 c = oracle::random_cloud(rng, 1)[0];
    std::vector<Vec3> moved = plus(oracle::points_of(cloud), c);
    std::shuffle(moved.begin(), moved.end(), rng);
    LossConfig cfg;
    cfg.weights = {1.0, 1.0, 10.0};
    const auto l = Objective(cloud, PointCloud(moved), cfg).evaluate(FlowField::constant(cloud.size(), c));
    worst_rigid = std::max({worst_rigid, l.total, l.dist, l.smooth, l.surf, l.cyc});

    const std::size_t k = 1 + trial % 6;
    const auto zero = FlowField::zeros(cloud.size());
    const auto corr = loss_dist(cloud, zero, cloud).second;
    const auto cyc = clusters_cyc(cloud, zero, cloud, corr, k);
    const auto pts = oracle::points_of(cloud);
    for (std::size_t i = 0; i < cloud.size(); ++i) {
      auto hood = oracle::knn<3>(pts, cloud[i], k);
      std::sort(hood.begin(), hood.end());
      cyc_id &= cyc[i] == hood;
    }
    const auto kn1 = clusters_cyc(cloud, zero, cloud, corr, 1);
    for (std::size_t i = 0; i < cloud.size(); ++i) cyc_id &= kn1[i] == std::vector<std::size_t>{i};

    auto gt = oracle::random_flow(rng, 300, 0.2 + 0.1 * trial);
    auto est = oracle::random_flow(rng, 300, 0.05 * (trial + 1));
    for (std::size_t i = 0; i < 300; ++i) {
      if (i % 11 == 0) gt[i] = Vec3::Zero();
      est[i] += gt[i];
    }
    const auto m = compute_metrics(est, gt);
    as_ar &= m.acc_strict <= m.acc_relaxed;

    const auto d0 = build_descriptors(cloud, estimate_normals(cloud, 5), 0.0);
    scale0 &= clusters_surf(d0, k).clusters == clusters_knn(cloud, k).clusters;
  }
  if (!equi) broken.push_back("dist translation equivariance");
  if (!shift) broken.push_back("smooth shift invariance");
  if (worst_rigid > 1e-12) broken.push_back("rigid translation loss");
  if (!cyc_id) broken.push_back("cyc identity reduction");
  if (!as_ar) broken.push_back("AS <= AR");
  if (!scale0) broken.push_back("normal_scale 0");
  std::string detail = fmt("20 random trials; largest rigid-translation loss %.1e", worst_rigid);
  for (const auto& b : broken) detail += "; broken: " + b;
  report(5, "analytic invariants", broken.empty(), detail);
}

// 6 ---------------------------------------------------------------------------

int sh(const std::string& cmd) {
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

void determinism() {
  const fs::path dir = fs::temp_directory_path() / "flowreg_acceptance_determinism";
  fs::remove_all(dir);
  fs::create_directories(dir);
  const std::string cli = FLOWREG_CLI;
  const std::string scene = (dir / "scene").string();
  bool ok = sh(cli + " synth --seed 5 --bodies 2 --points 600 --out " + scene + " >/dev/null") == 0;
  for (int run = 0; run < 2 && ok; ++run) {
    const std::string tag = std::to_string(run);
    ok &= sh("FLOWREG_THREADS=1 " + cli + " fit --seed 9 --model coordnet --hidden 32 32 --max-iters 150 --source " +
             scene + "/source.csv --target " + scene + "/target.csv --gt " + scene + "/gt_flow.csv --out " +
             (dir / ("flow" + tag + ".csv")).string() + " --report " + (dir / ("report" + tag + ".json")).string()) == 0;
  }
  const std::string f0 = slurp(dir / "flow0.csv"), f1 = slurp(dir / "flow1.csv");
  const std::string r0 = slurp(dir / "report0.json"), r1 = slurp(dir / "report1.json");
  const bool same = ok && !f0.empty() && !r0.empty() && f0 == f1 && r0 == r1;
  report(6, "determinism", same,
         ok ? fmt("flow %zu bytes %s, report %zu bytes %s", f0.size(), f0 == f1 ? "identical" : "DIFFER", r0.size(),
                  r0 == r1 ? "identical" : "DIFFER")
            : std::string("CLI run failed"));
  fs::remove_all(dir);
}

// 7 ---------------------------------------------------------------------------

void convergence() {
  std::vector<Vec3> x, y;
  for (int i = 0; i < 8; ++i) {
    for (int j = 0; j < 8; ++j) {
      for (int k = 0; k < 4; ++k) {
        x.emplace_back(3.0 * i, 3.0 * j + 0.1 * i, 3.0 * k + 0.05 * j);
        y.push_back(x.back() + Vec3(1, 0, 0));
      }
    }
  }
  std::mt19937_64 rng(7);
  std::shuffle(y.begin(), y.end(), rng);
  FitConfig cfg;
  cfg.loss.weights = {0.0, 0.0, 0.0};
  const auto r = fit(PointCloud(x), PointCloud(y), cfg);
  const double epe = compute_metrics(r.flow, FlowField::constant(x.size(), Vec3(1, 0, 0))).epe;
  report(7, "convergence sanity", epe < 1e-3 && r.history.size() <= 2000,
         fmt("EPE %.2e after %zu iterations (best at %zu)", epe, r.history.size(), r.best_iteration));
}

}  // namespace

int main() {
  const auto t0 = std::chrono::steady_clock::now();
  const std::pair<const char*, void (*)()> criteria[] = {
      {"ablation", ablation_trend},       {"gradient", gradient_exactness}, {"oracle", oracle_equivalence},
      {"normals", normal_correctness},    {"invariants", analytic_invariants}, {"determinism", determinism},
      {"convergence", convergence}};
  for (const auto& [name, fn] : criteria) {
    try {
      fn();
    } catch (const std::exception& e) {
      std::printf("[FAIL] %s: exception: %s\n", name, e.what());
      ++failures;
    }
  }
  std::printf("%d criteria failed, %.0f s total\n", failures, seconds_since(t0));
  return failures == 0 ? 0 : 1;
}
