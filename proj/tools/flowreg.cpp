// flowreg command line: synth, fit, eval, normals, gradcheck, ablate.

#include "flowreg/flowreg.hpp"

#include <CLI11.hpp>

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

namespace fs = std::filesystem;
using namespace flowreg;

namespace {

struct SynthArgs {
  std::uint64_t seed = 0;
  std::size_t bodies = 2;
  std::size_t points = 2048;
  std::optional<std::size_t> background;
  double min_translation = SceneSpec{}.min_translation;
  double max_translation = SceneSpec{}.max_translation;
  double rotation = SceneSpec{}.max_rotation;
  double noise = 0.0;
  bool exact_target = false;
  std::string layout = "separated";
  std::string out;
};

// --points is the source size; without --background it all goes to the bodies.
SceneSpec scene_spec(const SynthArgs& a) {
  SceneSpec spec;
  spec.seed = a.seed;
  spec.n_bodies = a.bodies;
  spec.background_points = a.background.value_or(a.bodies == 0 ? a.points : 0);
  if (spec.background_points > a.points && a.bodies > 0) throw Error("--background exceeds --points");
  spec.points_per_body = a.bodies == 0 ? 0 : (a.points - spec.background_points) / a.bodies;
  if (a.bodies > 0 && !a.background) spec.background_points = a.points - spec.points_per_body * a.bodies;
  spec.min_translation = a.min_translation;
  spec.max_translation = a.max_translation;
  spec.max_rotation = a.rotation;
  spec.noise_sigma = a.noise;
  spec.resample_target = !a.exact_target;
  spec.layout = parse_layout(a.layout);
  return spec;
}

void add_synth_options(CLI::App* cmd, SynthArgs& a) {
  cmd->add_option("--seed", a.seed, "Scene seed")->capture_default_str();
  cmd->add_option("--bodies", a.bodies, "Number of rigid bodies")->capture_default_str();
  cmd->add_option("--points", a.points, "Source point count")->capture_default_str();
  cmd->add_option("--background", a.background, "Static ground points (default: none when bodies > 0)");
  cmd->add_option("--min-translation", a.min_translation, "Per-body translation lower bound [m]")->capture_default_str();
  cmd->add_option("--max-translation", a.max_translation, "Per-body translation upper bound [m]")->capture_default_str();
  cmd->add_option("--rotation", a.rotation, "Max yaw per body [rad]")->capture_default_str();
  cmd->add_option("--noise", a.noise, "Gaussian sampling noise [m]")->capture_default_str();
  cmd->add_flag("--exact-target", a.exact_target, "Target is the exact warp of the source");
  cmd->add_option("--layout", a.layout, "separated | adjacent | packed")->capture_default_str();
}

void write_scene(const SynthScene& s, const fs::path& dir) {
  fs::create_directories(dir);
  io::write_cloud(s.source, (dir / "source.csv").string());
  io::write_cloud(s.target, (dir / "target.csv").string());
  io::write_flow(s.gt, (dir / "gt_flow.csv").string());
  io::write_body_ids(s.body_id, (dir / "body_id.csv").string());
}

SynthScene read_scene(const fs::path& dir) {
  SynthScene s{io::read_cloud((dir / "source.csv").string()), io::read_cloud((dir / "target.csv").string()),
               FlowField{}, {}};
  s.gt = io::read_flow((dir / "gt_flow.csv").string(), s.source);
  return s;
}

// Flags layered over preset and config file, in that order.
struct FitArgs {
  std::string preset = "lidar";
  std::string config;
  std::optional<std::string> model;
  std::optional<std::uint64_t> seed;
  std::optional<double> alpha_smooth, alpha_surf, alpha_cyc;
  std::optional<std::size_t> k, k_n;
  std::optional<double> normal_scale;
  std::optional<std::size_t> max_iters, patience, cyc_refresh_every;
  std::optional<double> tol, lr;
  std::vector<std::size_t> hidden;
};

void add_fit_options(CLI::App* cmd, FitArgs& a) {
  cmd->add_option("--preset", a.preset, "stereo | lidar")->capture_default_str();
  cmd->add_option("--config", a.config, "YAML/JSON config file")->check(CLI::ExistingFile);
  cmd->add_option("--model", a.model, "direct | coordnet");
  cmd->add_option("--seed", a.seed, "Model initialization seed");
  cmd->add_option("--alpha-smooth", a.alpha_smooth, "Weight of k-NN smoothness");
  cmd->add_option("--alpha-surf", a.alpha_surf, "Weight of surface-aware smoothness");
  cmd->add_option("--alpha-cyc", a.alpha_cyc, "Weight of cyclic smoothness");
  cmd->add_option("--k", a.k, "Cluster size");
  cmd->add_option("--kn", a.k_n, "Neighbors per normal estimate");
  cmd->add_option("--normal-scale", a.normal_scale, "Weight of normals in descriptors");
  cmd->add_option("--max-iters", a.max_iters, "Iteration cap");
  cmd->add_option("--patience", a.patience, "Stalled iterations before stopping");
  cmd->add_option("--tol", a.tol, "Relative improvement counted as progress");
  cmd->add_option("--lr", a.lr, "Adam learning rate");
  cmd->add_option("--hidden", a.hidden, "Coordnet hidden widths");
  cmd->add_option("--cyc-refresh-every", a.cyc_refresh_every, "Iterations between cyclic cluster rebuilds");
}

FitConfig resolve(const FitArgs& a, FitConfig cfg = {}) {
  apply_preset(cfg, parse_preset(a.preset));
  if (!a.config.empty()) io::apply_config_file(cfg, a.config);
  if (a.model) cfg.model = parse_model_kind(*a.model);
  if (a.seed) cfg.seed = *a.seed;
  if (a.alpha_smooth) cfg.loss.weights.alpha_smooth = *a.alpha_smooth;
  if (a.alpha_surf) cfg.loss.weights.alpha_surf = *a.alpha_surf;
  if (a.alpha_cyc) cfg.loss.weights.alpha_cyc = *a.alpha_cyc;
  if (a.k) cfg.loss.k = *a.k;
  if (a.k_n) cfg.loss.k_n = *a.k_n;
  if (a.normal_scale) cfg.loss.normal_scale = *a.normal_scale;
  if (a.max_iters) cfg.max_iters = *a.max_iters;
  if (a.patience) cfg.patience = *a.patience;
  if (a.cyc_refresh_every) cfg.cyc_refresh_every = *a.cyc_refresh_every;
  if (a.tol) cfg.convergence_tol = *a.tol;
  if (a.lr) cfg.adam.learning_rate = *a.lr;
  if (!a.hidden.empty()) cfg.hidden = a.hidden;
  validate(cfg);
  return cfg;
}

void emit(const io::Report& r, const std::string& path) {
  if (path.empty() || path == "-") {
    std::cout << io::to_json(r).dump(2) << '\n';
  } else {
    io::write_report(r, path);
  }
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Self-supervised scene flow fitting and evaluation"};
  app.require_subcommand(1);

  SynthArgs synth;
  auto* c_synth = app.add_subcommand("synth", "Generate a synthetic rigid scene");
  add_synth_options(c_synth, synth);
  c_synth->add_option("--out", synth.out, "Output directory")->required();

  FitArgs fit_args;
  std::string fit_source, fit_target, fit_out, fit_report, fit_gt, fit_theta = "homogeneous";
  auto* c_fit = app.add_subcommand("fit", "Fit a flow field between two clouds");
  c_fit->add_option("--source", fit_source, "Source cloud CSV")->required()->check(CLI::ExistingFile);
  c_fit->add_option("--target", fit_target, "Target cloud CSV")->required()->check(CLI::ExistingFile);
  c_fit->add_option("--out", fit_out, "Output flow CSV")->required();
  c_fit->add_option("--report", fit_report, "Report JSON (default: stdout)");
  c_fit->add_option("--gt", fit_gt, "Ground-truth flow CSV")->check(CLI::ExistingFile);
  c_fit->add_option("--theta-mode", fit_theta, "homogeneous | raw3d")->capture_default_str();
  add_fit_options(c_fit, fit_args);

  std::string eval_flow, eval_gt, eval_report, eval_theta = "homogeneous";
  auto* c_eval = app.add_subcommand("eval", "Score a flow against ground truth");
  c_eval->add_option("--flow", eval_flow, "Flow CSV")->required()->check(CLI::ExistingFile);
  c_eval->add_option("--gt", eval_gt, "Ground-truth flow CSV")->required()->check(CLI::ExistingFile);
  c_eval->add_option("--report", eval_report, "Report JSON (default: stdout)");
  c_eval->add_option("--theta-mode", eval_theta, "homogeneous | raw3d")->capture_default_str();

  std::string normals_cloud, normals_out;
  std::size_t normals_kn = default_normal_neighbors;
  std::vector<double> normals_vp{0.0, 0.0, 0.0};
  auto* c_normals = app.add_subcommand("normals", "Estimate surface normals");
  c_normals->add_option("--cloud", normals_cloud, "Cloud CSV")->required()->check(CLI::ExistingFile);
  c_normals->add_option("--kn", normals_kn, "Neighbors per estimate")->capture_default_str();
  c_normals->add_option("--viewpoint", normals_vp, "Orientation viewpoint x y z")->expected(3);
  c_normals->add_option("--out", normals_out, "Output normals CSV")->required();

  std::uint64_t gc_seed = 1;
  std::size_t gc_configs = GradcheckOptions{}.configurations;
  auto* c_grad = app.add_subcommand("gradcheck", "Finite-difference check of analytic gradients");
  c_grad->add_option("--seed", gc_seed, "Seed")->capture_default_str();
  c_grad->add_option("--configs", gc_configs, "Random configurations")->capture_default_str();

  FitArgs ab_fit;
  std::vector<std::string> ab_dirs;
  std::size_t ab_count = default_suite_size;
  std::uint64_t ab_seed = 0;
  std::string ab_out, ab_theta = "homogeneous";
  auto* c_ablate = app.add_subcommand("ablate", "Loss ablation over a scene suite");
  c_ablate->add_option("--scenes", ab_dirs, "Scene directories written by synth (default: generated suite)");
  c_ablate->add_option("--count", ab_count, "Generated scenes")->capture_default_str();
  c_ablate->add_option("--suite-seed", ab_seed, "First seed of the generated suite")->capture_default_str();
  c_ablate->add_option("--out", ab_out, "Output CSV")->required();
  c_ablate->add_option("--theta-mode", ab_theta, "homogeneous | raw3d")->capture_default_str();
  add_fit_options(c_ablate, ab_fit);

  CLI11_PARSE(app, argc, argv);

  try {
    if (c_synth->parsed()) {
      write_scene(generate_scene(scene_spec(synth)), synth.out);
      return 0;
    }

    if (c_fit->parsed()) {
      const auto t0 = std::chrono::steady_clock::now();
      const FitConfig cfg = resolve(fit_args);
      const ThetaMode mode = parse_theta_mode(fit_theta);
      const PointCloud source = io::read_cloud(fit_source);
      const PointCloud target = io::read_cloud(fit_target);
      std::optional<FlowField> gt;
      if (!fit_gt.empty()) gt = io::read_flow(fit_gt, source);
      const FitResult result = fit(source, target, cfg);
      io::write_flow(result.flow, fit_out);

      io::Report report;
      report.command = "fit";
      report.seed = cfg.seed;
      report.config = io::config_to_json(cfg);
      report.losses = io::summarize(result);
      if (gt) report.metrics = compute_metrics(result.flow, *gt, mode);
      if (!deterministic_mode()) report.runtime_seconds = seconds_since(t0);
      emit(report, fit_report);
      return 0;
    }

    if (c_eval->parsed()) {
      const auto t0 = std::chrono::steady_clock::now();
      const FlowField gt = io::read_flow(eval_gt);
      const FlowField flow = io::read_flow(eval_flow);
      io::Report report;
      report.command = "eval";
      report.metrics = compute_metrics(flow, gt, parse_theta_mode(eval_theta));
      if (!deterministic_mode()) report.runtime_seconds = seconds_since(t0);
      emit(report, eval_report);
      return 0;
    }

    if (c_normals->parsed()) {
      const PointCloud cloud = io::read_cloud(normals_cloud);
      const Vec3 vp(normals_vp[0], normals_vp[1], normals_vp[2]);
      io::write_normals(estimate_normals(cloud, normals_kn, vp), normals_out);
      return 0;
    }

    if (c_grad->parsed()) {
      GradcheckOptions opt;
      opt.configurations = gc_configs;
      const GradcheckResult r = gradcheck(gc_seed, opt);
      std::printf("%s, max rel err %.3g %s %g (%zu configurations, %zu redrawn near kinks)\n",
                  r.passed ? "PASS" : "FAIL", r.max_rel_error, r.passed ? "<" : ">=", opt.tolerance, r.cases.size(),
                  r.resampled);
      return r.passed ? 0 : 1;
    }

    if (c_ablate->parsed()) {
      const FitConfig cfg = resolve(ab_fit, suite_fit_config());
      std::vector<SynthScene> scenes;
      if (!ab_dirs.empty()) {
        for (const auto& d : ab_dirs) scenes.push_back(read_scene(d));
      } else {
        for (std::size_t i = 0; i < ab_count; ++i) scenes.push_back(generate_scene(suite_scene(i, ab_seed)));
      }
      const auto rows = run_ablation(scenes, cfg, ablation_combinations(), parse_theta_mode(ab_theta));
      std::ofstream out(ab_out);
      if (!out) throw Error("cannot write '" + ab_out + "'");
      out << "smooth,cyc,surf,label,runs,epe,median_epe,acc_strict,acc_relaxed,outliers,angle_error\n";
      for (const auto& r : rows) {
        out << r.flags.smooth << ',' << r.flags.cyc << ',' << r.flags.surf << ',' << label(r.flags) << ',' << r.runs
            << ',' << io::format_double(r.mean.epe) << ',' << io::format_double(r.median_epe) << ','
            << io::format_double(r.mean.acc_strict) << ',' << io::format_double(r.mean.acc_relaxed) << ','
            << io::format_double(r.mean.outliers) << ',' << io::format_double(r.mean.angle_error) << '\n';
      }
      if (!out) throw Error("failed writing '" + ab_out + "'");
      return 0;
    }
  } catch (const std::exception& e) {
    std::cerr << "flowreg: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
