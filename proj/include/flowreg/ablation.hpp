#pragma once

#include "flowreg/flowmodel.hpp"
#include "flowreg/metrics.hpp"
#include "flowreg/parallel.hpp"
#include "flowreg/synth.hpp"

#include <algorithm>
#include <string>
#include <vector>

namespace flowreg {

struct AblationFlags {
  bool smooth = false;
  bool cyc = false;
  bool surf = false;

  friend bool operator==(const AblationFlags&, const AblationFlags&) = default;
};

/// The six loss combinations of the ablation, in table order.
inline std::vector<AblationFlags> ablation_combinations() {
  return {{false, false, false}, {true, false, false}, {false, true, false},
          {false, false, true},  {true, true, false},  {false, true, true}};
}

inline std::string label(const AblationFlags& f) {
  std::string s;
  auto add = [&](bool on, const char* name) {
    if (!on) return;
    if (!s.empty()) s += '+';
    s += name;
  };
  add(f.smooth, "smooth");
  add(f.cyc, "cyc");
  add(f.surf, "surf");
  return s.empty() ? "none" : s;
}

/// Loss weights for a combination. The plain smoothness term borrows the
/// surface weight, since the surface term replaces it in the full objective.
inline LossWeights weights_for(const AblationFlags& f, const LossWeights& base) {
  LossWeights w;
  w.alpha_smooth = f.smooth ? base.alpha_surf : 0.0;
  w.alpha_surf = f.surf ? base.alpha_surf : 0.0;
  w.alpha_cyc = f.cyc ? base.alpha_cyc : 0.0;
  return w;
}

// ---------------------------------------------------------------------------
// Default suite
// ---------------------------------------------------------------------------

inline constexpr std::size_t default_suite_size = 20;

/// Scene i of the default suite: 2 to 4 free-floating rigid bodies sharing 2048
/// source points, no ground, near-translational motion.
inline SceneSpec suite_scene(std::size_t index, std::uint64_t first_seed = 0) {
  SceneSpec spec;
  spec.seed = first_seed + index;
  spec.n_bodies = 2 + index % 3;
  spec.points_per_body = 2048 / spec.n_bodies;
  spec.background_points = 2048 - spec.points_per_body * spec.n_bodies;
  spec.max_rotation = 0.02;
  return spec;
}

/// Lidar preset on the coordinate network, fixed budget of 1000 iterations.
inline FitConfig suite_fit_config() {
  FitConfig cfg = preset_config(Preset::lidar);
  cfg.model = ModelKind::coordnet;
  cfg.max_iters = 1000;
  cfg.patience = cfg.max_iters;
  return cfg;
}

struct AblationRow {
  AblationFlags flags;
  Metrics mean;                // Metrics averaged over scenes
  double median_epe = 0.0;
  std::vector<double> epe;     // per scene, in scene order
  std::size_t runs = 0;
};

/// Fits every combination on every scene. Scenes run in parallel when
/// FLOWREG_THREADS allows; each fit is single-threaded and seeded by cfg.seed,
/// so results do not depend on the schedule.
inline std::vector<AblationRow> run_ablation(const std::vector<SynthScene>& scenes, const FitConfig& base,
                                             const std::vector<AblationFlags>& combos = ablation_combinations(),
                                             ThetaMode mode = ThetaMode::homogeneous) {
  if (scenes.empty()) throw Error("ablation needs at least one scene");
  std::vector<Metrics> cell(scenes.size() * combos.size());
  parallel_for(
      cell.size(),
      [&](std::size_t c) {
        const std::size_t scene = c / combos.size();
        FitConfig cfg = base;
        cfg.loss.weights = weights_for(combos[c % combos.size()], base.loss.weights);
        const FitResult r = fit(scenes[scene].source, scenes[scene].target, cfg);
        cell[c] = compute_metrics(r.flow, scenes[scene].gt, mode);
      },
      1);

  std::vector<AblationRow> rows;
  for (std::size_t k = 0; k < combos.size(); ++k) {
    AblationRow row;
    row.flags = combos[k];
    row.runs = scenes.size();
    for (std::size_t s = 0; s < scenes.size(); ++s) {
      const Metrics& m = cell[s * combos.size() + k];
      row.epe.push_back(m.epe);
      row.mean.epe += m.epe;
      row.mean.acc_strict += m.acc_strict;
      row.mean.acc_relaxed += m.acc_relaxed;
      row.mean.outliers += m.outliers;
      row.mean.angle_error += m.angle_error;
      row.mean.n_points += m.n_points;
    }
    const double n = static_cast<double>(scenes.size());
    row.mean.epe /= n;
    row.mean.acc_strict /= n;
    row.mean.acc_relaxed /= n;
    row.mean.outliers /= n;
    row.mean.angle_error /= n;
    row.mean.n_points /= scenes.size();
    std::vector<double> sorted = row.epe;
    std::sort(sorted.begin(), sorted.end());
    const std::size_t mid = sorted.size() / 2;
    row.median_epe = sorted.size() % 2 == 1 ? sorted[mid] : 0.5 * (sorted[mid - 1] + sorted[mid]);
    rows.push_back(std::move(row));
  }
  return rows;
}

}  // namespace flowreg
