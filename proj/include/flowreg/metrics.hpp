#pragma once

#include "flowreg/core.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <string>
#include <vector>

namespace flowreg {

struct PointError {
  double abs = 0.0;  // ||f - f_gt||
  double rel = 0.0;  // abs / ||f_gt||; +inf when f_gt = 0 and abs > 0, 0 when both vanish
};

/// Percentages are in [0, 100]; angle_error is in radians.
struct Metrics {
  double epe = 0.0;
  double acc_strict = 0.0;
  double acc_relaxed = 0.0;
  double outliers = 0.0;
  double angle_error = 0.0;
  std::size_t n_points = 0;

  friend bool operator==(const Metrics&, const Metrics&) = default;
};

enum class ThetaMode { homogeneous, raw3d };

inline ThetaMode parse_theta_mode(const std::string& s) {
  if (s == "homogeneous") return ThetaMode::homogeneous;
  if (s == "raw3d") return ThetaMode::raw3d;
  throw Error("unknown theta mode '" + s + "' (expected homogeneous or raw3d)");
}

inline const char* to_string(ThetaMode m) { return m == ThetaMode::homogeneous ? "homogeneous" : "raw3d"; }

inline void check_same_length(const FlowField& flow, const FlowField& gt) {
  if (flow.size() != gt.size()) {
    throw Error("flow has " + std::to_string(flow.size()) + " vectors but ground truth has " +
                std::to_string(gt.size()));
  }
}

inline PointError point_error(const Vec3& f, const Vec3& f_gt) {
  PointError e;
  e.abs = (f - f_gt).norm();
  const double gt_norm = f_gt.norm();
  if (gt_norm > 0.0) {
    e.rel = e.abs / gt_norm;
  } else {
    e.rel = e.abs > 0.0 ? std::numeric_limits<double>::infinity() : 0.0;
  }
  return e;
}

inline std::vector<PointError> point_errors(const FlowField& flow, const FlowField& gt) {
  check_same_length(flow, gt);
  std::vector<PointError> out(flow.size());
  for (std::size_t i = 0; i < flow.size(); ++i) out[i] = point_error(flow[i], gt[i]);
  return out;
}

/// Angle between two flows. Homogeneous mode appends a unit fourth
/// coordinate before normalizing, so zero flows are well defined. Uses
/// 2 atan2(|a - b|, |a + b|) on the unit vectors, which equals the arccos of
/// their dot product but stays exact at zero angle.
inline double flow_angle(const Vec3& f, const Vec3& f_gt, ThetaMode mode) {
  Eigen::Vector4d u(f[0], f[1], f[2], 1.0);
  Eigen::Vector4d v(f_gt[0], f_gt[1], f_gt[2], 1.0);
  if (mode == ThetaMode::raw3d) u[3] = v[3] = 0.0;
  u.normalize();
  v.normalize();
  return 2.0 * std::atan2((u - v).norm(), (u + v).norm());
}

inline Metrics compute_metrics(const FlowField& flow, const FlowField& gt, ThetaMode mode = ThetaMode::homogeneous) {
  check_same_length(flow, gt);
  if (flow.size() == 0) throw Error("cannot evaluate an empty flow field");

  std::size_t strict = 0, relaxed = 0, outlier = 0, angled = 0;
  double err_sum = 0.0, angle_sum = 0.0;
  for (std::size_t i = 0; i < flow.size(); ++i) {
    const PointError e = point_error(flow[i], gt[i]);
    err_sum += e.abs;
    if (e.abs < 0.05 || e.rel < 0.05) ++strict;
    if (e.abs < 0.1 || e.rel < 0.1) ++relaxed;
    if (e.abs > 0.3 || e.rel > 0.1) ++outlier;
    if (mode == ThetaMode::raw3d && (flow[i].norm() == 0.0 || gt[i].norm() == 0.0)) continue;
    angle_sum += flow_angle(flow[i], gt[i], mode);
    ++angled;
  }
  const double n = static_cast<double>(flow.size());
  Metrics m;
  m.n_points = flow.size();
  m.epe = err_sum / n;
  m.acc_strict = 100.0 * static_cast<double>(strict) / n;
  m.acc_relaxed = 100.0 * static_cast<double>(relaxed) / n;
  m.outliers = 100.0 * static_cast<double>(outlier) / n;
  m.angle_error = angled > 0 ? angle_sum / static_cast<double>(angled) : 0.0;
  return m;
}

}  // namespace flowreg
