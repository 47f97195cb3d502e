#pragma once

#include "flowreg/core.hpp"

#include <Eigen/Geometry>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <random>
#include <string>
#include <vector>

namespace flowreg {

enum class Shape { box, sphere, plane };
// separated: bodies at least two diameters apart. adjacent: a wall hovering
// just above the ground. packed: every body sits packing_gap from a
// neighbor's footprint circle.
enum class Layout { separated, adjacent, packed };

inline Shape parse_shape(const std::string& s) {
  if (s == "box") return Shape::box;
  if (s == "sphere") return Shape::sphere;
  if (s == "plane") return Shape::plane;
  throw Error("unknown shape '" + s + "' (expected box, sphere or plane)");
}

inline const char* to_string(Shape s) {
  switch (s) {
    case Shape::box: return "box";
    case Shape::sphere: return "sphere";
    case Shape::plane: return "plane";
  }
  return "?";
}

inline Layout parse_layout(const std::string& s) {
  if (s == "separated") return Layout::separated;
  if (s == "adjacent") return Layout::adjacent;
  if (s == "packed") return Layout::packed;
  throw Error("unknown layout '" + s + "' (expected separated, adjacent or packed)");
}

inline const char* to_string(Layout l) {
  switch (l) {
    case Layout::separated: return "separated";
    case Layout::adjacent: return "adjacent";
    case Layout::packed: return "packed";
  }
  return "?";
}

/// Scene layout: a sensor at the origin, a static ground patch below it, and
/// rigid bodies moving over the ground.
struct SceneSpec {
  std::size_t n_bodies = 2;
  std::size_t points_per_body = 512;
  std::size_t background_points = 1024;
  std::vector<Shape> shapes{Shape::box, Shape::sphere, Shape::plane};  // cycled over bodies
  double body_size = 2.0;      // m, box length / sphere diameter / plane side
  double min_translation = 0.1;  // m
  double max_translation = 1.0;  // m
  double max_rotation = 0.1;     // rad, about the vertical axis through the body center
  bool resample_target = true;
  double noise_sigma = 0.0;  // m
  std::uint64_t seed = 0;
  Layout layout = Layout::separated;
  double ground_height = -1.5;  // m, relative to the sensor
  double clearance = 0.1;       // m, gap between ground and body bottoms
  double ground_margin = 1.5;   // m, width of the ground ring around each body footprint
  double packing_gap = 0.2;     // m, packed layout only
};

struct SynthScene {
  PointCloud source;
  PointCloud target;
  FlowField gt;
  std::vector<int> body_id;  // 0 = static background, bodies start at 1
};

inline void check_rotation(const Mat3& rotation) {
  if (!rotation.allFinite() || (rotation.transpose() * rotation - Mat3::Identity()).cwiseAbs().maxCoeff() > 1e-9 ||
      std::abs(rotation.determinant() - 1.0) > 1e-9) {
    throw Error("rotation must be orthonormal with determinant +1");
  }
}

/// flow_i = R (p_i - c) + c + t - p_i, evaluated as (R - I)(p_i - c) + t so a
/// pure translation is reproduced exactly.
inline std::vector<Vec3> rigid_displacement(std::span<const Vec3> points, const Mat3& rotation, const Vec3& translation,
                                            const Vec3& center) {
  check_rotation(rotation);
  std::vector<Vec3> flow(points.size());
  for (std::size_t i = 0; i < points.size(); ++i) {
    const Vec3 arm = points[i] - center;
    flow[i] = (rotation * arm - arm) + translation;
  }
  return flow;
}

namespace detail {

struct Body {
  Shape shape = Shape::box;
  Vec3 center = Vec3::Zero();
  Mat3 orientation = Mat3::Identity();
  Vec3 half_extents = Vec3::Ones();  // box half sizes; sphere uses x as radius; plane uses (0, y, z)
  Mat3 rotation = Mat3::Identity();
  Vec3 translation = Vec3::Zero();

  double radius() const { return half_extents.norm(); }
  double footprint_radius() const {
    return shape == Shape::sphere ? half_extents[0] : half_extents.head<2>().norm();
  }
};

inline Mat3 yaw(double angle) { return Eigen::AngleAxisd(angle, Vec3::UnitZ()).toRotationMatrix(); }

inline Vec3 sample_on_body(const Body& b, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  const Vec3& h = b.half_extents;
  Vec3 local;
  switch (b.shape) {
    case Shape::box: {
      // Four sides and the top; the bottom face is never seen from above.
      const double ax = 2.0 * h[1] * h[2], ay = 2.0 * h[0] * h[2], az = h[0] * h[1];
      std::uniform_real_distribution<double> pick(0.0, ax + ay + az);
      const double p = pick(rng);
      const double side = u(rng) < 0.0 ? -1.0 : 1.0;
      if (p < ax) {
        local = Vec3(side * h[0], u(rng) * h[1], u(rng) * h[2]);
      } else if (p < ax + ay) {
        local = Vec3(u(rng) * h[0], side * h[1], u(rng) * h[2]);
      } else {
        local = Vec3(u(rng) * h[0], u(rng) * h[1], h[2]);
      }
      break;
    }
    case Shape::sphere: {
      std::normal_distribution<double> g(0.0, 1.0);
      Vec3 d;
      do {
        d = Vec3(g(rng), g(rng), g(rng));
      } while (d.norm() < 1e-12);
      local = h[0] * d.normalized();
      break;
    }
    case Shape::plane:
      local = Vec3(0.0, u(rng) * h[1], u(rng) * h[2]);
      break;
  }
  return b.orientation * local + b.center;
}

inline Body make_body(Shape shape, double size, double ground, double clearance, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u01(0.0, 1.0);
  Body b;
  b.shape = shape;
  switch (shape) {
    case Shape::box:
      b.half_extents = 0.5 * size * Vec3(1.0 + u01(rng), 0.6 + 0.4 * u01(rng), 0.5 + 0.3 * u01(rng));
      break;
    case Shape::sphere:
      b.half_extents = Vec3(0.5 * size, 0.5 * size, 0.5 * size);
      break;
    case Shape::plane:
      b.half_extents = Vec3(0.0, 0.5 * size, 0.5 * size);
      break;
  }
  b.orientation = yaw(2.0 * std::numbers::pi * u01(rng));
  const double half_height = shape == Shape::box ? b.half_extents[2] : 0.5 * size;
  b.center = Vec3(0.0, 0.0, ground + clearance + half_height);
  return b;
}

inline void draw_motion(Body& b, const SceneSpec& spec, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u01(0.0, 1.0);
  const double heading = 2.0 * std::numbers::pi * u01(rng);
  const double magnitude = spec.min_translation + (spec.max_translation - spec.min_translation) * u01(rng);
  b.translation = magnitude * Vec3(std::cos(heading), std::sin(heading), 0.0);
  b.rotation = yaw(spec.max_rotation * (2.0 * u01(rng) - 1.0));
}

// Touching footprint circles plus gap against a random earlier body, clear of all others.
inline void place_packed(Body& body, const std::vector<Body>& placed, double gap, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u01(0.0, 1.0);
  const double sensor_range = 6.0;
  if (placed.empty()) {
    const double bearing = 2.0 * std::numbers::pi * u01(rng);
    body.center.head<2>() = sensor_range * Eigen::Vector2d(std::cos(bearing), std::sin(bearing));
    return;
  }
  std::uniform_int_distribution<std::size_t> pick(0, placed.size() - 1);
  for (;;) {
    const Body& anchor = placed[pick(rng)];
    const double bearing = 2.0 * std::numbers::pi * u01(rng);
    const double d = anchor.footprint_radius() + body.footprint_radius() + gap;
    body.center.head<2>() = anchor.center.head<2>() + d * Eigen::Vector2d(std::cos(bearing), std::sin(bearing));
    const bool clear = std::all_of(placed.begin(), placed.end(), [&](const Body& o) {
      return (o.center - body.center).head<2>().norm() >= o.footprint_radius() + body.footprint_radius() + gap - 1e-9;
    });
    if (clear) return;
  }
}

inline void validate(const SceneSpec& spec) {
  if (spec.n_bodies * spec.points_per_body + spec.background_points < 2) {
    throw Error("degenerate scene: fewer than 2 points");
  }
  if (spec.n_bodies > 0 && spec.shapes.empty()) throw Error("degenerate scene: no body shapes");
  if (!(spec.body_size > 0.0)) throw Error("degenerate scene: body_size must be > 0");
  if (!(spec.min_translation >= 0.0) || !(spec.max_translation >= spec.min_translation) || !(spec.max_rotation >= 0.0) ||
      !(spec.noise_sigma >= 0.0) || !(spec.clearance >= 0.0) || !(spec.ground_margin >= 0.0) ||
      !(spec.packing_gap >= 0.0)) {
    throw Error("degenerate scene: motion ranges, clearance and noise must be >= 0");
  }
  if (spec.layout == Layout::adjacent && spec.n_bodies < 1) throw Error("adjacent layout needs at least one body");
}

}  // namespace detail

/// Deterministic per seed. Source points are sampled on the bodies at the
/// first pose; target points are either an exact warp of the source or an
/// independent resampling of the moved surfaces. Target order is shuffled.
inline SynthScene generate_scene(const SceneSpec& spec) {
  using detail::Body;
  detail::validate(spec);
  std::mt19937_64 rng(spec.seed);
  std::uniform_real_distribution<double> u01(0.0, 1.0);

  std::vector<Body> bodies;
  std::size_t first_free = 0;
  if (spec.layout == Layout::adjacent) {
    // A wall whose bottom edge floats 0.1 m above the static ground.
    Body wall = detail::make_body(Shape::plane, spec.body_size, spec.ground_height, 0.1, rng);
    const double bearing = 2.0 * std::numbers::pi * u01(rng);
    wall.center.head<2>() = 6.0 * Eigen::Vector2d(std::cos(bearing), std::sin(bearing));
    detail::draw_motion(wall, spec, rng);
    bodies.push_back(wall);
    first_free = 1;
  }

  double ring = 4.0 + 2.0 * spec.body_size * std::sqrt(static_cast<double>(spec.n_bodies));
  for (std::size_t b = first_free; b < spec.n_bodies; ++b) {
    Body body = detail::make_body(spec.shapes[b % spec.shapes.size()], spec.body_size, spec.ground_height,
                                  spec.clearance, rng);
    if (spec.layout == Layout::packed) {
      detail::place_packed(body, bodies, spec.packing_gap, rng);
      detail::draw_motion(body, spec, rng);
      bodies.push_back(body);
      continue;
    }
    for (int attempt = 0;; ++attempt) {
      if (attempt > 0 && attempt % 200 == 0) ring *= 1.25;
      const double r = 4.0 + (ring - 4.0) * std::sqrt(u01(rng));
      const double bearing = 2.0 * std::numbers::pi * u01(rng);
      body.center.head<2>() = r * Eigen::Vector2d(std::cos(bearing), std::sin(bearing));
      const bool clear = std::all_of(bodies.begin(), bodies.end(), [&](const Body& o) {
        const double need = 2.0 * std::max(2.0 * body.radius(), 2.0 * o.radius());
        return (o.center - body.center).head<2>().norm() >= need;
      });
      if (clear) break;
    }
    detail::draw_motion(body, spec, rng);
    bodies.push_back(body);
  }

  // Static ground: a ring around every body footprint (the ground left near
  // objects; the patch under a body is occluded), or a square patch in front
  // of the sensor for empty scenes.
  auto sample_ground = [&]() {
    if (bodies.empty()) {
      return Vec3(2.0 + 6.0 * u01(rng), 6.0 * u01(rng) - 3.0, spec.ground_height);
    }
    std::uniform_int_distribution<std::size_t> which(0, bodies.size() - 1);
    const Body& b = bodies[which(rng)];
    const double inner = b.footprint_radius();
    const double outer = inner + spec.ground_margin;
    const double r = std::sqrt(inner * inner + (outer * outer - inner * inner) * u01(rng));
    const double a = 2.0 * std::numbers::pi * u01(rng);
    return Vec3(b.center[0] + r * std::cos(a), b.center[1] + r * std::sin(a), spec.ground_height);
  };

  std::vector<Vec3> xs;
  std::vector<int> ids;
  std::vector<Vec3> flow;
  const std::size_t n = spec.n_bodies * spec.points_per_body + spec.background_points;
  xs.reserve(n);
  ids.reserve(n);
  for (std::size_t i = 0; i < spec.background_points; ++i) {
    xs.push_back(sample_ground());
    ids.push_back(0);
  }
  for (std::size_t b = 0; b < bodies.size(); ++b) {
    for (std::size_t i = 0; i < spec.points_per_body; ++i) {
      xs.push_back(detail::sample_on_body(bodies[b], rng));
      ids.push_back(static_cast<int>(b + 1));
    }
  }

  std::normal_distribution<double> noise(0.0, spec.noise_sigma > 0.0 ? spec.noise_sigma : 1.0);
  auto jitter = [&](Vec3& p) {
    if (spec.noise_sigma > 0.0) p += Vec3(noise(rng), noise(rng), noise(rng));
  };
  for (auto& p : xs) jitter(p);

  flow.assign(xs.size(), Vec3::Zero());
  for (std::size_t i = 0; i < xs.size(); ++i) {
    if (ids[i] == 0) continue;
    const Body& b = bodies[static_cast<std::size_t>(ids[i] - 1)];
    flow[i] = rigid_displacement(std::span<const Vec3>(&xs[i], 1), b.rotation, b.translation, b.center).front();
  }

  std::vector<Vec3> ys;
  ys.reserve(xs.size());
  if (!spec.resample_target) {
    for (std::size_t i = 0; i < xs.size(); ++i) ys.push_back(xs[i] + flow[i]);
  } else {
    for (std::size_t i = 0; i < spec.background_points; ++i) ys.push_back(sample_ground());
    for (const auto& b : bodies) {
      for (std::size_t i = 0; i < spec.points_per_body; ++i) {
        const Vec3 p = detail::sample_on_body(b, rng);
        ys.push_back(b.rotation * (p - b.center) + b.center + b.translation);
      }
    }
  }
  for (auto& p : ys) jitter(p);
  std::shuffle(ys.begin(), ys.end(), rng);

  return SynthScene{PointCloud(std::move(xs)), PointCloud(std::move(ys)), FlowField(std::move(flow)), std::move(ids)};
}

}  // namespace flowreg
