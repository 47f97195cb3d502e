#pragma once

#include "flowreg/core.hpp"
#include "flowreg/losses.hpp"

#include <Eigen/Dense>

#include <cmath>
#include <cstdint>
#include <limits>
#include <random>
#include <string>
#include <vector>

namespace flowreg {

enum class ModelKind { direct, coordnet };

inline const char* to_string(ModelKind kind) { return kind == ModelKind::direct ? "direct" : "coordnet"; }

inline ModelKind parse_model_kind(const std::string& s) {
  if (s == "direct") return ModelKind::direct;
  if (s == "coordnet") return ModelKind::coordnet;
  throw Error("unknown model '" + s + "' (expected direct or coordnet)");
}

/// Flow parameterization over a flat parameter vector.
///
/// direct:   one free 3-vector per source point.
/// coordnet: fully-connected ReLU network mapping position to flow, layer
///           sizes 3 -> hidden... -> 3, linear output layer.
class FlowModel {
 public:
  static FlowModel direct(std::size_t n_points) {
    FlowModel m;
    m.kind_ = ModelKind::direct;
    m.n_points_ = n_points;
    m.params_ = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(3 * n_points));
    return m;
  }

  /// Hidden weights uniform in +-1/sqrt(fan_in), biases zero. The output
  /// layer starts at zero so the initial flow is F = 0.
  static FlowModel coordnet(const std::vector<std::size_t>& hidden, std::uint64_t seed) {
    FlowModel m = coordnet_zero(hidden);
    std::mt19937_64 rng(seed);
    for (std::size_t l = 0; l + 2 < m.sizes_.size(); ++l) {
      const double bound = 1.0 / std::sqrt(static_cast<double>(m.sizes_[l]));
      std::uniform_real_distribution<double> u(-bound, bound);
      auto w = m.weight(l);
      for (Eigen::Index c = 0; c < w.cols(); ++c) {
        for (Eigen::Index r = 0; r < w.rows(); ++r) w(r, c) = u(rng);
      }
    }
    return m;
  }

  static FlowModel coordnet_zero(const std::vector<std::size_t>& hidden) {
    FlowModel m;
    m.kind_ = ModelKind::coordnet;
    m.sizes_.push_back(3);
    for (std::size_t h : hidden) {
      if (h == 0) throw Error("coordnet hidden layers must have positive width");
      m.sizes_.push_back(h);
    }
    m.sizes_.push_back(3);
    std::size_t total = 0;
    for (std::size_t l = 0; l + 1 < m.sizes_.size(); ++l) {
      m.offsets_.push_back(total);
      total += m.sizes_[l + 1] * m.sizes_[l] + m.sizes_[l + 1];
    }
    m.params_ = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(total));
    return m;
  }

  ModelKind kind() const { return kind_; }
  std::size_t parameter_count() const { return static_cast<std::size_t>(params_.size()); }
  const Eigen::VectorXd& parameters() const { return params_; }
  Eigen::VectorXd& parameters() { return params_; }
  const std::vector<std::size_t>& layer_sizes() const { return sizes_; }
  std::size_t layer_count() const { return sizes_.empty() ? 0 : sizes_.size() - 1; }

  Eigen::Map<Eigen::MatrixXd> weight(std::size_t l) {
    return {params_.data() + offsets_[l], rows(l), cols(l)};
  }
  Eigen::Map<const Eigen::MatrixXd> weight(std::size_t l) const {
    return {params_.data() + offsets_[l], rows(l), cols(l)};
  }
  Eigen::Map<Eigen::VectorXd> bias(std::size_t l) { return {params_.data() + offsets_[l] + rows(l) * cols(l), rows(l)}; }
  Eigen::Map<const Eigen::VectorXd> bias(std::size_t l) const {
    return {params_.data() + offsets_[l] + rows(l) * cols(l), rows(l)};
  }

  /// Layer inputs recorded by a forward pass, reusable by backward.
  struct Tape {
    std::vector<Eigen::MatrixXd> inputs;
  };

  FlowField forward(const PointCloud& source, Tape* tape = nullptr) const {
    if (kind_ == ModelKind::direct) {
      check_direct(source.size());
      FlowField flow = FlowField::zeros(source.size());
      for (std::size_t i = 0; i < source.size(); ++i) flow[i] = params_.segment<3>(static_cast<Eigen::Index>(3 * i));
      return flow;
    }
    if (tape != nullptr) tape->inputs.clear();
    const Eigen::MatrixXd out = run(source, tape != nullptr ? &tape->inputs : nullptr);
    FlowField flow = FlowField::zeros(source.size());
    for (std::size_t i = 0; i < source.size(); ++i) flow[i] = out.col(static_cast<Eigen::Index>(i));
    return flow;
  }

  /// Chain rule from per-point flow gradients to parameter gradients.
  Eigen::VectorXd backward(const PointCloud& source, std::span<const Vec3> grad_flow) const {
    Tape tape;
    if (kind_ == ModelKind::coordnet) run(source, &tape.inputs);
    return backward(source, grad_flow, tape);
  }

  /// Same, reusing the tape of a forward pass at the current parameters.
  Eigen::VectorXd backward(const PointCloud& source, std::span<const Vec3> grad_flow, const Tape& tape) const {
    if (grad_flow.size() != source.size()) throw Error("gradient length does not match source cloud");
    Eigen::VectorXd grad = Eigen::VectorXd::Zero(params_.size());
    const auto n = static_cast<Eigen::Index>(source.size());
    if (kind_ == ModelKind::direct) {
      check_direct(source.size());
      for (Eigen::Index i = 0; i < n; ++i) grad.segment<3>(3 * i) = grad_flow[static_cast<std::size_t>(i)];
      return grad;
    }
    if (tape.inputs.size() != layer_count() || tape.inputs.front().cols() != n) {
      throw Error("backward tape does not match the model and cloud");
    }
    const std::vector<Eigen::MatrixXd>& acts = tape.inputs;
    Eigen::MatrixXd g(3, n);
    for (Eigen::Index i = 0; i < n; ++i) g.col(i) = grad_flow[static_cast<std::size_t>(i)];

    for (std::size_t l = layer_count(); l-- > 0;) {
      const Eigen::MatrixXd& input = acts[l];
      Eigen::Map<Eigen::MatrixXd> dw(grad.data() + offsets_[l], rows(l), cols(l));
      Eigen::Map<Eigen::VectorXd> db(grad.data() + offsets_[l] + rows(l) * cols(l), rows(l));
      dw.noalias() = g * input.transpose();
      db = g.rowwise().sum();
      if (l > 0) {
        Eigen::MatrixXd prev = weight(l).transpose() * g;
        // acts[l] is relu(z); its positive entries are exactly where relu' = 1.
        prev = (input.array() > 0.0).select(prev, 0.0);
        g = std::move(prev);
      }
    }
    return grad;
  }

  /// Hidden pre-activations for every point; used to keep gradient checks off ReLU kinks.
  std::vector<Eigen::MatrixXd> pre_activations(const PointCloud& source) const {
    std::vector<Eigen::MatrixXd> zs;
    if (kind_ != ModelKind::coordnet) return zs;
    Eigen::MatrixXd a = as_matrix(source);
    for (std::size_t l = 0; l + 1 < layer_count(); ++l) {
      Eigen::MatrixXd z = weight(l) * a;
      z.colwise() += bias(l);
      a = z.cwiseMax(0.0);
      zs.push_back(std::move(z));
    }
    return zs;
  }

 private:
  FlowModel() = default;

  Eigen::Index rows(std::size_t l) const { return static_cast<Eigen::Index>(sizes_[l + 1]); }
  Eigen::Index cols(std::size_t l) const { return static_cast<Eigen::Index>(sizes_[l]); }

  void check_direct(std::size_t n) const {
    if (n != n_points_) {
      throw Error("direct flow model has " + std::to_string(n_points_) + " points but cloud has " + std::to_string(n));
    }
  }

  static Eigen::MatrixXd as_matrix(const PointCloud& source) {
    Eigen::MatrixXd a(3, static_cast<Eigen::Index>(source.size()));
    for (std::size_t i = 0; i < source.size(); ++i) a.col(static_cast<Eigen::Index>(i)) = source[i];
    return a;
  }

  // acts (when given) receives the input of every layer.
  Eigen::MatrixXd run(const PointCloud& source, std::vector<Eigen::MatrixXd>* acts) const {
    Eigen::MatrixXd a = as_matrix(source);
    for (std::size_t l = 0; l < layer_count(); ++l) {
      Eigen::MatrixXd z = weight(l) * a;
      z.colwise() += bias(l);
      if (acts != nullptr) acts->push_back(std::move(a));
      a = (l + 1 < layer_count()) ? Eigen::MatrixXd(z.cwiseMax(0.0)) : std::move(z);
    }
    return a;
  }

  ModelKind kind_ = ModelKind::direct;
  std::size_t n_points_ = 0;
  std::vector<std::size_t> sizes_;
  std::vector<std::size_t> offsets_;
  Eigen::VectorXd params_;
};

// ---------------------------------------------------------------------------
// Optimizer
// ---------------------------------------------------------------------------

struct AdamParams {
  double learning_rate = 0.008;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

class Adam {
 public:
  Adam(std::size_t n_params, AdamParams params)
      : p_(params),
        m_(Eigen::VectorXd::Zero(static_cast<Eigen::Index>(n_params))),
        v_(Eigen::VectorXd::Zero(static_cast<Eigen::Index>(n_params))) {}

  void step(Eigen::VectorXd& theta, const Eigen::VectorXd& grad) {
    if (grad.size() != theta.size() || theta.size() != m_.size()) throw Error("optimizer shape mismatch");
    ++t_;
    m_ = p_.beta1 * m_ + (1.0 - p_.beta1) * grad;
    v_ = p_.beta2 * v_ + (1.0 - p_.beta2) * grad.cwiseAbs2();
    const double c1 = 1.0 - std::pow(p_.beta1, static_cast<double>(t_));
    const double c2 = 1.0 - std::pow(p_.beta2, static_cast<double>(t_));
    theta.array() -= p_.learning_rate * (m_.array() / c1) / ((v_.array() / c2).sqrt() + p_.epsilon);
  }

  std::size_t iteration() const { return t_; }
  const Eigen::VectorXd& first_moment() const { return m_; }
  const Eigen::VectorXd& second_moment() const { return v_; }

 private:
  AdamParams p_;
  Eigen::VectorXd m_;
  Eigen::VectorXd v_;
  std::size_t t_ = 0;
};

// ---------------------------------------------------------------------------
// Fitting
// ---------------------------------------------------------------------------

enum class Preset { stereo, lidar };

inline const char* to_string(Preset p) { return p == Preset::stereo ? "stereo" : "lidar"; }

inline Preset parse_preset(const std::string& s) {
  if (s == "stereo") return Preset::stereo;
  if (s == "lidar") return Preset::lidar;
  throw Error("unknown preset '" + s + "' (expected stereo or lidar)");
}

struct FitConfig {
  std::size_t max_iters = 2000;
  double convergence_tol = 1e-5;
  std::size_t patience = 30;
  std::uint64_t seed = 0;
  LossConfig loss;
  ModelKind model = ModelKind::direct;
  std::vector<std::size_t> hidden{64, 64, 64, 64};
  AdamParams adam;
  std::size_t cyc_refresh_every = 1;
};

/// Loss weights and neighborhood size of a preset; everything else untouched.
inline void apply_preset(FitConfig& cfg, Preset preset) {
  if (preset == Preset::stereo) {
    cfg.loss.k = 32;
    cfg.loss.weights.alpha_surf = 10.0;
    cfg.loss.weights.alpha_cyc = 10.0;
  } else {
    cfg.loss.k = 4;
    cfg.loss.weights.alpha_surf = 1.0;
    cfg.loss.weights.alpha_cyc = 10.0;
  }
  cfg.loss.weights.alpha_smooth = 0.0;
  cfg.loss.k_n = default_normal_neighbors;
}

inline FitConfig preset_config(Preset preset) {
  FitConfig cfg;
  apply_preset(cfg, preset);
  return cfg;
}

inline void validate(const FitConfig& cfg) {
  if (cfg.max_iters < 1) throw Error("max_iters must be >= 1");
  if (!(cfg.convergence_tol >= 0.0)) throw Error("convergence_tol must be >= 0");
  if (cfg.loss.k < 1) throw Error("k must be >= 1");
  if (cfg.loss.k_n < 3) throw Error("degenerate neighborhood");
  if (cfg.cyc_refresh_every < 1) throw Error("cyc_refresh_every must be >= 1");
  if (!(cfg.adam.learning_rate > 0.0)) throw Error("learning_rate must be > 0");
}

struct LossRecord {
  double dist = 0.0;
  double smooth = 0.0;
  double surf = 0.0;
  double cyc = 0.0;
  double total = 0.0;
};

inline LossRecord record_of(const LossBreakdown& b) { return {b.dist, b.smooth, b.surf, b.cyc, b.total}; }

struct FitResult {
  FlowField flow;                  // flow at the best iterate
  std::vector<LossRecord> history;  // one entry per evaluated iterate
  std::size_t best_iteration = 0;
  LossRecord best;
  bool converged = false;
};

/// Minimizes the combined objective with Adam. Returns the lowest-loss iterate.
/// Stops after max_iters evaluations, or once the best loss has failed to
/// improve by a relative convergence_tol for `patience` consecutive iterations.
inline FitResult fit(const PointCloud& source, const PointCloud& target, const FitConfig& cfg) {
  validate(cfg);
  const Objective objective(source, target, cfg.loss);
  FlowModel model = cfg.model == ModelKind::direct ? FlowModel::direct(source.size())
                                                   : FlowModel::coordnet(cfg.hidden, cfg.seed);
  Adam adam(model.parameter_count(), cfg.adam);

  FitResult result;
  result.history.reserve(cfg.max_iters);
  double best = std::numeric_limits<double>::infinity();
  std::size_t stall = 0;
  ClusterSet cyc_cache;

  FlowModel::Tape tape;

  for (std::size_t it = 0; it < cfg.max_iters; ++it) {
    const FlowField flow = model.forward(source, &tape);
    if (it % cfg.cyc_refresh_every == 0) cyc_cache.clusters.clear();
    const LossBreakdown loss = objective.evaluate(flow, &cyc_cache);
    if (!std::isfinite(loss.total)) {
      throw Error("non-finite loss at iteration " + std::to_string(it) + " (dist=" + std::to_string(loss.dist) +
                  ", cyc=" + std::to_string(loss.cyc) + ")");
    }
    result.history.push_back(record_of(loss));

    if (loss.total < best) {
      const bool significant = !std::isfinite(best) || (best - loss.total) >= cfg.convergence_tol * best;
      best = loss.total;
      result.flow = flow;
      result.best_iteration = it;
      result.best = record_of(loss);
      stall = significant ? 0 : stall + 1;
    } else {
      ++stall;
    }
    if (stall >= cfg.patience || best == 0.0) {
      result.converged = true;
      break;
    }
    if (it + 1 == cfg.max_iters) break;

    Eigen::VectorXd grad = model.backward(source, loss.grad_total, tape);
    adam.step(model.parameters(), grad);
  }
  return result;
}

}  // namespace flowreg
