#pragma once

#include "flowreg/core.hpp"
#include "flowreg/flowmodel.hpp"
#include "flowreg/metrics.hpp"
#include "flowreg/normals.hpp"

#include <json.hpp>
#include <yaml-cpp/yaml.h>

#include <array>
#include <charconv>
#include <fstream>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

namespace flowreg::io {

class ParseError : public Error {
 public:
  ParseError(const std::string& path, std::size_t line, const std::string& what)
      : Error(path + ":" + std::to_string(line) + ": " + what), line_(line) {}
  std::size_t line() const { return line_; }

 private:
  std::size_t line_;
};

// ---------------------------------------------------------------------------
// CSV
// ---------------------------------------------------------------------------

/// 17 significant digits: parsing the text gives back the same double.
inline std::string format_double(double v) {
  std::array<char, 32> buf{};
  const auto res = std::to_chars(buf.data(), buf.data() + buf.size(), v, std::chars_format::general, 17);
  return std::string(buf.data(), res.ptr);
}

namespace detail {

inline std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
  return s;
}

inline std::vector<std::string_view> split(std::string_view line) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  for (;;) {
    const std::size_t comma = line.find(',', start);
    out.push_back(trim(line.substr(start, comma == std::string_view::npos ? std::string_view::npos : comma - start)));
    if (comma == std::string_view::npos) break;
    start = comma + 1;
  }
  return out;
}

inline std::string join(const std::vector<std::string>& cols) {
  std::string s;
  for (std::size_t i = 0; i < cols.size(); ++i) s += (i ? "," : "") + cols[i];
  return s;
}

inline double parse_number(std::string_view field, const std::string& path, std::size_t line) {
  if (!field.empty() && field.front() == '+') field.remove_prefix(1);
  double v = 0.0;
  const auto res = std::from_chars(field.data(), field.data() + field.size(), v);
  if (res.ec != std::errc() || res.ptr != field.data() + field.size()) {
    throw ParseError(path, line, "cannot parse number '" + std::string(field) + "'");
  }
  if (!std::isfinite(v)) throw ParseError(path, line, "non-finite value '" + std::string(field) + "'");
  return v;
}

inline std::ifstream open_in(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open '" + path + "' for reading");
  return in;
}

inline std::ofstream open_out(const std::string& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("cannot open '" + path + "' for writing");
  return out;
}

/// Rows of a numeric CSV with a fixed header. Blank lines are skipped.
inline std::vector<std::vector<double>> read_table(const std::string& path, const std::vector<std::string>& header) {
  auto in = open_in(path);
  std::string line;
  std::size_t lineno = 0;
  if (!std::getline(in, line)) throw ParseError(path, 1, "missing header, expected '" + join(header) + "'");
  ++lineno;
  const auto cols = split(line);
  bool header_ok = cols.size() == header.size();
  for (std::size_t c = 0; header_ok && c < cols.size(); ++c) header_ok = cols[c] == header[c];
  if (!header_ok) throw ParseError(path, 1, "bad header '" + std::string(trim(line)) + "', expected '" + join(header) + "'");

  std::vector<std::vector<double>> rows;
  while (std::getline(in, line)) {
    ++lineno;
    if (trim(line).empty()) continue;
    const auto fields = split(line);
    if (fields.size() != header.size()) {
      throw ParseError(path, lineno,
                       "expected " + std::to_string(header.size()) + " fields, got " + std::to_string(fields.size()));
    }
    std::vector<double> row(fields.size());
    for (std::size_t c = 0; c < fields.size(); ++c) row[c] = parse_number(fields[c], path, lineno);
    rows.push_back(std::move(row));
  }
  return rows;
}

inline std::vector<Vec3> read_vec3(const std::string& path, const std::vector<std::string>& header) {
  const auto rows = read_table(path, header);
  if (rows.empty()) throw ParseError(path, 2, "no data rows");
  std::vector<Vec3> out(rows.size());
  for (std::size_t i = 0; i < rows.size(); ++i) out[i] = Vec3(rows[i][0], rows[i][1], rows[i][2]);
  return out;
}

inline void write_vec3(const std::string& path, const std::string& header, std::span<const Vec3> rows) {
  auto out = open_out(path);
  out << header << '\n';
  for (const auto& v : rows) out << format_double(v[0]) << ',' << format_double(v[1]) << ',' << format_double(v[2]) << '\n';
  if (!out) throw Error("failed writing '" + path + "'");
}

}  // namespace detail

inline PointCloud read_cloud(const std::string& path) { return PointCloud(detail::read_vec3(path, {"x", "y", "z"})); }

inline void write_cloud(const PointCloud& cloud, const std::string& path) {
  detail::write_vec3(path, "x,y,z", cloud.points());
}

inline FlowField read_flow(const std::string& path) { return FlowField(detail::read_vec3(path, {"fx", "fy", "fz"})); }

/// Reads a flow file and checks it against its source cloud.
inline FlowField read_flow(const std::string& path, const PointCloud& source) {
  FlowField f = read_flow(path);
  if (f.size() != source.size()) {
    throw Error("'" + path + "' has " + std::to_string(f.size()) + " rows but the source cloud has " +
                std::to_string(source.size()) + " points");
  }
  return f;
}

inline void write_flow(const FlowField& flow, const std::string& path) {
  detail::write_vec3(path, "fx,fy,fz", flow.vectors);
}

inline std::vector<int> read_body_ids(const std::string& path) {
  const auto rows = detail::read_table(path, {"body_id"});
  std::vector<int> ids(rows.size());
  for (std::size_t i = 0; i < rows.size(); ++i) ids[i] = static_cast<int>(rows[i][0]);
  return ids;
}

inline void write_body_ids(const std::vector<int>& ids, const std::string& path) {
  auto out = detail::open_out(path);
  out << "body_id\n";
  for (int id : ids) out << id << '\n';
  if (!out) throw Error("failed writing '" + path + "'");
}

/// Columns nx,ny,nz,valid; invalid normals are written as zeros with valid=0.
inline void write_normals(const NormalField& normals, const std::string& path) {
  auto out = detail::open_out(path);
  out << "nx,ny,nz,valid\n";
  for (std::size_t i = 0; i < normals.size(); ++i) {
    const Vec3& n = normals.normals[i];
    out << format_double(n[0]) << ',' << format_double(n[1]) << ',' << format_double(n[2]) << ','
        << (normals.is_valid(i) ? 1 : 0) << '\n';
  }
  if (!out) throw Error("failed writing '" + path + "'");
}

inline NormalField read_normals(const std::string& path) {
  const auto rows = detail::read_table(path, {"nx", "ny", "nz", "valid"});
  NormalField nf;
  for (const auto& r : rows) {
    nf.normals.emplace_back(r[0], r[1], r[2]);
    nf.valid.push_back(r[3] != 0.0 ? 1 : 0);
  }
  return nf;
}

// ---------------------------------------------------------------------------
// Fit configuration
// ---------------------------------------------------------------------------

/// Resolved configuration as a flat JSON object. Its keys are exactly the
/// keys accepted by read_config, so a report's config echo can be fed back.
inline nlohmann::json config_to_json(const FitConfig& cfg) {
  const auto& l = cfg.loss;
  return nlohmann::json{
      {"model", to_string(cfg.model)},
      {"max_iters", cfg.max_iters},
      {"convergence_tol", cfg.convergence_tol},
      {"patience", cfg.patience},
      {"seed", cfg.seed},
      {"alpha_smooth", l.weights.alpha_smooth},
      {"alpha_surf", l.weights.alpha_surf},
      {"alpha_cyc", l.weights.alpha_cyc},
      {"k", l.k},
      {"k_n", l.k_n},
      {"normal_scale", l.normal_scale},
      {"viewpoint", {l.viewpoint[0], l.viewpoint[1], l.viewpoint[2]}},
      {"learning_rate", cfg.adam.learning_rate},
      {"beta1", cfg.adam.beta1},
      {"beta2", cfg.adam.beta2},
      {"epsilon", cfg.adam.epsilon},
      {"hidden", cfg.hidden},
      {"cyc_refresh_every", cfg.cyc_refresh_every},
  };
}

namespace detail {

inline const std::set<std::string>& config_keys() {
  static const std::set<std::string> keys{
      "preset",   "model",     "max_iters",    "convergence_tol", "patience",      "seed",
      "alpha_smooth", "alpha_surf", "alpha_cyc", "k",             "k_n",           "normal_scale",
      "viewpoint", "learning_rate", "beta1",    "beta2",           "epsilon",       "hidden",
      "cyc_refresh_every"};
  return keys;
}

template <class T>
T scalar(const YAML::Node& node, const std::string& key, const std::string& path) {
  try {
    return node.as<T>();
  } catch (const YAML::Exception&) {
    throw ParseError(path, static_cast<std::size_t>(node.Mark().line + 1), "bad value for '" + key + "'");
  }
}

}  // namespace detail

/// Applies a flat key/value document on top of cfg. "preset" is applied first
/// so explicit keys override it. Unknown keys are rejected.
inline void apply_config(FitConfig& cfg, const YAML::Node& doc, const std::string& path = "<config>") {
  if (!doc || doc.IsNull()) return;
  if (!doc.IsMap()) throw ParseError(path, 1, "config must be a key/value mapping");
  for (const auto& kv : doc) {
    const auto key = kv.first.as<std::string>();
    if (!detail::config_keys().count(key)) {
      throw ParseError(path, static_cast<std::size_t>(kv.first.Mark().line + 1), "unknown config key '" + key + "'");
    }
  }
  if (doc["preset"]) apply_preset(cfg, parse_preset(detail::scalar<std::string>(doc["preset"], "preset", path)));

  using detail::scalar;
  auto size_of = [&](const char* key, std::size_t& out) {
    if (doc[key]) {
      const auto v = scalar<long long>(doc[key], key, path);
      if (v < 0) throw ParseError(path, static_cast<std::size_t>(doc[key].Mark().line + 1), std::string(key) + " must be >= 0");
      out = static_cast<std::size_t>(v);
    }
  };
  auto real_of = [&](const char* key, double& out) {
    if (doc[key]) out = scalar<double>(doc[key], key, path);
  };

  if (doc["model"]) cfg.model = parse_model_kind(scalar<std::string>(doc["model"], "model", path));
  size_of("max_iters", cfg.max_iters);
  real_of("convergence_tol", cfg.convergence_tol);
  size_of("patience", cfg.patience);
  if (doc["seed"]) cfg.seed = scalar<std::uint64_t>(doc["seed"], "seed", path);
  real_of("alpha_smooth", cfg.loss.weights.alpha_smooth);
  real_of("alpha_surf", cfg.loss.weights.alpha_surf);
  real_of("alpha_cyc", cfg.loss.weights.alpha_cyc);
  size_of("k", cfg.loss.k);
  size_of("k_n", cfg.loss.k_n);
  real_of("normal_scale", cfg.loss.normal_scale);
  if (const auto vp = doc["viewpoint"]) {
    if (!vp.IsSequence() || vp.size() != 3) {
      throw ParseError(path, static_cast<std::size_t>(vp.Mark().line + 1), "viewpoint must be a list of 3 numbers");
    }
    for (std::size_t d = 0; d < 3; ++d) cfg.loss.viewpoint[static_cast<Eigen::Index>(d)] = scalar<double>(vp[d], "viewpoint", path);
  }
  real_of("learning_rate", cfg.adam.learning_rate);
  real_of("beta1", cfg.adam.beta1);
  real_of("beta2", cfg.adam.beta2);
  real_of("epsilon", cfg.adam.epsilon);
  if (const auto h = doc["hidden"]) {
    if (!h.IsSequence()) throw ParseError(path, static_cast<std::size_t>(h.Mark().line + 1), "hidden must be a list of widths");
    cfg.hidden.clear();
    for (const auto& w : h) cfg.hidden.push_back(scalar<std::size_t>(w, "hidden", path));
  }
  size_of("cyc_refresh_every", cfg.cyc_refresh_every);
}

namespace detail {

inline YAML::Node load_yaml(const std::string& text, const std::string& path) {
  try {
    return YAML::Load(text);
  } catch (const YAML::ParserException& e) {
    throw ParseError(path, static_cast<std::size_t>(e.mark.line + 1), e.msg);
  }
}

inline std::string slurp(const std::string& path) {
  auto in = open_in(path);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace detail

inline FitConfig parse_config(const std::string& text, const std::string& path = "<config>") {
  FitConfig cfg;
  apply_config(cfg, detail::load_yaml(text, path), path);
  validate(cfg);
  return cfg;
}

/// Flat key/value (YAML or JSON) file; omitted keys keep FitConfig defaults.
inline FitConfig read_config(const std::string& path) { return parse_config(detail::slurp(path), path); }

/// Layers a config file over an existing configuration.
inline void apply_config_file(FitConfig& cfg, const std::string& path) {
  apply_config(cfg, detail::load_yaml(detail::slurp(path), path), path);
}

// ---------------------------------------------------------------------------
// Reports
// ---------------------------------------------------------------------------

struct LossSummary {
  std::size_t iterations = 0;
  std::size_t best_iteration = 0;
  bool converged = false;
  LossRecord initial;
  LossRecord best;
  LossRecord final;
};

struct Report {
  std::string command;
  std::uint64_t seed = 0;
  nlohmann::json config = nlohmann::json::object();
  std::optional<LossSummary> losses;
  std::optional<Metrics> metrics;
  std::optional<double> runtime_seconds;  // omitted in deterministic mode
};

inline LossSummary summarize(const FitResult& r) {
  LossSummary s;
  s.iterations = r.history.size();
  s.best_iteration = r.best_iteration;
  s.converged = r.converged;
  if (!r.history.empty()) {
    s.initial = r.history.front();
    s.final = r.history.back();
  }
  s.best = r.best;
  return s;
}

inline nlohmann::json to_json(const LossRecord& r) {
  return {{"dist", r.dist}, {"smooth", r.smooth}, {"surf", r.surf}, {"cyc", r.cyc}, {"total", r.total}};
}

inline LossRecord loss_record_from_json(const nlohmann::json& j) {
  return {j.at("dist").get<double>(), j.at("smooth").get<double>(), j.at("surf").get<double>(),
          j.at("cyc").get<double>(), j.at("total").get<double>()};
}

inline nlohmann::json to_json(const Metrics& m) {
  return {{"epe", m.epe},         {"acc_strict", m.acc_strict}, {"acc_relaxed", m.acc_relaxed},
          {"outliers", m.outliers}, {"angle_error", m.angle_error}, {"n_points", m.n_points}};
}

inline Metrics metrics_from_json(const nlohmann::json& j) {
  Metrics m;
  m.epe = j.at("epe").get<double>();
  m.acc_strict = j.at("acc_strict").get<double>();
  m.acc_relaxed = j.at("acc_relaxed").get<double>();
  m.outliers = j.at("outliers").get<double>();
  m.angle_error = j.at("angle_error").get<double>();
  m.n_points = j.at("n_points").get<std::size_t>();
  return m;
}

inline nlohmann::json to_json(const Report& r) {
  nlohmann::json j;
  j["command"] = r.command;
  j["seed"] = r.seed;
  j["config"] = r.config;
  if (r.losses) {
    const auto& s = *r.losses;
    j["losses"] = {{"iterations", s.iterations}, {"best_iteration", s.best_iteration}, {"converged", s.converged},
                   {"initial", to_json(s.initial)}, {"best", to_json(s.best)},        {"final", to_json(s.final)}};
  }
  if (r.metrics) j["metrics"] = to_json(*r.metrics);
  if (r.runtime_seconds) j["runtime_seconds"] = *r.runtime_seconds;
  return j;
}

inline Report report_from_json(const nlohmann::json& j) {
  Report r;
  r.command = j.at("command").get<std::string>();
  r.seed = j.at("seed").get<std::uint64_t>();
  r.config = j.at("config");
  if (j.contains("losses")) {
    const auto& l = j.at("losses");
    LossSummary s;
    s.iterations = l.at("iterations").get<std::size_t>();
    s.best_iteration = l.at("best_iteration").get<std::size_t>();
    s.converged = l.at("converged").get<bool>();
    s.initial = loss_record_from_json(l.at("initial"));
    s.best = loss_record_from_json(l.at("best"));
    s.final = loss_record_from_json(l.at("final"));
    r.losses = s;
  }
  if (j.contains("metrics")) r.metrics = metrics_from_json(j.at("metrics"));
  if (j.contains("runtime_seconds")) r.runtime_seconds = j.at("runtime_seconds").get<double>();
  return r;
}

inline void write_report(const Report& r, const std::string& path) {
  auto out = detail::open_out(path);
  out << to_json(r).dump(2) << '\n';
  if (!out) throw Error("failed writing '" + path + "'");
}

inline Report read_report(const std::string& path) {
  auto in = detail::open_in(path);
  try {
    return report_from_json(nlohmann::json::parse(in));
  } catch (const nlohmann::json::exception& e) {
    throw Error("'" + path + "': " + e.what());
  }
}

}  // namespace flowreg::io
