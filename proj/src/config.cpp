#include "misfit/config.hpp"

#include "misfit/hashing.hpp"

#include <yaml-cpp/yaml.h>

#include <algorithm>
#include <fstream>
#include <set>
#include <sstream>

namespace misfit {

namespace {

std::string position_prefix(const std::string& source, int line, int column) {
  std::ostringstream out;
  out << source;
  if (line > 0) out << ':' << line << ':' << column;
  return out.str();
}

class Reader {
 public:
  explicit Reader(std::string source) : source_(std::move(source)) {}

  [[noreturn]] void fail(const YAML::Node& node, const std::string& message) const {
    const YAML::Mark mark = node.Mark();
    if (mark.is_null()) throw ConfigError(source_, 0, 0, message);
    throw ConfigError(source_, mark.line + 1, mark.column + 1, message);
  }

  void require_map(const YAML::Node& node, const std::string& path) const {
    if (!node.IsMap()) fail(node, path + " must be a mapping");
  }

  void check_keys(const YAML::Node& map, const std::set<std::string>& allowed, const std::string& path) const {
    for (auto it = map.begin(); it != map.end(); ++it) {
      const std::string key = it->first.as<std::string>();
      if (!allowed.count(key)) {
        fail(it->first, "unknown key '" + (path.empty() ? key : path + "." + key) + "'");
      }
    }
  }

  template <class T>
  void read(const YAML::Node& map, const std::string& key, const std::string& path, T& out) const {
    const YAML::Node node = map[key];
    if (!node) return;
    if (!node.IsScalar()) fail(node, path + "." + key + " must be a scalar");
    try {
      out = node.as<T>();
    } catch (const YAML::Exception&) {
      fail(node, path + "." + key + ": cannot read '" + node.Scalar() + "'");
    }
  }

  template <class T>
  void read_list(const YAML::Node& map, const std::string& key, const std::string& path, std::vector<T>& out) const {
    const YAML::Node node = map[key];
    if (!node) return;
    if (!node.IsSequence()) fail(node, path + "." + key + " must be a list");
    out.clear();
    for (const YAML::Node& item : node) {
      try {
        out.push_back(item.as<T>());
      } catch (const YAML::Exception&) {
        fail(item, path + "." + key + ": cannot read list entry");
      }
    }
  }

  template <std::size_t N>
  std::array<double, N> read_array(const YAML::Node& node, const std::string& what) const {
    if (!node.IsSequence() || node.size() != N) fail(node, what + " must be a list of " + std::to_string(N) + " numbers");
    std::array<double, N> out{};
    for (std::size_t i = 0; i < N; ++i) {
      try {
        out[i] = node[i].as<double>();
      } catch (const YAML::Exception&) {
        fail(node[i], what + ": cannot read number");
      }
    }
    return out;
  }

  YAML::Node at(const YAML::Node& map, const std::string& key) const {
    const YAML::Node node = map[key];
    return node ? node : map;
  }

 private:
  std::string source_;
};

std::string quote(const std::string& s) {
  std::string out = "\"";
  for (char c : s) {
    if (c == '"' || c == '\\') out += '\\';
    out += c;
  }
  return out + "\"";
}

template <class T, class F>
std::string flow(const std::vector<T>& values, F format) {
  std::string out = "[";
  for (std::size_t i = 0; i < values.size(); ++i) out += (i ? ", " : "") + format(values[i]);
  return out + "]";
}

std::string num(double v) { return format_double(v); }

}  // namespace

ConfigError::ConfigError(const std::string& source, int line, int column, const std::string& message)
    : std::runtime_error(position_prefix(source, line, column) + ": " + message), line_(line), column_(column) {}

RunConfig parse_config(const std::string& text, const std::string& source) {
  YAML::Node root;
  try {
    root = YAML::Load(text);
  } catch (const YAML::ParserException& e) {
    throw ConfigError(source, e.mark.line + 1, e.mark.column + 1, e.msg);
  }
  Reader rd(source);
  RunConfig cfg;
  if (!root || root.IsNull()) return cfg;
  rd.require_map(root, "configuration");
  rd.check_keys(root, {"command", "output", "threads", "material", "geometry", "solver", "experiment"}, "");
  rd.read(root, "command", "", cfg.command);
  rd.read(root, "output", "", cfg.output);
  rd.read(root, "threads", "", cfg.threads);
  static const std::set<std::string> commands{"gamma", "sweep", "construct", "probe", "gammaconv"};
  if (!commands.count(cfg.command)) rd.fail(rd.at(root, "command"), "unknown command '" + cfg.command + "'");
  if (cfg.threads < 1) rd.fail(rd.at(root, "threads"), "threads must be at least 1");

  if (const YAML::Node m = root["material"]) {
    rd.require_map(m, "material");
    rd.check_keys(m, {"p", "alpha", "zeta"}, "material");
    rd.read(m, "p", "material", cfg.material.p);
    if (!(cfg.material.p >= 1.0 && cfg.material.p < 2.0)) rd.fail(m["p"], "material.p must lie in [1, 2)");
    if (m["alpha"] && m["zeta"]) rd.fail(m["zeta"], "material: give either alpha or zeta, not both");
    if (m["alpha"]) {
      double alpha = 0.0;
      rd.read(m, "alpha", "material", alpha);
      if (!(alpha >= 0.0 && alpha < 1.0)) {
        rd.fail(m["alpha"], "material.alpha = " + num(alpha) +
                                " is invalid: H = (1 - alpha) I needs det H > 0, so alpha must lie in [0, 1)");
      }
      cfg.material.alpha = alpha;
      cfg.material.zeta.reset();
    }
    if (m["zeta"]) {
      const auto zeta = rd.read_array<3>(m["zeta"], "material.zeta");
      for (double z : zeta) {
        if (!(z > 0.0)) rd.fail(m["zeta"], "material.zeta entries must be positive (det H > 0)");
      }
      cfg.material.zeta = zeta;
      cfg.material.alpha.reset();
    }
  }

  if (const YAML::Node g = root["geometry"]) {
    rd.require_map(g, "geometry");
    rd.check_keys(g, {"shape", "r", "M", "spacing", "dislocation"}, "geometry");
    GeometryBlock& geo = cfg.geometry;
    rd.read(g, "shape", "geometry", geo.shape);
    rd.read(g, "r", "geometry", geo.r);
    rd.read(g, "M", "geometry", geo.m);
    rd.read(g, "spacing", "geometry", geo.spacing);
    if (geo.shape != "disk" && geo.shape != "square") rd.fail(g["shape"], "geometry.shape must be disk or square");
    if (!(geo.r > 0.0)) rd.fail(rd.at(g, "r"), "geometry.r must be positive");
    if (!(geo.m > 0.0)) rd.fail(rd.at(g, "M"), "geometry.M must be positive");
    if (!(geo.spacing > 0.0)) rd.fail(rd.at(g, "spacing"), "geometry.spacing must be positive");
    if (const YAML::Node d = g["dislocation"]) {
      rd.require_map(d, "geometry.dislocation");
      rd.check_keys(d, {"id", "polygon", "burgers"}, "geometry.dislocation");
      DislocationBlock block;
      rd.read(d, "id", "geometry.dislocation", block.id);
      if (!d["polygon"] || !d["polygon"].IsSequence()) rd.fail(d, "geometry.dislocation.polygon must be a list");
      for (const YAML::Node& v : d["polygon"]) block.polygon.push_back(rd.read_array<2>(v, "polygon vertex"));
      if (block.polygon.size() < 3) rd.fail(d["polygon"], "geometry.dislocation.polygon needs at least 3 vertices");
      if (d["burgers"]) block.burgers = rd.read_array<3>(d["burgers"], "geometry.dislocation.burgers");
      geo.dislocation = block;
    }
  }

  if (const YAML::Node s = root["solver"]) {
    rd.require_map(s, "solver");
    rd.check_keys(s, {"grad_tol", "max_iter", "restarts", "seed", "perturbation"}, "solver");
    SolverBlock& sb = cfg.solver;
    rd.read(s, "grad_tol", "solver", sb.grad_tol);
    rd.read(s, "max_iter", "solver", sb.max_iter);
    rd.read(s, "restarts", "solver", sb.restarts);
    rd.read(s, "seed", "solver", sb.seed);
    rd.read(s, "perturbation", "solver", sb.perturbation);
    if (sb.max_iter < 0) rd.fail(s["max_iter"], "solver.max_iter must be non-negative");
    if (sb.restarts < 1) rd.fail(s["restarts"], "solver.restarts must be at least 1");
    if (!(sb.perturbation >= 0.0)) rd.fail(s["perturbation"], "solver.perturbation must be non-negative");
  }

  if (const YAML::Node e = root["experiment"]) {
    rd.require_map(e, "experiment");
    rd.check_keys(e,
                  {"m_sensitivity", "r_list", "cells_per_radius", "m_over_r", "mu_cells", "tiles_per_side",
                   "construction", "h_list", "h", "sigma_factor", "recovery_angle", "recovery_left_point",
                   "recovery_right_point", "recovery_block_half_length", "recovery_length", "minimize", "probe",
                   "probe_samples", "probe_cells", "probe_g"},
                  "experiment");
    ExperimentBlock& ex = cfg.experiment;
    const std::string p = "experiment";
    rd.read(e, "m_sensitivity", p, ex.m_sensitivity);
    rd.read_list(e, "r_list", p, ex.r_list);
    rd.read(e, "cells_per_radius", p, ex.cells_per_radius);
    rd.read(e, "m_over_r", p, ex.m_over_r);
    rd.read(e, "mu_cells", p, ex.mu_cells);
    rd.read_list(e, "tiles_per_side", p, ex.tiles_per_side);
    rd.read(e, "construction", p, ex.construction);
    rd.read_list(e, "h_list", p, ex.h_list);
    rd.read(e, "h", p, ex.h);
    rd.read(e, "sigma_factor", p, ex.sigma_factor);
    rd.read(e, "recovery_angle", p, ex.recovery_angle);
    rd.read(e, "recovery_left_point", p, ex.recovery_left_point);
    rd.read(e, "recovery_right_point", p, ex.recovery_right_point);
    rd.read(e, "recovery_block_half_length", p, ex.recovery_block_half_length);
    rd.read(e, "recovery_length", p, ex.recovery_length);
    rd.read(e, "minimize", p, ex.minimize);
    rd.read(e, "probe", p, ex.probe);
    rd.read(e, "probe_samples", p, ex.probe_samples);
    rd.read(e, "probe_cells", p, ex.probe_cells);
    rd.read(e, "probe_g", p, ex.probe_g);

    if (ex.r_list.empty()) rd.fail(rd.at(e, "r_list"), "experiment.r_list must not be empty");
    for (std::size_t i = 0; i < ex.r_list.size(); ++i) {
      if (!(ex.r_list[i] > 0.0) || (i > 0 && !(ex.r_list[i] > ex.r_list[i - 1]))) {
        rd.fail(rd.at(e, "r_list"), "experiment.r_list must be positive and increasing");
      }
    }
    if (ex.cells_per_radius < 4) rd.fail(rd.at(e, "cells_per_radius"), "experiment.cells_per_radius must be >= 4");
    if (!(ex.m_over_r > 0.0)) rd.fail(rd.at(e, "m_over_r"), "experiment.m_over_r must be positive");
    if (ex.mu_cells < 2) rd.fail(rd.at(e, "mu_cells"), "experiment.mu_cells must be >= 2");
    if (ex.tiles_per_side.empty()) rd.fail(rd.at(e, "tiles_per_side"), "experiment.tiles_per_side must not be empty");
    for (int k : ex.tiles_per_side) {
      if (k < 2) rd.fail(rd.at(e, "tiles_per_side"), "experiment.tiles_per_side entries must be >= 2");
    }
    static const std::set<std::string> constructions{"ramp", "tiles", "recovery"};
    if (!constructions.count(ex.construction)) {
      rd.fail(rd.at(e, "construction"), "experiment.construction must be ramp, tiles or recovery");
    }
    for (std::size_t i = 0; i < ex.h_list.size(); ++i) {
      if (!(ex.h_list[i] > 0.0 && ex.h_list[i] <= 1.0) || (i > 0 && !(ex.h_list[i] < ex.h_list[i - 1]))) {
        rd.fail(rd.at(e, "h_list"), "experiment.h_list must be decreasing values in (0, 1]");
      }
    }
    if (!(ex.h > 0.0 && ex.h <= 1.0)) rd.fail(rd.at(e, "h"), "experiment.h must lie in (0, 1]");
    if (!(ex.sigma_factor > 0.0)) rd.fail(rd.at(e, "sigma_factor"), "experiment.sigma_factor must be positive");
    if (!(ex.recovery_left_point < 0.0)) {
      rd.fail(rd.at(e, "recovery_left_point"), "experiment.recovery_left_point must be negative");
    }
    if (!(ex.recovery_right_point > 0.0)) {
      rd.fail(rd.at(e, "recovery_right_point"), "experiment.recovery_right_point must be positive");
    }
    if (!(ex.recovery_block_half_length > 0.0)) {
      rd.fail(rd.at(e, "recovery_block_half_length"), "experiment.recovery_block_half_length must be positive");
    }
    if (!(ex.recovery_length > 0.0)) rd.fail(rd.at(e, "recovery_length"), "experiment.recovery_length must be positive");
    static const std::set<std::string> probes{"all", "rigidity", "poincare", "pointwise"};
    if (!probes.count(ex.probe)) rd.fail(rd.at(e, "probe"), "experiment.probe must be all, rigidity, poincare or pointwise");
    if (ex.probe_samples < 10) rd.fail(rd.at(e, "probe_samples"), "experiment.probe_samples must be >= 10");
    if (ex.probe_cells < 4) rd.fail(rd.at(e, "probe_cells"), "experiment.probe_cells must be >= 4");
    if (!(ex.probe_g >= 0.0)) rd.fail(rd.at(e, "probe_g"), "experiment.probe_g must be non-negative");
  }
  if (cfg.command == "sweep" && cfg.experiment.r_list.size() < 4) {
    const YAML::Node e = root["experiment"];
    rd.fail(e ? rd.at(e, "r_list") : root, "sweep needs at least 4 radii in experiment.r_list");
  }
  return cfg;
}

RunConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError(path, 0, 0, "cannot open configuration file");
  std::stringstream buf;
  buf << in.rdbuf();
  return parse_config(buf.str(), path);
}

std::string to_text(const RunConfig& cfg) {
  std::ostringstream out;
  out << "command: " << cfg.command << '\n';
  out << "output: " << quote(cfg.output) << '\n';
  out << "threads: " << cfg.threads << '\n';
  out << "material:\n";
  out << "  p: " << num(cfg.material.p) << '\n';
  if (cfg.material.zeta) {
    const auto& z = *cfg.material.zeta;
    out << "  zeta: [" << num(z[0]) << ", " << num(z[1]) << ", " << num(z[2]) << "]\n";
  } else {
    out << "  alpha: " << num(cfg.material.alpha.value_or(0.0)) << '\n';
  }
  const GeometryBlock& g = cfg.geometry;
  out << "geometry:\n";
  out << "  shape: " << g.shape << '\n';
  out << "  r: " << num(g.r) << '\n';
  out << "  M: " << num(g.m) << '\n';
  out << "  spacing: " << num(g.spacing) << '\n';
  if (g.dislocation) {
    const DislocationBlock& d = *g.dislocation;
    out << "  dislocation:\n";
    out << "    id: " << quote(d.id) << '\n';
    out << "    polygon: "
        << flow(d.polygon, [](const std::array<double, 2>& v) { return "[" + num(v[0]) + ", " + num(v[1]) + "]"; })
        << '\n';
    out << "    burgers: [" << num(d.burgers[0]) << ", " << num(d.burgers[1]) << ", " << num(d.burgers[2]) << "]\n";
  }
  const SolverBlock& s = cfg.solver;
  out << "solver:\n";
  out << "  grad_tol: " << num(s.grad_tol) << '\n';
  out << "  max_iter: " << s.max_iter << '\n';
  out << "  restarts: " << s.restarts << '\n';
  out << "  seed: " << s.seed << '\n';
  out << "  perturbation: " << num(s.perturbation) << '\n';
  const ExperimentBlock& e = cfg.experiment;
  auto b = [](bool v) { return v ? "true" : "false"; };
  out << "experiment:\n";
  out << "  m_sensitivity: " << b(e.m_sensitivity) << '\n';
  out << "  r_list: " << flow(e.r_list, num) << '\n';
  out << "  cells_per_radius: " << e.cells_per_radius << '\n';
  out << "  m_over_r: " << num(e.m_over_r) << '\n';
  out << "  mu_cells: " << e.mu_cells << '\n';
  out << "  tiles_per_side: " << flow(e.tiles_per_side, [](int k) { return std::to_string(k); }) << '\n';
  out << "  construction: " << e.construction << '\n';
  out << "  h_list: " << flow(e.h_list, num) << '\n';
  out << "  h: " << num(e.h) << '\n';
  out << "  sigma_factor: " << num(e.sigma_factor) << '\n';
  out << "  recovery_angle: " << num(e.recovery_angle) << '\n';
  out << "  recovery_left_point: " << num(e.recovery_left_point) << '\n';
  out << "  recovery_right_point: " << num(e.recovery_right_point) << '\n';
  out << "  recovery_block_half_length: " << num(e.recovery_block_half_length) << '\n';
  out << "  recovery_length: " << num(e.recovery_length) << '\n';
  out << "  minimize: " << b(e.minimize) << '\n';
  out << "  probe: " << e.probe << '\n';
  out << "  probe_samples: " << e.probe_samples << '\n';
  out << "  probe_cells: " << e.probe_cells << '\n';
  out << "  probe_g: " << num(e.probe_g) << '\n';
  return out.str();
}

std::string config_hash(const RunConfig& cfg) { return hex64(hash_text(to_text(cfg))); }

ElasticModel model_from(const RunConfig& cfg) {
  const MaterialBlock& m = cfg.material;
  if (m.zeta) return ElasticModel(MismatchSpec::from_zeta(Vec3((*m.zeta)[0], (*m.zeta)[1], (*m.zeta)[2])), m.p);
  return ElasticModel(MismatchSpec::from_alpha(m.alpha.value_or(0.0)), m.p);
}

SolverConfig solver_from(const RunConfig& cfg) {
  SolverConfig s;
  s.grad_tol = cfg.solver.grad_tol;
  s.max_iter = cfg.solver.max_iter;
  s.restarts = cfg.solver.restarts;
  s.seed = cfg.solver.seed;
  s.perturbation = cfg.solver.perturbation;
  return s;
}

CrossSection section_from(const RunConfig& cfg) {
  return CrossSection{shape_from_string(cfg.geometry.shape), cfg.geometry.r};
}

}  // namespace misfit
