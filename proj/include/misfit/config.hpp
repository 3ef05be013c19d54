#pragma once

#include "misfit/experiments.hpp"

#include <array>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

namespace misfit {

/// Configuration problem with a 1-based source position (0 when unknown).
class ConfigError : public std::runtime_error {
 public:
  ConfigError(const std::string& source, int line, int column, const std::string& message);
  int line() const { return line_; }
  int column() const { return column_; }

 private:
  int line_;
  int column_;
};

struct MaterialBlock {
  double p = 1.5;
  /// Exactly one of alpha and zeta is set.
  std::optional<double> alpha = 0.05;
  std::optional<std::array<double, 3>> zeta;

  bool operator==(const MaterialBlock&) const = default;
};

struct DislocationBlock {
  std::string id = "gamma";
  std::vector<std::array<double, 2>> polygon;
  std::array<double, 3> burgers{0.0, 0.0, 0.0};

  bool operator==(const DislocationBlock&) const = default;
};

struct GeometryBlock {
  std::string shape = "square";
  double r = 1.0;
  double m = 1.0;
  double spacing = 0.125;
  std::optional<DislocationBlock> dislocation;

  bool operator==(const GeometryBlock&) const = default;
};

struct SolverBlock {
  double grad_tol = 0.0;
  int max_iter = 50000;
  int restarts = 3;
  std::uint64_t seed = 1;
  double perturbation = 0.05;

  bool operator==(const SolverBlock&) const = default;
};

struct ExperimentBlock {
  // gamma
  bool m_sensitivity = false;
  // sweep
  std::vector<double> r_list{1.0, 2.0, 4.0, 8.0};
  int cells_per_radius = 16;
  double m_over_r = 1.0;
  int mu_cells = 2;
  std::vector<int> tiles_per_side{2, 4};
  // construct: ramp | tiles | recovery
  std::string construction = "ramp";
  // gammaconv and construct recovery
  std::vector<double> h_list{0.125, 0.0625, 0.03125};
  double h = 0.125;
  double sigma_factor = 1.0;
  double recovery_angle = 0.02;
  double recovery_left_point = -0.625;
  double recovery_right_point = 0.625;
  double recovery_block_half_length = 2.0;  // in units of r
  double recovery_length = 1.0;
  bool minimize = true;
  // probe: all | rigidity | poincare | pointwise
  std::string probe = "all";
  int probe_samples = 100;
  int probe_cells = 8;
  double probe_g = 5.0;

  bool operator==(const ExperimentBlock&) const = default;
};

struct RunConfig {
  std::string command = "gamma";
  std::string output = "out";
  int threads = 1;
  MaterialBlock material;
  GeometryBlock geometry;
  SolverBlock solver;
  ExperimentBlock experiment;

  bool operator==(const RunConfig&) const = default;
};

/// Parses YAML text. Unknown keys, wrong types and invalid values raise
/// ConfigError with the position of the offending node.
RunConfig parse_config(const std::string& text, const std::string& source = "<config>");
RunConfig load_config(const std::string& path);

/// Canonical text: every key, fixed order, shortest round-trip numbers.
std::string to_text(const RunConfig& cfg);

/// FNV-1a of the canonical text, 16 hex digits.
std::string config_hash(const RunConfig& cfg);

ElasticModel model_from(const RunConfig& cfg);
SolverConfig solver_from(const RunConfig& cfg);
CrossSection section_from(const RunConfig& cfg);

}  // namespace misfit
