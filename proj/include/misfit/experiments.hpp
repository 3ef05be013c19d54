#pragma once

#include "misfit/constructions.hpp"

#include <json.hpp>

#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

namespace misfit {

/// Raised when a minimised dislocated field no longer carries its prescribed
/// Burgers vectors.
class ConstraintError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

enum class EstimateKind { elastic, dislocated };
std::string to_string(EstimateKind kind);

/// (E_M, E_2M, E_4M) from successive clamped extensions of the minimiser.
struct MTriple {
  double e_m = 0.0;
  double e_2m = 0.0;
  double e_4m = 0.0;

  double first_gap() const { return e_m - e_2m; }
  double second_gap() const { return e_2m - e_4m; }
};

struct GammaEstimate {
  EstimateKind kind = EstimateKind::elastic;
  CrossSection cross_section;
  double m = 0.0;
  double spacing = 0.0;
  std::string dislocation_id;
  double energy = 0.0;  // min of restart energies
  std::vector<double> restart_energies;
  std::optional<MTriple> m_triple;
  bool converged = false;
  int iterations = 0;
  double grad_norm = 0.0;
  double initial_energy = 0.0;  // energy of the starting construction
  EnergyBreakdown construction;
  double circuit_error = 0.0;  // worst Burgers circuit deviation on the final field
  DisplacementField field;

  double r() const { return cross_section.half_extent; }
};

/// Clamps (frame, frame H) and the ramp rotated by `frame` as start.
struct ElasticOptions {
  Mat3 frame = Mat3::Identity();
  bool m_sensitivity = false;
};

/// Transition energy without dislocation on (-M, M) x section, spacing a.
GammaEstimate gamma_elastic(const CrossSection& section, double m, double spacing, const ElasticModel& model,
                            const SolverConfig& cfg, const ElasticOptions& options = {});

/// Transition energy with k x k glued tiles on Q_r, started from the glued
/// field built on the tile base minimiser. `base` is reused when given.
GammaEstimate gamma_dislocated(const TileGlueSpec& tiles, double m, double spacing, const ElasticModel& model,
                               const SolverConfig& cfg, const GammaEstimate* base = nullptr);

/// Transition energy with explicit jump surfaces, started from the ramp.
GammaEstimate gamma_dislocated(const CrossSection& section, double m, double spacing,
                               const std::vector<DislocationSpec>& surfaces, const ElasticModel& model,
                               const SolverConfig& cfg);

/// Largest deviation |circuit + b_s| over loops linking each surface once
/// (interior node of the surface to a nearby node outside every surface).
/// Surfaces without an interior node are skipped.
double circuit_deviation(const DisplacementField& u);

struct CrossoverRow {
  double r = 0.0;
  double spacing = 0.0;
  double mu = 0.0;
  double elastic = 0.0;  // gamma / r^3
  double dislocated = 0.0;  // best over tile counts, / r^3
  int best_tiles = 0;
  std::vector<std::pair<int, double>> by_tiles;  // (tiles per side, gamma / r^3)
  std::vector<std::pair<int, double>> construction_by_tiles;  // glued field energy / r^3
};

struct CrossoverOptions {
  int cells_per_radius = 16;
  double m_over_r = 1.0;
  /// mu in grid cells (mu = mu_cells * a).
  int mu_cells = 2;
  std::vector<int> tiles_per_side{2, 4};
};

struct CrossoverResult {
  std::vector<CrossoverRow> rows;
  std::optional<double> crossover_radius;
  double elastic_spread = 0.0;  // max |elastic / mean - 1|
};

/// Square sections, r-sweep at fixed cells per radius.
CrossoverResult crossover_sweep(const std::vector<double>& r_list, const ElasticModel& model,
                                const SolverConfig& cfg, const CrossoverOptions& options = {});

struct RotationInvarianceResult {
  double reference = 0.0;
  std::vector<double> rotated;
  double max_relative_deviation = 0.0;
};

RotationInvarianceResult rotation_invariance_check(const std::vector<Mat3>& rotations, const CrossSection& section,
                                                   double m, double spacing, const ElasticModel& model,
                                                   const SolverConfig& cfg);

/// Random proper rotations from a seeded generator (uniform quaternions).
std::vector<Mat3> random_rotations(int count, std::uint64_t seed);

/// Two-switch profile around the interface block: R_0 = rotation by `angle`
/// about e2 switching to I at left_point, H switching to (rotation) H at
/// right_point. The block is the elastic minimiser on
/// (-block_half_length r, block_half_length r) x section with spacing `spacing`.
struct RecoverySetup {
  double angle = 0.02;
  double left_point = -0.625;
  double right_point = 0.625;
  double block_half_length = 2.0;
  double spacing = 0.125;
  double length = 1.0;
  double h = 0.125;
  double sigma_factor = 1.0;
};

/// RecoverySpec with profile and block filled in; `block_out` receives the block
/// estimate (the standalone gamma value) when given.
RecoverySpec recovery_setup(const CrossSection& section, const RecoverySetup& setup, const ElasticModel& model,
                            const SolverConfig& cfg, GammaEstimate* block_out = nullptr);

struct TrendRow {
  double h = 0.0;
  double sigma = 0.0;
  double recovery = 0.0;        // (1/h) I^h of the recovery field
  double recovery_thin = 0.0;   // same via the thin domain
  double bands = 0.0;
  double band_constant = 0.0;   // bands * sigma / h
  double minimized = 0.0;       // after descent from the recovery field
  int iterations = 0;
};

struct TrendOptions {
  /// sigma = sigma_factor * sqrt(h)
  double sigma_factor = 1.0;
  SolverConfig minimizer;
  bool minimize = true;
};

/// Recovery energies for each h; `base` carries profile, block and length.
std::vector<TrendRow> gamma_convergence_trend(const std::vector<double>& h_list, const RecoverySpec& base,
                                              const ElasticModel& model, const TrendOptions& options);

// ---------------------------------------------------------------------------
// persistence

struct ExperimentRecord {
  std::string name;
  std::string config_hash;
  std::uint64_t seed = 0;
  std::string content_id;  // fingerprint of the inputs
  nlohmann::json payload;
  double wall_clock_seconds = 0.0;  // reported on stderr only, never written
};

nlohmann::json to_json(const GammaEstimate& estimate);
nlohmann::json to_json(const CrossoverResult& result);
nlohmann::json to_json(const std::vector<TrendRow>& rows);

/// Writes <dir>/<name>.json.
void write_record(const std::string& dir, const ExperimentRecord& record);

/// CSV table with a leading "# config_hash" comment line.
void write_csv(const std::string& path, const std::string& config_hash, const std::vector<std::string>& header,
               const std::vector<std::vector<double>>& rows);

/// Plot data: "# config_hash", "# x y" then one pair per line.
void write_plot_data(const std::string& path, const std::string& config_hash, const std::string& x_label,
                     const std::string& y_label, const std::vector<std::pair<double, double>>& points);

/// Shortest decimal text that parses back to the same double.
std::string format_double(double v);

}  // namespace misfit
