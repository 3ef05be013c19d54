#pragma once

#include "misfit/fields.hpp"

#include <cstdint>
#include <iosfwd>
#include <stdexcept>
#include <vector>

namespace misfit {

/// Thrown when the descent cannot continue (non-finite energy).
class SolverError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Affine end slabs: nodes in axial layers i <= slab_depth satisfy y = P x,
/// nodes in layers i >= n_axial - slab_depth satisfy y = Q x + t with one free
/// translation t.
struct EndClamp {
  Mat3 p = Mat3::Identity();
  Mat3 q = Mat3::Identity();
  int slab_depth = 1;
};

/// Weight of the gradient-fluctuation term in the cell energy.
inline constexpr double kDefaultFluctuationWeight = 1.0;

struct SolverConfig {
  /// Stopping threshold on the stress-normalised gradient; <= 0 selects
  /// 1e-6 * sqrt(cell count).
  double grad_tol = 0.0;
  int max_iter = 50000;
  double backtrack = 0.5;
  double armijo = 1e-4;
  int memory = 8;
  std::uint64_t seed = 1;
  int restarts = 3;
  /// Restart perturbation amplitude in units of the smallest grid spacing.
  double perturbation = 0.05;
  /// Progress record every n iterations to `log` (0 disables).
  int log_every = 0;
  std::ostream* log = nullptr;
  /// Strain column scale and fluctuation weight passed to EnergyAssembler.
  Vec3 column_scale = Vec3::Ones();
  double fluctuation_weight = kDefaultFluctuationWeight;
};

struct MinimizationResult {
  double energy = 0.0;
  int iterations = 0;
  double grad_norm = 0.0;
  DisplacementField field;
  bool converged = false;
  std::vector<double> history;
  std::vector<double> restart_energies;
};

/// Cell energy  V W(G diag(s)) + w * integral |(grad y - G) diag(s)|^2  where G
/// is the cell-averaged gradient of the trilinear interpolant and s the column
/// scale (s = (1, 1/h, 1/h) evaluates F_h). The second term removes the
/// zero-energy hourglass modes of one-point quadrature and vanishes on affine
/// fields.
class EnergyAssembler {
 public:
  EnergyAssembler(std::shared_ptr<const Grid> grid, std::shared_ptr<const JumpSet> jumps,
                  ElasticModel model, Vec3 column_scale = Vec3::Ones(),
                  double fluctuation_weight = kDefaultFluctuationWeight);

  const Grid& grid() const { return *grid_; }
  const ElasticModel& model() const { return model_; }

  /// Total energy; fills the nodal gradient when `gradient` is non-null.
  double evaluate(const std::vector<Vec3>& y, std::vector<Vec3>* gradient) const;
  /// Per-cell energies (density times cell volume).
  std::vector<double> cell_energies(const std::vector<Vec3>& y) const;
  Phase phase(std::size_t cell) const { return phases_[cell]; }

 private:
  std::shared_ptr<const Grid> grid_;
  std::shared_ptr<const JumpSet> jumps_;
  ElasticModel model_;
  Vec3 column_scale_;
  double fluctuation_weight_;
  // fluctuation term restricted to the four hourglass modes
  Eigen::Matrix4d hourglass_;
  std::vector<Phase> phases_;
  std::vector<const Vec3*> jump_of_cell_;
  std::vector<int> node_cell_offsets_;
  std::vector<std::pair<int, int>> node_cells_;
};

/// Sum over masked cells of the cell energy of EnergyAssembler.
double total_energy(const DisplacementField& u, const ElasticModel& model,
                    double fluctuation_weight = kDefaultFluctuationWeight);

/// Exact gradient of total_energy with respect to nodal positions; entries of
/// clamped nodes are zeroed when a clamp is given.
std::vector<Vec3> total_gradient(const DisplacementField& u, const ElasticModel& model,
                                 const EndClamp* clamp = nullptr,
                                 double fluctuation_weight = kDefaultFluctuationWeight);

/// ||g||_inf * min spacing / cell volume (a stress-like measure).
double normalized_gradient_norm(const Grid& grid, const std::vector<Vec3>& gradient);

/// True where the node belongs to the left or right slab.
bool in_left_slab(const Grid& grid, int node, const EndClamp& clamp);
bool in_right_slab(const Grid& grid, int node, const EndClamp& clamp);

/// Field with y = P x in the left slab and y = Q x + translation in the right
/// slab, other nodes from `u`.
DisplacementField apply_clamp(const DisplacementField& u, const EndClamp& clamp, const Vec3& translation);

/// Limited-memory quasi-Newton descent with Armijo backtracking over the free
/// nodes and the right slab translation.
MinimizationResult minimize(const DisplacementField& u0, const EndClamp& clamp, const SolverConfig& cfg,
                            const ElasticModel& model);

/// Runs minimize from u0 and from cfg.restarts - 1 seeded perturbations of it;
/// keeps the lowest energy and records all restart energies.
MinimizationResult minimize_with_restarts(const DisplacementField& u0, const EndClamp& clamp,
                                          const SolverConfig& cfg, const ElasticModel& model);

}  // namespace misfit
