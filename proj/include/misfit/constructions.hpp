#pragma once

#include "misfit/solver.hpp"

#include <string>
#include <utility>
#include <vector>

namespace misfit {

/// Named energy contributions of a construction.
using EnergyBreakdown = std::vector<std::pair<std::string, double>>;

struct ConstructionResult {
  DisplacementField field;
  double energy = 0.0;
  EnergyBreakdown breakdown;
  std::vector<std::string> warnings;

  double part(const std::string& name) const;
};

/// |H - I| (Frobenius), the mismatch size used by the ramp bounds.
double mismatch_delta(const ElasticModel& model);

/// y = phi(x1) x + (1 - phi(x1)) H x with phi = 1 for x1 <= -radius/2, 0 for
/// x1 >= radius/2 and affine in between.
struct RampSpec {
  double radius = 1.0;
};

ConstructionResult mismatch_ramp(const RampSpec& spec, std::shared_ptr<const Grid> grid,
                                 const ElasticModel& model);

/// Gluing of k x k translated copies of one transition field on Q_r. Tile
/// copies live on squares of half-side s = (r + (k - 1) mu) / k which overlap
/// neighbours on stripes of width 2 mu; k = 2 gives the four quadrants.
struct TileGlueSpec {
  double r = 1.0;
  double mu = 0.125;
  /// Axial half-length over which the blending stripes open up to width 2 mu.
  double transition_half_length = 1.0;
  int tiles_per_side = 2;
};

struct TileLayout {
  int k = 2;
  double r = 0.0;
  double mu = 0.0;
  double half_side = 0.0;          // s
  std::vector<double> centers;     // shifted tile centres along one axis
  std::vector<double> boundaries;  // nominal tile boundaries, size k + 1, from -r to r
  Mat3 h = Mat3::Identity();

  /// Shifted centre (0, c_a, c_b) of tile (a, b).
  Vec3 center(int a, int b) const;
  /// Reference tile (0, k - 1), the one carrying no jump.
  static constexpr int reference_a = 0;
  int reference_b() const { return k - 1; }
  /// (H - I)(centre(a, b) - centre(reference)).
  Vec3 burgers(int a, int b) const;
  /// Tile index along one axis whose nominal interval contains coordinate y
  /// (upper tile on a boundary).
  int tile_of(double y) const;
};

TileLayout tile_layout(const TileGlueSpec& spec, const Mat3& h);

/// Grid of the tile base field: square of half-side s with the same axial
/// extent and spacing as `full`.
std::shared_ptr<const Grid> tile_base_grid(const TileGlueSpec& spec, const Grid& full);

/// Jump surfaces of the glued field: one per non-reference tile, with the
/// faces of its nominal square.
std::shared_ptr<const JumpSet> tile_jump_set(const TileLayout& layout, const Grid& grid);

/// Glues copies of `base` (defined on tile_base_grid) over the square grid.
/// The breakdown separates cells carrying a single tile copy ("tiles") from
/// blended cells ("sectors") and records k^2 times the base energy.
ConstructionResult glued_tile_field(const TileGlueSpec& spec, std::shared_ptr<const Grid> grid,
                                    const DisplacementField& base, const ElasticModel& model);

/// Geodesic R0 exp(t log(R0^T R1)). At a relative angle of pi the axis is taken
/// from the symmetric part, oriented so that its first non-zero entry is
/// positive.
Mat3 rotation_path(const Mat3& r0, const Mat3& r1, double t);

/// Rodrigues rotation about `axis` (normalised internally) by `angle`.
Mat3 rotation_about(const Vec3& axis, double angle);

/// Piecewise constant limit profile: rotations R_0..R_n on the left with
/// switch points a_1 < .. < a_n < 0, matrices S_0..S_k in SO(3)H on the right
/// with switch points 0 < b_1 < .. < b_k.
struct RecoveryProfile {
  std::vector<double> left_points;
  std::vector<Mat3> left_rotations;
  std::vector<double> right_points;
  std::vector<Mat3> right_matrices;
};

/// Interface block: a transition field on (-M_v, M_v) x S with isotropic
/// spacing a_v, clamped to R_n on the left and S_0 (plus a translation) on the
/// right.
struct RecoverySpec {
  RecoveryProfile profile;
  double h = 0.125;
  double sigma = 0.35;
  double length = 1.0;  // L, the rod occupies (-L, L)
  DisplacementField block;
  double block_energy = 0.0;
};

/// Recovery field on the fixed domain (-L, L) x S with axial spacing h a_v and
/// cross spacing a_v. energy is (1/h) times the elastic energy evaluated with
/// the F_h rule; the breakdown holds "bands", "block" and "rigid" parts.
ConstructionResult recovery_sequence(const RecoverySpec& spec, const ElasticModel& model);

/// (1/h) integral of the F_h energy of a fixed-domain field.
double rescaled_energy(const DisplacementField& u, double h, const ElasticModel& model);

/// Same quantity via the thin domain: energy of the field moved to the thin
/// grid divided by h^3.
double rescaled_energy_thin(const DisplacementField& u, double h, const ElasticModel& model);

/// Checks that two fields agree at every active node to `tol`.
double max_node_difference(const DisplacementField& a, const DisplacementField& b);

}  // namespace misfit
