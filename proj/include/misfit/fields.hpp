#pragma once

#include "misfit/geometry.hpp"

#include <functional>
#include <iosfwd>
#include <memory>
#include <vector>

namespace misfit {

/// Nodal deformation on a grid. `values` holds the deformed positions
/// y(x) = x + u(x); at interface nodes the stored value is the trace from the
/// left phase, and the right trace over a jump face is value + burgers.
class DisplacementField {
 public:
  /// Empty placeholder without a grid.
  DisplacementField() = default;
  explicit DisplacementField(std::shared_ptr<const Grid> grid,
                             std::shared_ptr<const JumpSet> jumps = nullptr);

  /// y = map(x) at every node.
  static DisplacementField from_map(std::shared_ptr<const Grid> grid,
                                    std::shared_ptr<const JumpSet> jumps,
                                    const std::function<Vec3(const Vec3&)>& map);

  const Grid& grid() const { return *grid_; }
  const std::shared_ptr<const Grid>& grid_ptr() const { return grid_; }
  const JumpSet* jumps() const { return jumps_.get(); }
  const std::shared_ptr<const JumpSet>& jumps_ptr() const { return jumps_; }

  std::vector<Vec3>& values() { return values_; }
  const std::vector<Vec3>& values() const { return values_; }
  Vec3 displacement(int node) const;

  /// Throws if any value is non-finite.
  void validate() const;

 private:
  std::shared_ptr<const Grid> grid_;
  std::shared_ptr<const JumpSet> jumps_;
  std::vector<Vec3> values_;
};

struct StrainField {
  std::shared_ptr<const Grid> grid;
  std::vector<Mat3> cells;
};

/// F_h = (F^1 | F^2 / h | F^3 / h) per cell.
struct RescaledField {
  std::shared_ptr<const Grid> grid;
  double h = 1.0;
  std::vector<Mat3> cells;
};

/// Burgers vector added to the axial-offset-0 nodes of `cell`, or nullptr
/// when the cell does not sit on a jump face from the right.
const Vec3* cell_jump(const Grid& grid, const JumpSet* jumps, const Cell& cell);

/// Averaged trilinear gradient of the positions over one cell.
Mat3 cell_gradient(const Grid& grid, const Cell& cell, const std::vector<Vec3>& y, const Vec3* jump);

StrainField strain(const DisplacementField& u);

using NodeMatrix = Eigen::Matrix<double, 8, 8>;

/// Matrix K of the cell quadratic form
///   sum_nm K_nm y_n . y_m = integral over a cell of |(grad y - G) diag(s)|^2
/// for the trilinear interpolant y, where G is its cell average and s the
/// column scale. K annihilates affine nodal data.
NodeMatrix gradient_fluctuation_matrix(const Grid& grid, const Vec3& column_scale = Vec3::Ones());

RescaledField rescale(const StrainField& f, double h);

/// Moves nodal positions between conforming grids of the thin domain and of
/// the fixed domain (z1 = x1, z' = h x'). Values are copied index by index.
DisplacementField change_of_variables(const DisplacementField& u,
                                      std::shared_ptr<const Grid> target);

/// Thin-domain grid with the same node lattice as `grid` and cross extent
/// scaled by h.
std::shared_ptr<const Grid> thin_grid(const Grid& grid, double h);

/// Discrete line integral of the elastic strain along a closed lattice loop.
/// Equals minus the Burgers content linked by the loop.
Vec3 burgers_circuit(const DisplacementField& u, const LatticeLoop& loop);

/// Text serialisation with a header carrying the grid hash, h and jump id.
void write_field(std::ostream& out, const DisplacementField& u, double h = 1.0);
DisplacementField read_field(std::istream& in, std::shared_ptr<const Grid> grid,
                             std::shared_ptr<const JumpSet> jumps = nullptr);

}  // namespace misfit
