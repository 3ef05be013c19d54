#pragma once

#include "misfit/material.hpp"

#include <Eigen/Core>

#include <array>
#include <cstdint>
#include <memory>
#include <string>
#include <vector>

namespace misfit {

using Vec2 = Eigen::Vector2d;
using Polygon = std::vector<Vec2>;

enum class Shape { disk, square };

std::string to_string(Shape shape);
Shape shape_from_string(const std::string& name);

/// Disk S_r = {x2^2 + x3^2 < r^2} or square Q_r = (-r, r)^2.
struct CrossSection {
  Shape shape = Shape::disk;
  double half_extent = 1.0;

  bool contains(const Vec2& p) const;
};

/// A masked hexahedral cell. Local node n has offsets (n >> 2 & 1, n >> 1 & 1, n & 1)
/// along (x1, x2, x3).
struct Cell {
  int i = 0;
  int j = 0;
  int k = 0;
  std::array<int, 8> nodes{};
  Vec3 center = Vec3::Zero();
};

/// Regular grid of (-M, M) x cross-section. Axial spacing may differ from the
/// cross-sectional spacing (used by the thin-domain rescaling); build_grid
/// produces isotropic grids. Node and cell indices are lexicographic in
/// (i1, i2, i3). The interface plane x1 = 0 is the node layer n_axial / 2.
class Grid {
 public:
  Grid(CrossSection cross_section, double axial_half_length, double axial_spacing,
       double cross_spacing);

  const CrossSection& cross_section() const { return cross_section_; }
  double axial_half_length() const { return axial_half_length_; }
  double axial_spacing() const { return axial_spacing_; }
  double cross_spacing() const { return cross_spacing_; }
  double min_spacing() const;
  double cell_volume() const { return axial_spacing_ * cross_spacing_ * cross_spacing_; }

  int n_axial() const { return n_axial_; }
  int n_cross() const { return n_cross_; }
  int interface_layer() const { return n_axial_ / 2; }

  int node_count() const { return (n_axial_ + 1) * (n_cross_ + 1) * (n_cross_ + 1); }
  int node_index(int i, int j, int k) const { return (i * (n_cross_ + 1) + j) * (n_cross_ + 1) + k; }
  std::array<int, 3> node_multi_index(int node) const;
  Vec3 node_position(int node) const;
  Vec3 node_position(int i, int j, int k) const;
  bool node_active(int node) const { return node_active_[static_cast<std::size_t>(node)] != 0; }

  double axial_coordinate(int i) const { return -axial_half_length_ + i * axial_spacing_; }
  double cross_coordinate(int j) const { return cross_origin_ + j * cross_spacing_; }

  /// Cross-sectional cell (j, k) is inside the section (same for every layer).
  bool cross_masked(int j, int k) const { return cross_mask_[static_cast<std::size_t>(j * n_cross_ + k)] != 0; }
  int cross_cell_count() const;
  Vec2 cross_cell_center(int j, int k) const;

  const std::vector<Cell>& cells() const { return cells_; }
  std::size_t cell_count() const { return cells_.size(); }

  /// Cell-averaged gradients of the eight trilinear shape functions.
  const std::array<Vec3, 8>& shape_gradients() const { return shape_gradients_; }

  /// Stable 64-bit fingerprint of the grid parameters.
  std::uint64_t hash() const;

 private:
  CrossSection cross_section_;
  double axial_half_length_;
  double axial_spacing_;
  double cross_spacing_;
  int n_axial_ = 0;
  int n_cross_ = 0;
  double cross_origin_ = 0.0;
  std::vector<char> cross_mask_;
  std::vector<char> node_active_;
  std::vector<Cell> cells_;
  std::array<Vec3, 8> shape_gradients_{};
};

/// Isotropic grid. Requires spacing to divide M, half_extent >= 2 spacing and
/// at least 4 cells across every extent.
Grid build_grid(const CrossSection& cross_section, double axial_half_length, double spacing);
std::shared_ptr<const Grid> make_grid(const CrossSection& cross_section, double axial_half_length,
                                      double spacing);

/// A planar dislocation: displacement jump `burgers` (the scaled vector hb)
/// across the interface faces enclosed by `curve`. Faces are cross-cell
/// linear indices j * n_cross + k, sorted.
struct DislocationSpec {
  std::string id;
  Vec3 burgers = Vec3::Zero();
  Polygon curve;
  std::vector<int> faces;
  std::string warning;

  double scale() const { return burgers.norm(); }
};

/// Even-odd rasterisation of a closed simple polygon at x1 = 0 using face
/// centres (a centre lying on the polygon counts as inside).
DislocationSpec rasterize_dislocation(const Polygon& curve, const Grid& grid, const Vec3& burgers,
                                      std::string id = "gamma");

/// Independent jump surfaces with pairwise disjoint face sets.
class JumpSet {
 public:
  JumpSet() = default;
  JumpSet(const Grid& grid, std::vector<DislocationSpec> surfaces);

  const std::vector<DislocationSpec>& surfaces() const { return surfaces_; }
  bool empty() const { return surfaces_.empty(); }
  /// Surface owning cross face (j, k), or -1.
  int owner(int j, int k) const;
  const Vec3& burgers(int surface) const { return surfaces_[static_cast<std::size_t>(surface)].burgers; }
  std::uint64_t hash() const;

 private:
  int n_cross_ = 0;
  std::vector<DislocationSpec> surfaces_;
  std::vector<int> owner_;
};

/// Point-in-polygon by the even-odd rule; points on an edge are inside.
bool polygon_contains(const Polygon& polygon, const Vec2& p);
double polygon_area(const Polygon& polygon);
bool polygon_is_simple(const Polygon& polygon);

/// Regular n-gon approximating a circle.
Polygon circle_polygon(const Vec2& center, double radius, int vertices = 256);
Polygon square_polygon(const Vec2& center, double half_side);

/// Closed path along grid edges, as node multi-indices (i, j, k); the first
/// and last entries coincide.
using LatticeLoop = std::vector<std::array<int, 3>>;

/// Axis-aligned rectangular loop in the (x1, x2) plane at cross index k. It
/// runs from layer i_lo to i_hi at j = j_a, then back at j = j_b; it crosses
/// the interface left to right at j_a and right to left at j_b.
LatticeLoop rectangular_loop(int i_lo, int i_hi, int j_a, int j_b, int k);

/// Loop that crosses the interface left to right at cross cell-corner `from`
/// and returns right to left at `to`, moving through the cross-section on the
/// layers i_hi (right) and i_lo (left) along monotone staircase paths.
LatticeLoop crossing_loop(int i_lo, int i_hi, std::array<int, 2> from, std::array<int, 2> to);

/// Concatenation of two closed loops sharing a start node.
LatticeLoop concatenate(const LatticeLoop& first, const LatticeLoop& second);

}  // namespace misfit
