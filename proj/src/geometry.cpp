#include "misfit/geometry.hpp"

#include "misfit/hashing.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <sstream>

namespace misfit {

namespace {

constexpr double kTol = 1e-9;

int as_integer_ratio(double numerator, double denominator, const char* what) {
  const double q = numerator / denominator;
  const double r = std::round(q);
  if (std::abs(q - r) > kTol * std::max(1.0, std::abs(q))) {
    std::ostringstream msg;
    msg << what << ": " << denominator << " does not divide " << numerator;
    throw InvalidArgument(msg.str());
  }
  return static_cast<int>(r);
}

bool on_segment(const Vec2& a, const Vec2& b, const Vec2& p) {
  const Vec2 ab = b - a;
  const Vec2 ap = p - a;
  const double cross = ab.x() * ap.y() - ab.y() * ap.x();
  const double scale = std::max(1.0, ab.squaredNorm());
  if (std::abs(cross) > 1e-12 * scale) return false;
  const double t = ab.dot(ap);
  return t >= -1e-12 * scale && t <= ab.squaredNorm() * (1.0 + 1e-12);
}

double orient(const Vec2& a, const Vec2& b, const Vec2& c) {
  return (b.x() - a.x()) * (c.y() - a.y()) - (b.y() - a.y()) * (c.x() - a.x());
}

bool segments_intersect(const Vec2& a, const Vec2& b, const Vec2& c, const Vec2& d) {
  const double o1 = orient(a, b, c);
  const double o2 = orient(a, b, d);
  const double o3 = orient(c, d, a);
  const double o4 = orient(c, d, b);
  if (((o1 > 0 && o2 < 0) || (o1 < 0 && o2 > 0)) && ((o3 > 0 && o4 < 0) || (o3 < 0 && o4 > 0))) {
    return true;
  }
  return on_segment(a, b, c) || on_segment(a, b, d) || on_segment(c, d, a) || on_segment(c, d, b);
}

Polygon strip_closing_vertex(Polygon polygon) {
  if (polygon.size() > 1 && (polygon.front() - polygon.back()).norm() == 0.0) polygon.pop_back();
  return polygon;
}

}  // namespace

std::string to_string(Shape shape) { return shape == Shape::disk ? "disk" : "square"; }

Shape shape_from_string(const std::string& name) {
  if (name == "disk") return Shape::disk;
  if (name == "square") return Shape::square;
  throw InvalidArgument("unknown cross-section shape '" + name + "' (expected disk or square)");
}

bool CrossSection::contains(const Vec2& p) const {
  if (shape == Shape::disk) return p.squaredNorm() < half_extent * half_extent;
  return std::abs(p.x()) < half_extent && std::abs(p.y()) < half_extent;
}

Grid::Grid(CrossSection cross_section, double axial_half_length, double axial_spacing,
           double cross_spacing)
    : cross_section_(cross_section),
      axial_half_length_(axial_half_length),
      axial_spacing_(axial_spacing),
      cross_spacing_(cross_spacing) {
  if (!(axial_spacing > 0.0) || !(cross_spacing > 0.0) || !(axial_half_length > 0.0) ||
      !(cross_section.half_extent > 0.0)) {
    throw InvalidArgument("grid: spacings, M and the cross-section half extent must be positive");
  }
  n_axial_ = 2 * as_integer_ratio(axial_half_length, axial_spacing, "grid axial extent");
  if (cross_section.shape == Shape::square) {
    n_cross_ = as_integer_ratio(2.0 * cross_section.half_extent, cross_spacing, "grid cross extent");
  } else {
    n_cross_ = static_cast<int>(std::ceil(2.0 * cross_section.half_extent / cross_spacing - kTol));
  }
  if (n_axial_ < 4 || n_cross_ < 4) {
    throw InvalidArgument("grid under-resolved: fewer than 4 cells across the smallest extent");
  }
  cross_origin_ = -0.5 * n_cross_ * cross_spacing_;

  cross_mask_.assign(static_cast<std::size_t>(n_cross_ * n_cross_), 0);
  for (int j = 0; j < n_cross_; ++j) {
    for (int k = 0; k < n_cross_; ++k) {
      cross_mask_[static_cast<std::size_t>(j * n_cross_ + k)] =
          cross_section_.contains(cross_cell_center(j, k)) ? 1 : 0;
    }
  }

  node_active_.assign(static_cast<std::size_t>(node_count()), 0);
  for (int i = 0; i < n_axial_; ++i) {
    for (int j = 0; j < n_cross_; ++j) {
      for (int k = 0; k < n_cross_; ++k) {
        if (!cross_masked(j, k)) continue;
        Cell cell;
        cell.i = i;
        cell.j = j;
        cell.k = k;
        for (int n = 0; n < 8; ++n) {
          const int node = node_index(i + ((n >> 2) & 1), j + ((n >> 1) & 1), k + (n & 1));
          cell.nodes[static_cast<std::size_t>(n)] = node;
          node_active_[static_cast<std::size_t>(node)] = 1;
        }
        cell.center = Vec3(axial_coordinate(i) + 0.5 * axial_spacing_,
                           cross_coordinate(j) + 0.5 * cross_spacing_,
                           cross_coordinate(k) + 0.5 * cross_spacing_);
        cells_.push_back(cell);
      }
    }
  }

  for (int n = 0; n < 8; ++n) {
    const double s1 = ((n >> 2) & 1) ? 1.0 : -1.0;
    const double s2 = ((n >> 1) & 1) ? 1.0 : -1.0;
    const double s3 = (n & 1) ? 1.0 : -1.0;
    shape_gradients_[static_cast<std::size_t>(n)] =
        Vec3(s1 / (4.0 * axial_spacing_), s2 / (4.0 * cross_spacing_), s3 / (4.0 * cross_spacing_));
  }
}

double Grid::min_spacing() const { return std::min(axial_spacing_, cross_spacing_); }

std::array<int, 3> Grid::node_multi_index(int node) const {
  const int nc = n_cross_ + 1;
  return {node / (nc * nc), (node / nc) % nc, node % nc};
}

Vec3 Grid::node_position(int i, int j, int k) const {
  return Vec3(axial_coordinate(i), cross_coordinate(j), cross_coordinate(k));
}

Vec3 Grid::node_position(int node) const {
  const auto [i, j, k] = node_multi_index(node);
  return node_position(i, j, k);
}

int Grid::cross_cell_count() const {
  return static_cast<int>(std::count(cross_mask_.begin(), cross_mask_.end(), char{1}));
}

Vec2 Grid::cross_cell_center(int j, int k) const {
  return Vec2(cross_coordinate(j) + 0.5 * cross_spacing_, cross_coordinate(k) + 0.5 * cross_spacing_);
}

std::uint64_t Grid::hash() const {
  Fnv1a h;
  h.add(static_cast<int>(cross_section_.shape));
  h.add(cross_section_.half_extent);
  h.add(axial_half_length_);
  h.add(axial_spacing_);
  h.add(cross_spacing_);
  return h.value();
}

Grid build_grid(const CrossSection& cross_section, double axial_half_length, double spacing) {
  if (!(spacing > 0.0)) throw InvalidArgument("grid spacing must be positive");
  as_integer_ratio(axial_half_length, spacing, "build_grid: spacing must divide M");
  if (cross_section.half_extent < 2.0 * spacing * (1.0 - kTol)) {
    throw InvalidArgument("build_grid: cross-section half extent must be at least twice the spacing");
  }
  return Grid(cross_section, axial_half_length, spacing, spacing);
}

std::shared_ptr<const Grid> make_grid(const CrossSection& cross_section, double axial_half_length,
                                      double spacing) {
  return std::make_shared<const Grid>(build_grid(cross_section, axial_half_length, spacing));
}

bool polygon_contains(const Polygon& polygon, const Vec2& p) {
  const std::size_t n = polygon.size();
  bool inside = false;
  for (std::size_t a = 0, b = n - 1; a < n; b = a++) {
    const Vec2& pa = polygon[a];
    const Vec2& pb = polygon[b];
    if (on_segment(pb, pa, p)) return true;
    if ((pa.y() > p.y()) != (pb.y() > p.y())) {
      const double x = pa.x() + (p.y() - pa.y()) * (pb.x() - pa.x()) / (pb.y() - pa.y());
      if (p.x() < x) inside = !inside;
    }
  }
  return inside;
}

double polygon_area(const Polygon& polygon) {
  double twice = 0.0;
  const std::size_t n = polygon.size();
  for (std::size_t a = 0, b = n - 1; a < n; b = a++) {
    twice += polygon[b].x() * polygon[a].y() - polygon[a].x() * polygon[b].y();
  }
  return 0.5 * std::abs(twice);
}

bool polygon_is_simple(const Polygon& polygon) {
  const std::size_t n = polygon.size();
  if (n < 3) return false;
  for (std::size_t e = 0; e < n; ++e) {
    const Vec2& a = polygon[e];
    const Vec2& b = polygon[(e + 1) % n];
    if ((b - a).norm() == 0.0) return false;
    for (std::size_t f = e + 1; f < n; ++f) {
      // adjacent edges share exactly one vertex
      if (f == e + 1 || (e == 0 && f == n - 1)) continue;
      if (segments_intersect(a, b, polygon[f], polygon[(f + 1) % n])) return false;
    }
  }
  return true;
}

Polygon circle_polygon(const Vec2& center, double radius, int vertices) {
  Polygon out;
  out.reserve(static_cast<std::size_t>(vertices));
  for (int v = 0; v < vertices; ++v) {
    const double t = 2.0 * std::numbers::pi * v / vertices;
    out.emplace_back(center.x() + radius * std::cos(t), center.y() + radius * std::sin(t));
  }
  return out;
}

Polygon square_polygon(const Vec2& center, double half_side) {
  return {center + Vec2(-half_side, -half_side), center + Vec2(half_side, -half_side),
          center + Vec2(half_side, half_side), center + Vec2(-half_side, half_side)};
}

DislocationSpec rasterize_dislocation(const Polygon& curve_in, const Grid& grid, const Vec3& burgers,
                                      std::string id) {
  const Polygon curve = strip_closing_vertex(curve_in);
  if (!burgers.allFinite()) throw InvalidArgument("rasterize_dislocation: non-finite Burgers vector");
  if (!polygon_is_simple(curve)) {
    throw InvalidArgument("rasterize_dislocation: curve must be a simple closed polygon");
  }
  for (const Vec2& v : curve) {
    if (!grid.cross_section().contains(v)) {
      throw InvalidArgument(
          "rasterize_dislocation: curve touches or leaves the cross-section boundary");
    }
  }
  DislocationSpec spec;
  spec.id = std::move(id);
  spec.burgers = burgers;
  spec.curve = curve;
  const double face_area = grid.cross_spacing() * grid.cross_spacing();
  if (polygon_area(curve) < face_area) {
    spec.warning = "dislocation loop encloses less than one face; jump surface left empty";
    return spec;
  }
  for (int j = 0; j < grid.n_cross(); ++j) {
    for (int k = 0; k < grid.n_cross(); ++k) {
      if (grid.cross_masked(j, k) && polygon_contains(curve, grid.cross_cell_center(j, k))) {
        spec.faces.push_back(j * grid.n_cross() + k);
      }
    }
  }
  return spec;
}

JumpSet::JumpSet(const Grid& grid, std::vector<DislocationSpec> surfaces)
    : n_cross_(grid.n_cross()), surfaces_(std::move(surfaces)) {
  owner_.assign(static_cast<std::size_t>(n_cross_ * n_cross_), -1);
  for (std::size_t s = 0; s < surfaces_.size(); ++s) {
    auto& faces = surfaces_[s].faces;
    std::sort(faces.begin(), faces.end());
    for (int face : faces) {
      if (face < 0 || face >= n_cross_ * n_cross_ || !grid.cross_masked(face / n_cross_, face % n_cross_)) {
        throw InvalidArgument("jump surface '" + surfaces_[s].id + "' has a face outside the section");
      }
      int& slot = owner_[static_cast<std::size_t>(face)];
      if (slot != -1) {
        throw InvalidArgument("jump surfaces '" + surfaces_[static_cast<std::size_t>(slot)].id +
                              "' and '" + surfaces_[s].id + "' overlap");
      }
      slot = static_cast<int>(s);
    }
  }
}

int JumpSet::owner(int j, int k) const {
  if (owner_.empty()) return -1;
  return owner_[static_cast<std::size_t>(j * n_cross_ + k)];
}

std::uint64_t JumpSet::hash() const {
  Fnv1a h;
  for (const auto& s : surfaces_) {
    h.add(s.burgers.x());
    h.add(s.burgers.y());
    h.add(s.burgers.z());
    for (int f : s.faces) h.add(f);
    h.add(-1);
  }
  return h.value();
}

LatticeLoop rectangular_loop(int i_lo, int i_hi, int j_a, int j_b, int k) {
  LatticeLoop loop;
  for (int i = i_lo; i <= i_hi; ++i) loop.push_back({i, j_a, k});
  const int step = j_b > j_a ? 1 : -1;
  for (int j = j_a + step; j != j_b + step; j += step) loop.push_back({i_hi, j, k});
  for (int i = i_hi - 1; i >= i_lo; --i) loop.push_back({i, j_b, k});
  for (int j = j_b - step; j != j_a - step; j -= step) loop.push_back({i_lo, j, k});
  return loop;
}

namespace {

void walk_cross(LatticeLoop& loop, int i, std::array<int, 2> from, std::array<int, 2> to) {
  int j = from[0];
  int k = from[1];
  while (j != to[0]) {
    j += to[0] > j ? 1 : -1;
    loop.push_back({i, j, k});
  }
  while (k != to[1]) {
    k += to[1] > k ? 1 : -1;
    loop.push_back({i, j, k});
  }
}

}  // namespace

LatticeLoop crossing_loop(int i_lo, int i_hi, std::array<int, 2> from, std::array<int, 2> to) {
  LatticeLoop loop;
  for (int i = i_lo; i <= i_hi; ++i) loop.push_back({i, from[0], from[1]});
  walk_cross(loop, i_hi, from, to);
  for (int i = i_hi - 1; i >= i_lo; --i) loop.push_back({i, to[0], to[1]});
  walk_cross(loop, i_lo, to, from);
  return loop;
}

LatticeLoop concatenate(const LatticeLoop& first, const LatticeLoop& second) {
  if (first.empty() || second.empty() || first.front() != second.front()) {
    throw InvalidArgument("concatenate: loops must share their start node");
  }
  LatticeLoop out = first;
  out.insert(out.end(), second.begin() + 1, second.end());
  return out;
}

}  // namespace misfit
