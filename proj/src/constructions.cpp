#include "misfit/constructions.hpp"

#include "misfit/parallel.hpp"

#include <Eigen/Geometry>

#include <algorithm>
#include <cmath>
#include <numbers>
#include <sstream>

namespace misfit {

double ConstructionResult::part(const std::string& name) const {
  for (const auto& [key, value] : breakdown) {
    if (key == name) return value;
  }
  throw InvalidArgument("no energy part named " + name);
}

double mismatch_delta(const ElasticModel& model) { return (model.h() - Mat3::Identity()).norm(); }

ConstructionResult mismatch_ramp(const RampSpec& spec, std::shared_ptr<const Grid> grid, const ElasticModel& model) {
  if (!(spec.radius > 0.0)) throw InvalidArgument("mismatch_ramp: radius must be positive");
  if (grid->axial_half_length() < 0.5 * spec.radius + grid->axial_spacing() - 1e-12) {
    throw InvalidArgument("mismatch_ramp: grid too short for the ramp and one clamp layer");
  }
  const Mat3 h = model.h();
  const double r = spec.radius;
  ConstructionResult out;
  out.field = DisplacementField::from_map(grid, nullptr, [&](const Vec3& x) {
    const double phi = std::clamp(0.5 - x.x() / r, 0.0, 1.0);
    return Vec3(phi * x + (1.0 - phi) * (h * x));
  });
  const EnergyAssembler assembler(grid, nullptr, model);
  const std::vector<double> cells = assembler.cell_energies(out.field.values());
  std::vector<double> left;
  std::vector<double> right;
  for (std::size_t c = 0; c < cells.size(); ++c) {
    (assembler.phase(c) == Phase::left ? left : right).push_back(cells[c]);
  }
  out.energy = ordered_sum(cells);
  out.breakdown = {{"left_phase", ordered_sum(left)}, {"right_phase", ordered_sum(right)}};
  return out;
}

// ---------------------------------------------------------------------------
// glued tiles

Vec3 TileLayout::center(int a, int b) const {
  return Vec3(0.0, centers[static_cast<std::size_t>(a)], centers[static_cast<std::size_t>(b)]);
}

Vec3 TileLayout::burgers(int a, int b) const {
  return (h - Mat3::Identity()) * (center(a, b) - center(reference_a, reference_b()));
}

int TileLayout::tile_of(double y) const {
  int t = 0;
  for (int j = 1; j < k; ++j) {
    if (y >= boundaries[static_cast<std::size_t>(j)] - 1e-12 * r) t = j;
  }
  return t;
}

TileLayout tile_layout(const TileGlueSpec& spec, const Mat3& h) {
  const int k = spec.tiles_per_side;
  if (k < 2) throw InvalidArgument("tile gluing needs at least 2 tiles per side");
  if (!(spec.r > 0.0) || !(spec.mu > 0.0)) throw InvalidArgument("tile gluing: r and mu must be positive");
  if (spec.mu > spec.r / 8.0 + 1e-12) throw InvalidArgument("tile gluing: mu must not exceed r / 8");
  if (!(spec.transition_half_length > 0.0)) throw InvalidArgument("tile gluing: transition length must be positive");
  TileLayout layout;
  layout.k = k;
  layout.r = spec.r;
  layout.mu = spec.mu;
  layout.h = h;
  layout.half_side = (spec.r + (k - 1) * spec.mu) / k;
  const double d = 2.0 * (spec.r - spec.mu) / k;
  for (int j = 0; j < k; ++j) layout.centers.push_back(-spec.r + layout.half_side + j * d);
  layout.boundaries.push_back(-spec.r);
  for (int j = 1; j < k; ++j) layout.boundaries.push_back(-spec.r + (2.0 * j * spec.r + (k - 2.0 * j) * spec.mu) / k);
  layout.boundaries.push_back(spec.r);
  return layout;
}

namespace {

// Integer number of spacings in `length`, or throws.
int whole_steps(double length, double spacing, const char* what) {
  const double q = length / spacing;
  const double n = std::round(q);
  if (std::abs(q - n) > 1e-9 * std::max(1.0, q)) {
    throw InvalidArgument(std::string("tile gluing: ") + what + " is not a multiple of the grid spacing");
  }
  return static_cast<int>(n);
}

void check_square_grid(const TileGlueSpec& spec, const Grid& grid) {
  if (grid.cross_section().shape != Shape::square || std::abs(grid.cross_section().half_extent - spec.r) > 1e-12) {
    throw InvalidArgument("tile gluing requires a square grid of half-side r");
  }
  if (grid.axial_spacing() != grid.cross_spacing()) throw InvalidArgument("tile gluing requires an isotropic grid");
  if (spec.mu < 2.0 * grid.cross_spacing() - 1e-12) {
    throw InvalidArgument("tile gluing: mu must be resolved by at least 2 cells");
  }
}

}  // namespace

std::shared_ptr<const Grid> tile_base_grid(const TileGlueSpec& spec, const Grid& full) {
  check_square_grid(spec, full);
  const TileLayout layout = tile_layout(spec, Mat3::Identity());
  const double a = full.cross_spacing();
  whole_steps(2.0 * layout.half_side, a, "tile width");
  for (double c : layout.centers) whole_steps(c - layout.half_side + spec.r, a, "tile offset");
  return std::make_shared<const Grid>(CrossSection{Shape::square, layout.half_side}, full.axial_half_length(),
                                      full.axial_spacing(), a);
}

std::shared_ptr<const JumpSet> tile_jump_set(const TileLayout& layout, const Grid& grid) {
  std::vector<DislocationSpec> surfaces;
  for (int a = 0; a < layout.k; ++a) {
    for (int b = 0; b < layout.k; ++b) {
      if (a == TileLayout::reference_a && b == layout.reference_b()) continue;
      DislocationSpec spec;
      std::ostringstream id;
      id << "tile_" << a << "_" << b;
      spec.id = id.str();
      spec.burgers = layout.burgers(a, b);
      const double y0 = layout.boundaries[static_cast<std::size_t>(a)];
      const double y1 = layout.boundaries[static_cast<std::size_t>(a + 1)];
      const double z0 = layout.boundaries[static_cast<std::size_t>(b)];
      const double z1 = layout.boundaries[static_cast<std::size_t>(b + 1)];
      spec.curve = {{y0, z0}, {y1, z0}, {y1, z1}, {y0, z1}};
      for (int j = 0; j < grid.n_cross(); ++j) {
        for (int k = 0; k < grid.n_cross(); ++k) {
          if (!grid.cross_masked(j, k)) continue;
          const Vec2 c = grid.cross_cell_center(j, k);
          if (layout.tile_of(c.x()) == a && layout.tile_of(c.y()) == b) spec.faces.push_back(j * grid.n_cross() + k);
        }
      }
      surfaces.push_back(std::move(spec));
    }
  }
  return std::make_shared<const JumpSet>(grid, std::move(surfaces));
}

namespace {

struct AxisWeight {
  int tile[2] = {0, 0};
  double weight[2] = {1.0, 0.0};
  int count = 1;
};

// Partition of unity along one cross axis: linear blend over stripes of
// half-width w around the nominal tile boundaries.
AxisWeight axis_weight(const TileLayout& layout, double y, double w) {
  AxisWeight out;
  out.tile[0] = layout.tile_of(y);
  const double tie = 1e-12 * layout.r;
  for (int j = 1; j < layout.k; ++j) {
    const double t = layout.boundaries[static_cast<std::size_t>(j)];
    if (w == 0.0 ? std::abs(y - t) <= tie : std::abs(y - t) < w) {
      const double upper = w == 0.0 ? 0.5 : (y - t + w) / (2.0 * w);
      out.tile[0] = j - 1;
      out.weight[0] = 1.0 - upper;
      out.tile[1] = j;
      out.weight[1] = upper;
      out.count = 2;
      return out;
    }
  }
  return out;
}

}  // namespace

ConstructionResult glued_tile_field(const TileGlueSpec& spec, std::shared_ptr<const Grid> grid,
                                    const DisplacementField& base, const ElasticModel& model) {
  check_square_grid(spec, *grid);
  const TileLayout layout = tile_layout(spec, model.h());
  const Grid& bg = base.grid();
  const double a = grid->cross_spacing();
  if (bg.n_axial() != grid->n_axial() || bg.axial_spacing() != grid->axial_spacing() ||
      bg.cross_spacing() != a || bg.n_cross() != whole_steps(2.0 * layout.half_side, a, "tile width")) {
    throw InvalidArgument("glued_tile_field: base field grid does not match the tile grid");
  }
  if (base.jumps() != nullptr && !base.jumps()->empty()) {
    throw InvalidArgument("glued_tile_field: base field must be free of jumps");
  }
  std::vector<int> offset;
  for (double c : layout.centers) offset.push_back(whole_steps(c - layout.half_side + spec.r, a, "tile offset"));

  const auto jumps = tile_jump_set(layout, *grid);
  ConstructionResult out;
  out.field = DisplacementField(grid, jumps);
  const Vec3 reference = layout.center(TileLayout::reference_a, layout.reference_b());
  const Mat3& h = layout.h;
  const double m = spec.transition_half_length;
  // pure_tile[n] = tile id a * k + b when node n carries a single copy, else -1
  std::vector<int> pure_tile(static_cast<std::size_t>(grid->node_count()), -1);
  for (int n = 0; n < grid->node_count(); ++n) {
    if (!grid->node_active(n)) continue;
    const auto [i, j, k] = grid->node_multi_index(n);
    const Vec3 x = grid->node_position(n);
    const double w = spec.mu * std::min(std::abs(x.x()), m) / m;
    const AxisWeight wy = axis_weight(layout, x.y(), w);
    const AxisWeight wz = axis_weight(layout, x.z(), w);
    Vec3 value = Vec3::Zero();
    for (int p = 0; p < wy.count; ++p) {
      for (int q = 0; q < wz.count; ++q) {
        const int ta = wy.tile[p];
        const int tb = wz.tile[q];
        const int jb = j - offset[static_cast<std::size_t>(ta)];
        const int kb = k - offset[static_cast<std::size_t>(tb)];
        if (jb < 0 || kb < 0 || jb > bg.n_cross() || kb > bg.n_cross()) {
          throw InvalidArgument("glued_tile_field: blend reaches outside a tile copy");
        }
        // left copy B(x - c) + c, right copy B(x - c) + c_ref + H (c - c_ref): both
        // far fields agree across tiles and the jump is (H - I)(c - c_ref)
        const Vec3 centre = layout.center(ta, tb);
        const Vec3 copy = base.values()[static_cast<std::size_t>(bg.node_index(i, jb, kb))] +
                          (x.x() > 0.0 ? Vec3(reference + h * (centre - reference)) : centre);
        value += wy.weight[p] * wz.weight[q] * copy;
      }
    }
    out.field.values()[static_cast<std::size_t>(n)] = value;
    if (wy.count == 1 && wz.count == 1) pure_tile[static_cast<std::size_t>(n)] = wy.tile[0] * layout.k + wz.tile[0];
  }

  const EnergyAssembler assembler(grid, jumps, model);
  const std::vector<double> cells = assembler.cell_energies(out.field.values());
  std::vector<double> tiles;
  std::vector<double> sectors;
  for (std::size_t c = 0; c < cells.size(); ++c) {
    const Cell& cell = grid->cells()[c];
    const int t = pure_tile[static_cast<std::size_t>(cell.nodes[0])];
    bool pure = t >= 0;
    for (int node : cell.nodes) pure = pure && pure_tile[static_cast<std::size_t>(node)] == t;
    (pure ? tiles : sectors).push_back(cells[c]);
  }
  out.energy = ordered_sum(cells);
  const double base_energy = total_energy(base, model);
  out.breakdown = {{"tiles", ordered_sum(tiles)},
                   {"sectors", ordered_sum(sectors)},
                   {"base", base_energy},
                   {"tile_count_times_base", layout.k * layout.k * base_energy}};
  return out;
}

// ---------------------------------------------------------------------------
// rotations

namespace {

Mat3 skew(const Vec3& w) {
  Mat3 s;
  s << 0.0, -w.z(), w.y(), w.z(), 0.0, -w.x(), -w.y(), w.x(), 0.0;
  return s;
}

struct AxisAngle {
  Vec3 axis = Vec3::UnitX();
  double angle = 0.0;
};

bool is_rotation(const Mat3& r) {
  return (r.transpose() * r - Mat3::Identity()).norm() <= 1e-10 && r.determinant() > 0.0;
}

AxisAngle log_rotation(const Mat3& r) {
  AxisAngle out;
  const double c = std::clamp(0.5 * (r.trace() - 1.0), -1.0, 1.0);
  out.angle = std::acos(c);
  const Vec3 v(r(2, 1) - r(1, 2), r(0, 2) - r(2, 0), r(1, 0) - r(0, 1));
  if (out.angle < 1e-12) {
    out.angle = 0.0;
    return out;
  }
  if (std::numbers::pi - out.angle > 1e-6) {
    out.axis = v / (2.0 * std::sin(out.angle));
    out.axis.normalize();
    return out;
  }
  // near pi: (R + R^T)/2 - cos(angle) I = (1 - cos(angle)) n n^T
  const Mat3 b = 0.5 * (r + r.transpose()) - c * Mat3::Identity();
  Eigen::Index col = 0;
  b.diagonal().maxCoeff(&col);
  Vec3 n = b.col(col);
  n.normalize();
  if (v.norm() > 1e-14) {
    if (n.dot(v) < 0.0) n = -n;
  } else {
    for (int i = 0; i < 3; ++i) {
      if (std::abs(n[i]) > 1e-12) {
        if (n[i] < 0.0) n = -n;
        break;
      }
    }
  }
  out.axis = n;
  return out;
}

Mat3 exp_rotation(const Vec3& axis, double angle) {
  const Mat3 w = skew(axis);
  return Mat3::Identity() + std::sin(angle) * w + (1.0 - std::cos(angle)) * (w * w);
}

// integral_0^tau exp(s angle W) ds
Mat3 exp_integral(const Vec3& axis, double angle, double tau) {
  const Mat3 w = skew(axis);
  const double x = tau * angle;
  double c1;
  double c2;
  if (std::abs(x) < 1e-4) {
    c1 = tau * x / 2.0 * (1.0 - x * x / 12.0);
    c2 = tau * x * x / 6.0 * (1.0 - x * x / 20.0);
  } else {
    c1 = (1.0 - std::cos(x)) / angle;
    c2 = (x - std::sin(x)) / angle;
  }
  return tau * Mat3::Identity() + c1 * w + c2 * (w * w);
}

}  // namespace

Mat3 rotation_about(const Vec3& axis, double angle) {
  if (!(axis.norm() > 0.0)) throw InvalidArgument("rotation_about: zero axis");
  return exp_rotation(axis.normalized(), angle);
}

Mat3 rotation_path(const Mat3& r0, const Mat3& r1, double t) {
  if (!is_rotation(r0) || !is_rotation(r1)) throw InvalidArgument("rotation_path: inputs must be rotations");
  if (t == 0.0) return r0;
  if (t == 1.0) return r1;
  const AxisAngle rel = log_rotation(r0.transpose() * r1);
  if (rel.angle == 0.0) return r0;
  return r0 * exp_rotation(rel.axis, t * rel.angle);
}

// ---------------------------------------------------------------------------
// recovery sequence

namespace {

// Smooth band joining two matrices A0 -> A1 = T0 K -> T1 K (T rotations) over
// (centre - sigma, centre + sigma); value(x) = offset + int P e1 + P (0, x').
struct Band {
  double centre = 0.0;
  double sigma = 0.0;
  Mat3 t0 = Mat3::Identity();
  Mat3 t1 = Mat3::Identity();
  Mat3 k = Mat3::Identity();
  AxisAngle rel;
  Vec3 offset = Vec3::Zero();

  Mat3 matrix(double tau) const {
    if (tau <= 0.0) return t0 * k;
    if (tau >= 1.0) return t1 * k;
    return (rel.angle == 0.0 ? t0 : Mat3(t0 * exp_rotation(rel.axis, tau * rel.angle))) * k;
  }
  Vec3 integral(double tau) const {
    const double tc = std::clamp(tau, 0.0, 1.0);
    Vec3 v = 2.0 * sigma * (t0 * (exp_integral(rel.axis, rel.angle, tc) * (k * Vec3::UnitX())));
    if (tau > 1.0) v += (tau - 1.0) * 2.0 * sigma * (t1 * (k * Vec3::UnitX()));
    return v;
  }
  double tau(double x1) const { return (x1 - centre + sigma) / (2.0 * sigma); }
  Vec3 value(double x1, const Vec3& section) const {
    const double s = tau(x1);
    return offset + integral(s) + matrix(s) * section;
  }
};

Band make_band(double centre, double sigma, const Mat3& t0, const Mat3& t1, const Mat3& k) {
  Band b;
  b.centre = centre;
  b.sigma = sigma;
  b.t0 = t0;
  b.t1 = t1;
  b.k = k;
  b.rel = log_rotation(t0.transpose() * t1);
  return b;
}

void check_increasing(const std::vector<double>& points, const char* what) {
  for (std::size_t i = 1; i < points.size(); ++i) {
    if (!(points[i] > points[i - 1])) throw InvalidArgument(std::string("recovery: ") + what + " must increase");
  }
}

}  // namespace

ConstructionResult recovery_sequence(const RecoverySpec& spec, const ElasticModel& model) {
  const RecoveryProfile& prof = spec.profile;
  const double h = spec.h;
  const double sigma = spec.sigma;
  const double length = spec.length;
  if (!(h > 0.0 && h <= 1.0)) throw InvalidArgument("recovery: h must lie in (0, 1]");
  if (!(sigma > 0.0)) throw InvalidArgument("recovery: sigma must be positive");
  if (prof.left_rotations.size() != prof.left_points.size() + 1 ||
      prof.right_matrices.size() != prof.right_points.size() + 1) {
    throw InvalidArgument("recovery: profile needs one more matrix than switch points on each side");
  }
  check_increasing(prof.left_points, "left switch points");
  check_increasing(prof.right_points, "right switch points");
  const Mat3 hm = model.h();
  const Mat3 h_inv = hm.inverse();
  for (const Mat3& r : prof.left_rotations) {
    if (!is_rotation(r)) throw InvalidArgument("recovery: left profile values must be rotations");
  }
  std::vector<Mat3> right_rot;
  for (const Mat3& s : prof.right_matrices) {
    right_rot.push_back(s * h_inv);
    if (!is_rotation(right_rot.back())) throw InvalidArgument("recovery: right profile values must lie in SO(3)H");
  }

  const DisplacementField& block = spec.block;
  const Grid& bg = block.grid();
  const double av = bg.cross_spacing();
  const double mv = bg.axial_half_length();
  if (bg.axial_spacing() != av) throw InvalidArgument("recovery: block grid must be isotropic");
  const double reach = h * mv;
  const int n_left = static_cast<int>(prof.left_points.size());
  const int n_right = static_cast<int>(prof.right_points.size());
  const double a_slab = h * av;
  const double first = n_left > 0 ? prof.left_points.front() - sigma : -reach;
  const double last = n_right > 0 ? prof.right_points.back() + sigma : reach;
  if (first <= -length + a_slab || last >= length - a_slab) {
    throw InvalidArgument("recovery: transition bands reach the clamped ends");
  }
  if ((n_left > 0 && prof.left_points.back() + sigma > -reach) ||
      (n_right > 0 && prof.right_points.front() - sigma < reach)) {
    throw InvalidArgument("recovery: a rotation band overlaps the interface block");
  }

  auto omega = std::make_shared<const Grid>(bg.cross_section(), length, a_slab, av);
  if (omega->n_cross() != bg.n_cross()) throw InvalidArgument("recovery: block cross-section does not match");
  const double shift_q = (length / h - mv) / av;
  const int shift = static_cast<int>(std::round(shift_q));
  if (std::abs(shift_q - shift) > 1e-9 * std::max(1.0, shift_q)) {
    throw InvalidArgument("recovery: block does not align with the fixed-domain grid");
  }

  // block clamps: y = R_n x on the left end, y = S_0 x + t_v on the right end
  const Mat3& rn = prof.left_rotations.back();
  const Mat3& s0 = prof.right_matrices.front();
  const int last_layer = bg.n_axial();
  Vec3 t_v = Vec3::Zero();
  bool have_t = false;
  for (int n = 0; n < bg.node_count(); ++n) {
    if (!bg.node_active(n)) continue;
    const int i = bg.node_multi_index(n)[0];
    const Vec3 x = bg.node_position(n);
    const Vec3& y = block.values()[static_cast<std::size_t>(n)];
    if (i == 0 && (y - rn * x).norm() > 1e-10) throw InvalidArgument("recovery: block violates its left clamp");
    if (i == last_layer) {
      const Vec3 t = y - s0 * x;
      if (!have_t) {
        t_v = t;
        have_t = true;
      } else if ((t - t_v).norm() > 1e-10) {
        throw InvalidArgument("recovery: block violates its right clamp");
      }
    }
  }

  // constants of the left pieces, gauge c_0 = 0
  std::vector<Vec3> c(static_cast<std::size_t>(n_left) + 1, Vec3::Zero());
  std::vector<Band> left_bands;
  for (int i = 1; i <= n_left; ++i) {
    const double ai = prof.left_points[static_cast<std::size_t>(i - 1)];
    Band b = make_band(ai, sigma, prof.left_rotations[static_cast<std::size_t>(i - 1)],
                       prof.left_rotations[static_cast<std::size_t>(i)], Mat3::Identity());
    b.offset = b.t0 * Vec3::UnitX() * (ai - sigma) + c[static_cast<std::size_t>(i - 1)];
    c[static_cast<std::size_t>(i)] = b.integral(1.0) + b.offset - b.t1 * Vec3::UnitX() * (ai + sigma);
    left_bands.push_back(b);
  }
  const Vec3 l0 = c.back();
  const Vec3 d0 = h * t_v + l0;
  std::vector<Vec3> d(static_cast<std::size_t>(n_right) + 1, Vec3::Zero());
  d[0] = d0;
  std::vector<Band> right_bands;
  for (int j = 1; j <= n_right; ++j) {
    const double bj = prof.right_points[static_cast<std::size_t>(j - 1)];
    Band b = make_band(bj, sigma, right_rot[static_cast<std::size_t>(j - 1)], right_rot[static_cast<std::size_t>(j)], hm);
    b.offset = b.t0 * hm * Vec3::UnitX() * (bj - sigma) + d[static_cast<std::size_t>(j - 1)];
    d[static_cast<std::size_t>(j)] = b.integral(1.0) + b.offset - b.t1 * hm * Vec3::UnitX() * (bj + sigma);
    right_bands.push_back(b);
  }

  enum class Region { rigid, band, block };
  auto locate = [&](double x1, int& index) {
    if (std::abs(x1) <= reach) return Region::block;
    const auto& bands = x1 < 0.0 ? left_bands : right_bands;
    index = 0;
    for (std::size_t i = 0; i < bands.size(); ++i) {
      if (std::abs(x1 - bands[i].centre) < sigma) {
        index = static_cast<int>(i);
        return Region::band;
      }
      if (x1 >= bands[i].centre + sigma) index = static_cast<int>(i) + 1;
    }
    return Region::rigid;
  };
  auto rigid_value = [&](bool left, int piece, const Vec3& z) -> Vec3 {
    if (left) return prof.left_rotations[static_cast<std::size_t>(piece)] * z + c[static_cast<std::size_t>(piece)];
    return prof.right_matrices[static_cast<std::size_t>(piece)] * z + d[static_cast<std::size_t>(piece)];
  };
  auto band_value = [&](bool left, int band, const Vec3& z) -> Vec3 {
    const Band& b = left ? left_bands[static_cast<std::size_t>(band)] : right_bands[static_cast<std::size_t>(band)];
    return b.value(z.x(), Vec3(0.0, z.y(), z.z()));
  };
  auto block_value = [&](int i, int j, int k) -> Vec3 {
    return h * block.values()[static_cast<std::size_t>(bg.node_index(i - shift, j, k))] + l0;
  };

  ConstructionResult out;
  out.field = DisplacementField(omega);
  for (int n = 0; n < omega->node_count(); ++n) {
    if (!omega->node_active(n)) continue;
    const auto [i, j, k] = omega->node_multi_index(n);
    const Vec3 x = omega->node_position(n);
    const Vec3 z(x.x(), h * x.y(), h * x.z());
    int index = 0;
    Vec3 y;
    switch (locate(x.x(), index)) {
      case Region::block: y = block_value(i, j, k); break;
      case Region::band: y = band_value(x.x() < 0.0, index, z); break;
      case Region::rigid: y = rigid_value(x.x() < 0.0, index, z); break;
    }
    out.field.values()[static_cast<std::size_t>(n)] = y;
  }

  // trace matching at every piece boundary
  const double scale = 1.0 + length + bg.cross_section().half_extent;
  double worst = 0.0;
  for (int j = 0; j <= omega->n_cross(); ++j) {
    for (int k = 0; k <= omega->n_cross(); ++k) {
      const int probe = omega->node_index(0, j, k);
      if (!omega->node_active(probe)) continue;
      const Vec3 xs = omega->node_position(probe);
      const Vec3 zs(0.0, h * xs.y(), h * xs.z());
      for (int i = 1; i <= n_left; ++i) {
        const Band& b = left_bands[static_cast<std::size_t>(i - 1)];
        const Vec3 lo(b.centre - sigma, zs.y(), zs.z());
        const Vec3 hi(b.centre + sigma, zs.y(), zs.z());
        worst = std::max(worst, (b.value(lo.x(), zs) - rigid_value(true, i - 1, lo)).norm());
        worst = std::max(worst, (b.value(hi.x(), zs) - rigid_value(true, i, hi)).norm());
      }
      for (int jj = 1; jj <= n_right; ++jj) {
        const Band& b = right_bands[static_cast<std::size_t>(jj - 1)];
        const Vec3 lo(b.centre - sigma, zs.y(), zs.z());
        const Vec3 hi(b.centre + sigma, zs.y(), zs.z());
        worst = std::max(worst, (b.value(lo.x(), zs) - rigid_value(false, jj - 1, lo)).norm());
        worst = std::max(worst, (b.value(hi.x(), zs) - rigid_value(false, jj, hi)).norm());
      }
      const int i_lo = shift;
      const int i_hi = shift + bg.n_axial();
      const Vec3 z_lo(omega->axial_coordinate(i_lo), zs.y(), zs.z());
      const Vec3 z_hi(omega->axial_coordinate(i_hi), zs.y(), zs.z());
      worst = std::max(worst, (block_value(i_lo, j, k) - rigid_value(true, n_left, z_lo)).norm());
      worst = std::max(worst, (block_value(i_hi, j, k) - rigid_value(false, 0, z_hi)).norm());
    }
  }
  if (worst > 1e-10 * scale) {
    std::ostringstream msg;
    msg << "recovery: block traces do not match (mismatch " << worst << ")";
    throw InvalidArgument(msg.str());
  }

  if (sigma / h < 10.0 || sigma > 0.1) {
    out.warnings.push_back("sigma outside [10 h, 1/10]; bands are resolved but not in the asymptotic regime");
  }

  const EnergyAssembler assembler(omega, nullptr, model, Vec3(1.0, 1.0 / h, 1.0 / h));
  const std::vector<double> cells = assembler.cell_energies(out.field.values());
  std::vector<double> bands;
  std::vector<double> blocks;
  std::vector<double> rigid;
  for (std::size_t cidx = 0; cidx < cells.size(); ++cidx) {
    int index = 0;
    const double x1 = omega->cells()[cidx].center.x();
    const double e = cells[cidx] / h;
    switch (locate(x1, index)) {
      case Region::block: blocks.push_back(e); break;
      case Region::band: bands.push_back(e); break;
      case Region::rigid: {
        // cells straddling a band edge belong to the band
        const double half = 0.5 * omega->axial_spacing();
        int other = 0;
        if (locate(x1 - half, other) == Region::band || locate(x1 + half, other) == Region::band) {
          bands.push_back(e);
        } else {
          rigid.push_back(e);
        }
        break;
      }
    }
  }
  std::vector<double> scaled(cells.size());
  for (std::size_t cidx = 0; cidx < cells.size(); ++cidx) scaled[cidx] = cells[cidx] / h;
  out.energy = ordered_sum(scaled);
  out.breakdown = {{"bands", ordered_sum(bands)},
                   {"block", ordered_sum(blocks)},
                   {"rigid", ordered_sum(rigid)},
                   {"block_recorded", spec.block_energy}};
  return out;
}

double rescaled_energy(const DisplacementField& u, double h, const ElasticModel& model) {
  const EnergyAssembler assembler(u.grid_ptr(), u.jumps_ptr(), model, Vec3(1.0, 1.0 / h, 1.0 / h));
  const std::vector<double> cells = assembler.cell_energies(u.values());
  std::vector<double> scaled(cells.size());
  for (std::size_t c = 0; c < cells.size(); ++c) scaled[c] = cells[c] / h;
  return ordered_sum(scaled);
}

double rescaled_energy_thin(const DisplacementField& u, double h, const ElasticModel& model) {
  const DisplacementField thin = change_of_variables(u, thin_grid(u.grid(), h));
  return total_energy(thin, model) / (h * h * h);
}

double max_node_difference(const DisplacementField& a, const DisplacementField& b) {
  if (a.values().size() != b.values().size()) throw InvalidArgument("max_node_difference: size mismatch");
  double worst = 0.0;
  for (int n = 0; n < a.grid().node_count(); ++n) {
    if (!a.grid().node_active(n)) continue;
    worst = std::max(worst, (a.values()[static_cast<std::size_t>(n)] - b.values()[static_cast<std::size_t>(n)]).norm());
  }
  return worst;
}

}  // namespace misfit
