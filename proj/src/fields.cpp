#include "misfit/fields.hpp"

#include "misfit/hashing.hpp"
#include "misfit/parallel.hpp"

#include <cmath>
#include <iomanip>
#include <istream>
#include <limits>
#include <ostream>
#include <sstream>
#include <string>

namespace misfit {

DisplacementField::DisplacementField(std::shared_ptr<const Grid> grid,
                                     std::shared_ptr<const JumpSet> jumps)
    : grid_(std::move(grid)), jumps_(std::move(jumps)) {
  if (!grid_) throw InvalidArgument("DisplacementField requires a grid");
  values_.resize(static_cast<std::size_t>(grid_->node_count()));
  for (int n = 0; n < grid_->node_count(); ++n) values_[static_cast<std::size_t>(n)] = grid_->node_position(n);
}

DisplacementField DisplacementField::from_map(std::shared_ptr<const Grid> grid,
                                              std::shared_ptr<const JumpSet> jumps,
                                              const std::function<Vec3(const Vec3&)>& map) {
  DisplacementField u(std::move(grid), std::move(jumps));
  for (int n = 0; n < u.grid().node_count(); ++n) {
    u.values_[static_cast<std::size_t>(n)] = map(u.grid().node_position(n));
  }
  return u;
}

Vec3 DisplacementField::displacement(int node) const {
  return values_[static_cast<std::size_t>(node)] - grid_->node_position(node);
}

void DisplacementField::validate() const {
  if (values_.size() != static_cast<std::size_t>(grid_->node_count())) {
    throw InvalidArgument("field size does not match the grid node count");
  }
  for (const Vec3& v : values_) {
    if (!v.allFinite()) throw InvalidArgument("field contains a non-finite value");
  }
}

const Vec3* cell_jump(const Grid& grid, const JumpSet* jumps, const Cell& cell) {
  if (jumps == nullptr || cell.i != grid.interface_layer()) return nullptr;
  const int s = jumps->owner(cell.j, cell.k);
  return s < 0 ? nullptr : &jumps->burgers(s);
}

Mat3 cell_gradient(const Grid& grid, const Cell& cell, const std::vector<Vec3>& y, const Vec3* jump) {
  const auto& g = grid.shape_gradients();
  Mat3 out = Mat3::Zero();
  for (int n = 0; n < 8; ++n) {
    Vec3 v = y[static_cast<std::size_t>(cell.nodes[static_cast<std::size_t>(n)])];
    if (jump != nullptr && ((n >> 2) & 1) == 0) v += *jump;
    out.noalias() += v * g[static_cast<std::size_t>(n)].transpose();
  }
  return out;
}

StrainField strain(const DisplacementField& u) {
  const Grid& grid = u.grid();
  StrainField out;
  out.grid = u.grid_ptr();
  out.cells.resize(grid.cell_count());
  parallel_for(grid.cell_count(), [&](std::size_t begin, std::size_t end) {
    for (std::size_t c = begin; c < end; ++c) {
      const Cell& cell = grid.cells()[c];
      out.cells[c] = cell_gradient(grid, cell, u.values(), cell_jump(grid, u.jumps(), cell));
    }
  });
  return out;
}

NodeMatrix gradient_fluctuation_matrix(const Grid& grid, const Vec3& column_scale) {
  const double spacing[3] = {grid.axial_spacing(), grid.cross_spacing(), grid.cross_spacing()};
  const double gauss[2] = {0.5 - 0.5 / std::sqrt(3.0), 0.5 + 0.5 / std::sqrt(3.0)};
  const auto& mean = grid.shape_gradients();
  NodeMatrix k = NodeMatrix::Zero();
  const double weight = grid.cell_volume() / 8.0;
  for (int q = 0; q < 8; ++q) {
    const double xi[3] = {gauss[(q >> 2) & 1], gauss[(q >> 1) & 1], gauss[q & 1]};
    Eigen::Matrix<double, 8, 3> d;
    for (int n = 0; n < 8; ++n) {
      const int bits[3] = {(n >> 2) & 1, (n >> 1) & 1, n & 1};
      double phi[3];
      double dphi[3];
      for (int c = 0; c < 3; ++c) {
        phi[c] = bits[c] ? xi[c] : 1.0 - xi[c];
        dphi[c] = (bits[c] ? 1.0 : -1.0) / spacing[c];
      }
      const Vec3 grad(dphi[0] * phi[1] * phi[2], phi[0] * dphi[1] * phi[2], phi[0] * phi[1] * dphi[2]);
      d.row(n) = (grad - mean[static_cast<std::size_t>(n)]).cwiseProduct(column_scale).transpose();
    }
    k.noalias() += weight * d * d.transpose();
  }
  return k;
}

RescaledField rescale(const StrainField& f, double h) {
  if (!(h > 0.0 && h <= 1.0)) throw InvalidArgument("rescale: h must lie in (0, 1]");
  RescaledField out;
  out.grid = f.grid;
  out.h = h;
  out.cells = f.cells;
  for (Mat3& m : out.cells) {
    m.col(1) /= h;
    m.col(2) /= h;
  }
  return out;
}

std::shared_ptr<const Grid> thin_grid(const Grid& grid, double h) {
  if (!(h > 0.0 && h <= 1.0)) throw InvalidArgument("thin_grid: h must lie in (0, 1]");
  CrossSection cs = grid.cross_section();
  cs.half_extent *= h;
  return std::make_shared<const Grid>(cs, grid.axial_half_length(), grid.axial_spacing(),
                                      grid.cross_spacing() * h);
}

DisplacementField change_of_variables(const DisplacementField& u, std::shared_ptr<const Grid> target) {
  const Grid& a = u.grid();
  const Grid& b = *target;
  const double ha = a.cross_spacing() / a.cross_section().half_extent;
  const double hb = b.cross_spacing() / b.cross_section().half_extent;
  const bool conforming = a.cross_section().shape == b.cross_section().shape &&
                          a.n_axial() == b.n_axial() && a.n_cross() == b.n_cross() &&
                          a.axial_spacing() == b.axial_spacing() &&
                          std::abs(ha - hb) <= 1e-12 * std::max(ha, hb);
  if (!conforming) throw InvalidArgument("change_of_variables: grids are not conforming");
  for (int j = 0; j < a.n_cross(); ++j) {
    for (int k = 0; k < a.n_cross(); ++k) {
      if (a.cross_masked(j, k) != b.cross_masked(j, k)) {
        throw InvalidArgument("change_of_variables: cell masks differ");
      }
    }
  }
  DisplacementField out(std::move(target), u.jumps_ptr());
  out.values() = u.values();
  return out;
}

namespace {

// Correction carried by the right trace at interface node (j, k): the jump of
// every right interface cell around the node, which must agree.
Vec3 right_trace_correction(const DisplacementField& u, int j, int k) {
  const Grid& grid = u.grid();
  Vec3 correction = Vec3::Zero();
  bool seen = false;
  for (int dj = -1; dj <= 0; ++dj) {
    for (int dk = -1; dk <= 0; ++dk) {
      const int cj = j + dj;
      const int ck = k + dk;
      if (cj < 0 || ck < 0 || cj >= grid.n_cross() || ck >= grid.n_cross()) continue;
      if (!grid.cross_masked(cj, ck)) continue;
      Vec3 b = Vec3::Zero();
      if (u.jumps() != nullptr) {
        const int s = u.jumps()->owner(cj, ck);
        if (s >= 0) b = u.jumps()->burgers(s);
      }
      if (seen && b != correction) {
        throw InvalidArgument("burgers_circuit: loop passes through a dislocation line");
      }
      correction = b;
      seen = true;
    }
  }
  return correction;
}

}  // namespace

Vec3 burgers_circuit(const DisplacementField& u, const LatticeLoop& loop) {
  const Grid& grid = u.grid();
  if (loop.size() < 2 || loop.front() != loop.back()) {
    throw InvalidArgument("burgers_circuit: loop must be closed");
  }
  const int i0 = grid.interface_layer();
  auto value = [&](const std::array<int, 3>& m, bool right_side) {
    const int node = grid.node_index(m[0], m[1], m[2]);
    Vec3 v = u.values()[static_cast<std::size_t>(node)];
    if (right_side && m[0] == i0) v += right_trace_correction(u, m[1], m[2]);
    return v;
  };
  Vec3 total = Vec3::Zero();
  for (std::size_t e = 0; e + 1 < loop.size(); ++e) {
    const auto& a = loop[e];
    const auto& b = loop[e + 1];
    int steps = 0;
    for (int d = 0; d < 3; ++d) {
      if (a[static_cast<std::size_t>(d)] < 0 || b[static_cast<std::size_t>(d)] < 0) {
        throw InvalidArgument("burgers_circuit: node outside the grid");
      }
      steps += std::abs(a[static_cast<std::size_t>(d)] - b[static_cast<std::size_t>(d)]);
    }
    if (steps != 1) throw InvalidArgument("burgers_circuit: consecutive nodes must share an edge");
    if (a[0] > grid.n_axial() || b[0] > grid.n_axial() || a[1] > grid.n_cross() || b[1] > grid.n_cross() ||
        a[2] > grid.n_cross() || b[2] > grid.n_cross()) {
      throw InvalidArgument("burgers_circuit: node outside the grid");
    }
    if (!grid.node_active(grid.node_index(a[0], a[1], a[2])) ||
        !grid.node_active(grid.node_index(b[0], b[1], b[2]))) {
      throw InvalidArgument("burgers_circuit: loop leaves the masked domain");
    }
    const bool right = a[0] > i0 || b[0] > i0;
    total += value(b, right) - value(a, right);
  }
  return total;
}

void write_field(std::ostream& out, const DisplacementField& u, double h) {
  const std::uint64_t jump_id = u.jumps() != nullptr ? u.jumps()->hash() : 0;
  out << "misfit-field 1\n";
  out << "grid_hash " << hex64(u.grid().hash()) << "\n";
  out << "h " << std::setprecision(17) << h << "\n";
  out << "jump_id " << hex64(jump_id) << "\n";
  out << "nodes " << u.values().size() << "\n";
  out << std::setprecision(17);
  for (const Vec3& v : u.values()) out << v.x() << ' ' << v.y() << ' ' << v.z() << '\n';
}

DisplacementField read_field(std::istream& in, std::shared_ptr<const Grid> grid,
                             std::shared_ptr<const JumpSet> jumps) {
  std::string tag;
  int version = 0;
  std::string grid_hash;
  std::string jump_id;
  double h = 0.0;
  std::size_t count = 0;
  std::string key;
  in >> tag >> version;
  if (tag != "misfit-field" || version != 1) throw InvalidArgument("read_field: bad header");
  in >> key >> grid_hash;
  if (key != "grid_hash") throw InvalidArgument("read_field: missing grid_hash");
  in >> key >> h;
  if (key != "h") throw InvalidArgument("read_field: missing h");
  in >> key >> jump_id;
  if (key != "jump_id") throw InvalidArgument("read_field: missing jump_id");
  in >> key >> count;
  if (key != "nodes") throw InvalidArgument("read_field: missing node count");
  if (grid_hash != hex64(grid->hash())) throw InvalidArgument("read_field: grid hash mismatch");
  const std::string expected_jump = hex64(jumps ? jumps->hash() : 0);
  if (jump_id != expected_jump) throw InvalidArgument("read_field: jump id mismatch");
  DisplacementField u(std::move(grid), std::move(jumps));
  if (count != u.values().size()) throw InvalidArgument("read_field: node count mismatch");
  for (Vec3& v : u.values()) {
    if (!(in >> v.x() >> v.y() >> v.z())) throw InvalidArgument("read_field: truncated data");
  }
  u.validate();
  return u;
}

}  // namespace misfit
