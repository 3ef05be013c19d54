#include "misfit/solver.hpp"

#include "misfit/parallel.hpp"

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <deque>
#include <limits>
#include <ostream>
#include <random>
#include <sstream>

namespace misfit {

namespace {

using NodeValues = Eigen::Matrix<double, 8, 3>;
using ModeValues = Eigen::Matrix<double, 4, 3>;

// Sums of nodal values against the +-1 hourglass patterns xi1 xi2, xi2 xi3,
// xi1 xi3, xi1 xi2 xi3. They vanish exactly on affine data with exact
// coordinate differences.
ModeValues hourglass_modes(const NodeValues& v) {
  const auto d = [&](int a, int b) { return Eigen::RowVector3d(v.row(a) - v.row(b)); };
  // differences along x1 at the four (j, k) corners
  const Eigen::RowVector3d e00 = d(4, 0), e01 = d(5, 1), e10 = d(6, 2), e11 = d(7, 3);
  // differences along x2 at the two x1 = 0 k-corners
  const Eigen::RowVector3d f0 = d(2, 0), f1 = d(3, 1);
  ModeValues m;
  m.row(0) = (e11 - e01) + (e10 - e00);
  m.row(1) = (d(7, 5) - d(6, 4)) + (f1 - f0);
  m.row(2) = (e11 - e10) + (e01 - e00);
  m.row(3) = (e11 - e10) - (e01 - e00);
  return m;
}

const Eigen::Matrix<double, 4, 8>& hourglass_patterns() {
  static const Eigen::Matrix<double, 4, 8> gamma = [] {
    Eigen::Matrix<double, 4, 8> g;
    for (int n = 0; n < 8; ++n) {
      const double x1 = ((n >> 2) & 1) ? 1.0 : -1.0;
      const double x2 = ((n >> 1) & 1) ? 1.0 : -1.0;
      const double x3 = (n & 1) ? 1.0 : -1.0;
      g(0, n) = x1 * x2;
      g(1, n) = x2 * x3;
      g(2, n) = x1 * x3;
      g(3, n) = x1 * x2 * x3;
    }
    return g;
  }();
  return gamma;
}

Eigen::Matrix4d hourglass_form(const NodeMatrix& k) {
  const auto& gamma = hourglass_patterns();
  Eigen::Matrix4d m = gamma * k * gamma.transpose() / 64.0;
  return 0.5 * (m + m.transpose());
}

}  // namespace

EnergyAssembler::EnergyAssembler(std::shared_ptr<const Grid> grid, std::shared_ptr<const JumpSet> jumps,
                                 ElasticModel model, Vec3 column_scale, double fluctuation_weight)
    : grid_(std::move(grid)),
      jumps_(std::move(jumps)),
      model_(std::move(model)),
      column_scale_(column_scale),
      fluctuation_weight_(fluctuation_weight),
      hourglass_(hourglass_form(gradient_fluctuation_matrix(*grid_, column_scale))) {
  if (!(fluctuation_weight >= 0.0)) throw InvalidArgument("fluctuation weight must be non-negative");
  const auto& cells = grid_->cells();
  phases_.reserve(cells.size());
  jump_of_cell_.reserve(cells.size());
  for (const Cell& cell : cells) {
    phases_.push_back(cell.center.x() < 0.0 ? Phase::left : Phase::right);
    jump_of_cell_.push_back(cell_jump(*grid_, jumps_.get(), cell));
  }
  const int nodes = grid_->node_count();
  node_cell_offsets_.assign(static_cast<std::size_t>(nodes) + 1, 0);
  for (const Cell& cell : cells) {
    for (int node : cell.nodes) ++node_cell_offsets_[static_cast<std::size_t>(node) + 1];
  }
  for (int n = 0; n < nodes; ++n) {
    node_cell_offsets_[static_cast<std::size_t>(n) + 1] += node_cell_offsets_[static_cast<std::size_t>(n)];
  }
  node_cells_.resize(static_cast<std::size_t>(node_cell_offsets_.back()));
  std::vector<int> fill(node_cell_offsets_.begin(), node_cell_offsets_.end() - 1);
  for (std::size_t c = 0; c < cells.size(); ++c) {
    for (int local = 0; local < 8; ++local) {
      const int node = cells[c].nodes[static_cast<std::size_t>(local)];
      node_cells_[static_cast<std::size_t>(fill[static_cast<std::size_t>(node)]++)] = {static_cast<int>(c), local};
    }
  }
}

namespace {

NodeValues gather(const Cell& cell, const std::vector<Vec3>& y, const Vec3* jump) {
  NodeValues v;
  for (int n = 0; n < 8; ++n) {
    Vec3 p = y[static_cast<std::size_t>(cell.nodes[static_cast<std::size_t>(n)])];
    if (jump != nullptr && ((n >> 2) & 1) == 0) p += *jump;
    v.row(n) = p.transpose();
  }
  return v;
}

}  // namespace

double EnergyAssembler::evaluate(const std::vector<Vec3>& y, std::vector<Vec3>* gradient) const {
  const auto& cells = grid_->cells();
  const double volume = grid_->cell_volume();
  const auto& g = grid_->shape_gradients();
  Eigen::Matrix<double, 8, 3> shape;
  for (int n = 0; n < 8; ++n) shape.row(n) = g[static_cast<std::size_t>(n)].transpose();
  const Eigen::DiagonalMatrix<double, 3> scale(column_scale_);
  const bool fluctuation = fluctuation_weight_ > 0.0;
  std::vector<double> energies(cells.size());
  std::vector<NodeValues> forces(gradient != nullptr ? cells.size() : 0);
  parallel_for(cells.size(), [&](std::size_t begin, std::size_t end) {
    Mat3 dw;
    for (std::size_t c = begin; c < end; ++c) {
      const NodeValues v = gather(cells[c], y, jump_of_cell_[c]);
      const Mat3 f = (v.transpose() * shape) * scale;
      double e = 0.0;
      if (gradient != nullptr) {
        e = volume * energy_density_and_gradient(phases_[c], f, model_, dw);
        forces[c].noalias() = shape * (volume * (dw * scale)).transpose();
      } else {
        e = volume * energy_density(phases_[c], f, model_);
      }
      if (fluctuation) {
        const ModeValues modes = hourglass_modes(v);
        const ModeValues km = hourglass_ * modes;
        e += fluctuation_weight_ * km.cwiseProduct(modes).sum();
        if (gradient != nullptr) forces[c].noalias() += (2.0 * fluctuation_weight_) * (hourglass_patterns().transpose() * km);
      }
      energies[c] = e;
    }
  });
  if (gradient != nullptr) {
    gradient->assign(y.size(), Vec3::Zero());
    parallel_for(y.size(), [&](std::size_t begin, std::size_t end) {
      for (std::size_t n = begin; n < end; ++n) {
        Vec3 acc = Vec3::Zero();
        for (int e = node_cell_offsets_[n]; e < node_cell_offsets_[n + 1]; ++e) {
          const auto [c, local] = node_cells_[static_cast<std::size_t>(e)];
          acc += forces[static_cast<std::size_t>(c)].row(local).transpose();
        }
        (*gradient)[n] = acc;
      }
    });
  }
  return ordered_sum(energies);
}

std::vector<double> EnergyAssembler::cell_energies(const std::vector<Vec3>& y) const {
  const auto& cells = grid_->cells();
  const double volume = grid_->cell_volume();
  const auto& g = grid_->shape_gradients();
  Eigen::Matrix<double, 8, 3> shape;
  for (int n = 0; n < 8; ++n) shape.row(n) = g[static_cast<std::size_t>(n)].transpose();
  const Eigen::DiagonalMatrix<double, 3> scale(column_scale_);
  std::vector<double> energies(cells.size());
  parallel_for(cells.size(), [&](std::size_t begin, std::size_t end) {
    for (std::size_t c = begin; c < end; ++c) {
      const NodeValues v = gather(cells[c], y, jump_of_cell_[c]);
      const Mat3 f = (v.transpose() * shape) * scale;
      double e = volume * energy_density(phases_[c], f, model_);
      if (fluctuation_weight_ > 0.0) {
        const ModeValues modes = hourglass_modes(v);
        e += fluctuation_weight_ * (hourglass_ * modes).cwiseProduct(modes).sum();
      }
      energies[c] = e;
    }
  });
  return energies;
}

double total_energy(const DisplacementField& u, const ElasticModel& model, double fluctuation_weight) {
  return EnergyAssembler(u.grid_ptr(), u.jumps_ptr(), model, Vec3::Ones(), fluctuation_weight)
      .evaluate(u.values(), nullptr);
}

bool in_left_slab(const Grid& grid, int node, const EndClamp& clamp) {
  return grid.node_multi_index(node)[0] <= clamp.slab_depth;
}

bool in_right_slab(const Grid& grid, int node, const EndClamp& clamp) {
  return grid.node_multi_index(node)[0] >= grid.n_axial() - clamp.slab_depth;
}

std::vector<Vec3> total_gradient(const DisplacementField& u, const ElasticModel& model, const EndClamp* clamp,
                                 double fluctuation_weight) {
  std::vector<Vec3> g;
  EnergyAssembler(u.grid_ptr(), u.jumps_ptr(), model, Vec3::Ones(), fluctuation_weight).evaluate(u.values(), &g);
  if (clamp != nullptr) {
    for (int n = 0; n < u.grid().node_count(); ++n) {
      if (in_left_slab(u.grid(), n, *clamp) || in_right_slab(u.grid(), n, *clamp)) {
        g[static_cast<std::size_t>(n)].setZero();
      }
    }
  }
  return g;
}

double normalized_gradient_norm(const Grid& grid, const std::vector<Vec3>& gradient) {
  double m = 0.0;
  for (const Vec3& v : gradient) m = std::max(m, v.cwiseAbs().maxCoeff());
  return m * grid.min_spacing() / grid.cell_volume();
}

DisplacementField apply_clamp(const DisplacementField& u, const EndClamp& clamp, const Vec3& translation) {
  DisplacementField out = u;
  const Grid& grid = u.grid();
  for (int n = 0; n < grid.node_count(); ++n) {
    if (!grid.node_active(n)) continue;
    const Vec3 x = grid.node_position(n);
    if (in_left_slab(grid, n, clamp)) {
      out.values()[static_cast<std::size_t>(n)] = clamp.p * x;
    } else if (in_right_slab(grid, n, clamp)) {
      out.values()[static_cast<std::size_t>(n)] = clamp.q * x + translation;
    }
  }
  return out;
}

namespace {

struct DofMap {
  std::vector<int> free_nodes;
  std::vector<int> right_nodes;
};

DofMap build_dofs(const Grid& grid, const EndClamp& clamp) {
  if (clamp.slab_depth < 1 || 2 * clamp.slab_depth >= grid.n_axial()) {
    throw InvalidArgument("EndClamp: slab depth must be >= 1 and leave free layers");
  }
  DofMap map;
  for (int n = 0; n < grid.node_count(); ++n) {
    if (!grid.node_active(n)) continue;
    if (in_right_slab(grid, n, clamp)) {
      map.right_nodes.push_back(n);
    } else if (!in_left_slab(grid, n, clamp)) {
      map.free_nodes.push_back(n);
    }
  }
  return map;
}

// Checks the clamp on u0 and returns the right slab translation.
Vec3 clamp_translation(const DisplacementField& u, const EndClamp& clamp, const DofMap& dofs) {
  const Grid& grid = u.grid();
  const double scale = 1.0 + grid.axial_half_length() + grid.cross_section().half_extent;
  const double tol = 1e-9 * scale;
  for (int n = 0; n < grid.node_count(); ++n) {
    if (grid.node_active(n) && in_left_slab(grid, n, clamp)) {
      const Vec3 x = grid.node_position(n);
      if ((u.values()[static_cast<std::size_t>(n)] - clamp.p * x).norm() > tol) {
        throw InvalidArgument("minimize: initial field violates the left clamp");
      }
    }
  }
  const int first = dofs.right_nodes.front();
  const Vec3 t = u.values()[static_cast<std::size_t>(first)] - clamp.q * grid.node_position(first);
  for (int n : dofs.right_nodes) {
    const Vec3 tn = u.values()[static_cast<std::size_t>(n)] - clamp.q * grid.node_position(n);
    if ((tn - t).norm() > tol) throw InvalidArgument("minimize: initial field violates the right clamp");
  }
  return t;
}

class Problem {
 public:
  Problem(const DisplacementField& u0, const EndClamp& clamp, const ElasticModel& model, const SolverConfig& cfg)
      : clamp_(clamp),
        dofs_(build_dofs(u0.grid(), clamp)),
        assembler_(u0.grid_ptr(), u0.jumps_ptr(), model, cfg.column_scale, cfg.fluctuation_weight),
        base_(apply_clamp(u0, clamp, clamp_translation(u0, clamp, dofs_))),
        work_(base_) {
    const Grid& grid = u0.grid();
    for (int n : dofs_.right_nodes) right_base_.push_back(clamp.q * grid.node_position(n));
  }

  Eigen::Index size() const { return static_cast<Eigen::Index>(3 * dofs_.free_nodes.size() + 3); }

  Eigen::VectorXd initial() const {
    Eigen::VectorXd x(size());
    for (std::size_t f = 0; f < dofs_.free_nodes.size(); ++f) {
      x.segment<3>(static_cast<Eigen::Index>(3 * f)) = base_.values()[static_cast<std::size_t>(dofs_.free_nodes[f])];
    }
    const int first = dofs_.right_nodes.front();
    x.tail<3>() = base_.values()[static_cast<std::size_t>(first)] - right_base_.front();
    return x;
  }

  void scatter(const Eigen::VectorXd& x, std::vector<Vec3>& y) const {
    for (std::size_t f = 0; f < dofs_.free_nodes.size(); ++f) {
      y[static_cast<std::size_t>(dofs_.free_nodes[f])] = x.segment<3>(static_cast<Eigen::Index>(3 * f));
    }
    const Vec3 t = x.tail<3>();
    for (std::size_t r = 0; r < dofs_.right_nodes.size(); ++r) {
      y[static_cast<std::size_t>(dofs_.right_nodes[r])] = right_base_[r] + t;
    }
  }

  double evaluate(const Eigen::VectorXd& x, Eigen::VectorXd* grad) {
    scatter(x, work_.values());
    if (grad == nullptr) return assembler_.evaluate(work_.values(), nullptr);
    const double e = assembler_.evaluate(work_.values(), &nodal_);
    grad->resize(size());
    for (std::size_t f = 0; f < dofs_.free_nodes.size(); ++f) {
      grad->segment<3>(static_cast<Eigen::Index>(3 * f)) = nodal_[static_cast<std::size_t>(dofs_.free_nodes[f])];
    }
    Vec3 gt = Vec3::Zero();
    for (int n : dofs_.right_nodes) gt += nodal_[static_cast<std::size_t>(n)];
    grad->tail<3>() = gt;
    return e;
  }

  DisplacementField field(const Eigen::VectorXd& x) const {
    DisplacementField out = base_;
    scatter(x, out.values());
    return out;
  }


 private:
  EndClamp clamp_;
  DofMap dofs_;
  EnergyAssembler assembler_;
  DisplacementField base_;
  DisplacementField work_;
  std::vector<Vec3> right_base_;
  std::vector<Vec3> nodal_;
};

double stress_norm(const Grid& grid, const Eigen::VectorXd& g) {
  return g.lpNorm<Eigen::Infinity>() * grid.min_spacing() / grid.cell_volume();
}

}  // namespace

MinimizationResult minimize(const DisplacementField& u0, const EndClamp& clamp, const SolverConfig& cfg,
                            const ElasticModel& model) {
  if (cfg.max_iter < 0) throw InvalidArgument("SolverConfig: max_iter must be >= 0");
  if (!(cfg.backtrack > 0.0 && cfg.backtrack < 1.0) || !(cfg.armijo > 0.0 && cfg.armijo < 1.0)) {
    throw InvalidArgument("SolverConfig: line-search parameters must lie in (0, 1)");
  }
  u0.validate();
  const Grid& grid = u0.grid();
  const double tol = cfg.grad_tol > 0.0 ? cfg.grad_tol : 1e-6 * std::sqrt(static_cast<double>(grid.cell_count()));

  MinimizationResult result;
  if (cfg.max_iter == 0) {
    result.field = u0;
    const EnergyAssembler assembler(u0.grid_ptr(), u0.jumps_ptr(), model, cfg.column_scale, cfg.fluctuation_weight);
    std::vector<Vec3> gradient;
    result.energy = assembler.evaluate(u0.values(), &gradient);
    for (int n = 0; n < grid.node_count(); ++n) {
      if (in_left_slab(grid, n, clamp) || in_right_slab(grid, n, clamp)) gradient[static_cast<std::size_t>(n)].setZero();
    }
    result.grad_norm = normalized_gradient_norm(grid, gradient);
    result.history.push_back(result.energy);
    result.restart_energies.push_back(result.energy);
    return result;
  }

  Problem problem(u0, clamp, model, cfg);
  Eigen::VectorXd x = problem.initial();
  Eigen::VectorXd g;
  double f = problem.evaluate(x, &g);
  if (!std::isfinite(f)) throw SolverError("minimize: initial energy is not finite");
  result.history.push_back(f);

  std::deque<Eigen::VectorXd> s_hist;
  std::deque<Eigen::VectorXd> y_hist;
  std::deque<double> rho_hist;
  const double a_min = grid.min_spacing();
  Eigen::VectorXd d(x.size());
  Eigen::VectorXd x_new(x.size());
  Eigen::VectorXd g_new(x.size());
  std::vector<double> alpha_buf(static_cast<std::size_t>(std::max(cfg.memory, 1)));
  int iter = 0;
  double gnorm = stress_norm(grid, g);
  while (iter < cfg.max_iter) {
    if (gnorm <= tol) {
      result.converged = true;
      break;
    }
    // two-loop recursion
    d = -g;
    const int m = static_cast<int>(s_hist.size());
    for (int i = m - 1; i >= 0; --i) {
      const double a = rho_hist[static_cast<std::size_t>(i)] * s_hist[static_cast<std::size_t>(i)].dot(d);
      alpha_buf[static_cast<std::size_t>(i)] = a;
      d -= a * y_hist[static_cast<std::size_t>(i)];
    }
    if (m > 0) {
      const auto& sl = s_hist.back();
      const auto& yl = y_hist.back();
      d *= sl.dot(yl) / yl.squaredNorm();
    }
    for (int i = 0; i < m; ++i) {
      const double b = rho_hist[static_cast<std::size_t>(i)] * y_hist[static_cast<std::size_t>(i)].dot(d);
      d += (alpha_buf[static_cast<std::size_t>(i)] - b) * s_hist[static_cast<std::size_t>(i)];
    }
    double slope = g.dot(d);
    if (!(slope < 0.0)) {
      s_hist.clear();
      y_hist.clear();
      rho_hist.clear();
      d = -g;
      slope = g.dot(d);
    }
    const double dmax = d.lpNorm<Eigen::Infinity>();
    double step = s_hist.empty() ? 0.1 * a_min / dmax : 1.0;
    if (step * dmax > a_min) step = a_min / dmax;

    bool accepted = false;
    double f_new = f;
    for (int ls = 0; ls < 60; ++ls) {
      x_new = x + step * d;
      f_new = problem.evaluate(x_new, &g_new);
      if (!std::isfinite(f_new)) {
        std::ostringstream msg;
        msg << "minimize: non-finite energy at iteration " << iter << " (step " << step
            << "); field blow-up";
        throw SolverError(msg.str());
      }
      if (f_new <= f + cfg.armijo * step * slope) {
        accepted = true;
        break;
      }
      step *= cfg.backtrack;
    }
    if (!accepted) {
      if (!s_hist.empty()) {
        s_hist.clear();
        y_hist.clear();
        rho_hist.clear();
        continue;
      }
      break;
    }
    Eigen::VectorXd s = x_new - x;
    Eigen::VectorXd yv = g_new - g;
    const double sy = s.dot(yv);
    if (sy > 1e-12 * s.norm() * yv.norm() && sy > 0.0) {
      s_hist.push_back(std::move(s));
      y_hist.push_back(std::move(yv));
      rho_hist.push_back(1.0 / sy);
      if (static_cast<int>(s_hist.size()) > std::max(cfg.memory, 1)) {
        s_hist.pop_front();
        y_hist.pop_front();
        rho_hist.pop_front();
      }
    }
    x.swap(x_new);
    g.swap(g_new);
    f = f_new;
    ++iter;
    gnorm = stress_norm(grid, g);
    result.history.push_back(f);
    if (cfg.log != nullptr && cfg.log_every > 0 && iter % cfg.log_every == 0) {
      *cfg.log << "iter " << iter << " energy " << f << " grad " << gnorm << "\n";
    }
  }
  if (!result.converged && gnorm <= tol) result.converged = true;

  result.field = problem.field(x);
  result.energy = f;
  result.iterations = iter;
  result.grad_norm = gnorm;
  result.restart_energies.push_back(f);
  return result;
}

MinimizationResult minimize_with_restarts(const DisplacementField& u0, const EndClamp& clamp,
                                          const SolverConfig& cfg, const ElasticModel& model) {
  const int runs = std::max(1, cfg.restarts);
  MinimizationResult best = minimize(u0, clamp, cfg, model);
  std::vector<double> energies{best.energy};
  const Grid& grid = u0.grid();
  const double amplitude = cfg.perturbation * grid.min_spacing();
  for (int r = 1; r < runs; ++r) {
    DisplacementField start = u0;
    std::mt19937_64 rng(cfg.seed + static_cast<std::uint64_t>(r));
    std::uniform_real_distribution<double> unit(-1.0, 1.0);
    for (int n = 0; n < grid.node_count(); ++n) {
      if (!grid.node_active(n) || in_left_slab(grid, n, clamp) || in_right_slab(grid, n, clamp)) continue;
      Vec3& v = start.values()[static_cast<std::size_t>(n)];
      const double a = unit(rng);
      const double b = unit(rng);
      const double c = unit(rng);
      v += amplitude * Vec3(a, b, c);
    }
    MinimizationResult run = minimize(start, clamp, cfg, model);
    energies.push_back(run.energy);
    if (run.energy < best.energy) best = std::move(run);
  }
  best.restart_energies = energies;
  return best;
}

}  // namespace misfit
