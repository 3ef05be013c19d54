#include "misfit/experiments.hpp"

#include "misfit/hashing.hpp"

#include <Eigen/Geometry>

#include <algorithm>
#include <charconv>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>

namespace misfit {

std::string to_string(EstimateKind kind) { return kind == EstimateKind::elastic ? "elastic" : "dislocated"; }

namespace {

// Copies u onto a longer grid with the same section and spacing; new end
// layers continue the clamps.
DisplacementField extend_field(const DisplacementField& u, std::shared_ptr<const Grid> longer, const EndClamp& clamp) {
  const Grid& g = u.grid();
  const int offset = (longer->n_axial() - g.n_axial()) / 2;
  Vec3 t = Vec3::Zero();
  for (int n = 0; n < g.node_count(); ++n) {
    if (g.node_active(n) && g.node_multi_index(n)[0] == g.n_axial()) {
      t = u.values()[static_cast<std::size_t>(n)] - clamp.q * g.node_position(n);
      break;
    }
  }
  std::shared_ptr<const JumpSet> jumps;
  if (u.jumps() != nullptr) jumps = std::make_shared<const JumpSet>(*longer, u.jumps()->surfaces());
  DisplacementField out(longer, jumps);
  for (int n = 0; n < longer->node_count(); ++n) {
    if (!longer->node_active(n)) continue;
    const auto [i, j, k] = longer->node_multi_index(n);
    const int io = i - offset;
    const Vec3 x = longer->node_position(n);
    Vec3& y = out.values()[static_cast<std::size_t>(n)];
    if (io < 0) {
      y = clamp.p * x;
    } else if (io > g.n_axial()) {
      y = clamp.q * x + t;
    } else {
      y = u.values()[static_cast<std::size_t>(g.node_index(io, j, k))];
    }
  }
  return out;
}

void fill_from(GammaEstimate& est, const MinimizationResult& res) {
  est.energy = res.energy;
  est.restart_energies = res.restart_energies;
  est.converged = res.converged;
  est.iterations = res.iterations;
  est.grad_norm = res.grad_norm;
  est.field = res.field;
}

}  // namespace

GammaEstimate gamma_elastic(const CrossSection& section, double m, double spacing, const ElasticModel& model,
                            const SolverConfig& cfg, const ElasticOptions& options) {
  auto grid = make_grid(section, m, spacing);
  const EndClamp clamp{options.frame, options.frame * model.h(), 1};
  const ConstructionResult ramp = mismatch_ramp(RampSpec{section.half_extent}, grid, model);
  DisplacementField start = ramp.field;
  for (Vec3& y : start.values()) y = options.frame * y;
  GammaEstimate est;
  est.kind = EstimateKind::elastic;
  est.cross_section = section;
  est.m = m;
  est.spacing = spacing;
  est.initial_energy = total_energy(start, model, cfg.fluctuation_weight);
  est.construction = ramp.breakdown;
  fill_from(est, minimize_with_restarts(start, clamp, cfg, model));
  if (options.m_sensitivity) {
    MTriple triple;
    triple.e_m = est.energy;
    SolverConfig single = cfg;
    single.restarts = 1;
    DisplacementField current = est.field;
    double* slots[2] = {&triple.e_2m, &triple.e_4m};
    for (int level = 0; level < 2; ++level) {
      auto longer = make_grid(section, m * (level == 0 ? 2.0 : 4.0), spacing);
      const MinimizationResult res = minimize(extend_field(current, longer, clamp), clamp, single, model);
      *slots[level] = res.energy;
      current = res.field;
    }
    est.m_triple = triple;
  }
  return est;
}

namespace {

struct Candidate {
  int j = 0;
  int k = 0;
  long dist = 0;
};

// Owner of the four cross cells around node (j, k): the common surface, -1 if
// all are free, -2 if mixed or partly outside the section.
int node_owner(const Grid& grid, const JumpSet& jumps, int j, int k) {
  int owner = -3;
  for (int dj = -1; dj <= 0; ++dj) {
    for (int dk = -1; dk <= 0; ++dk) {
      const int cj = j + dj;
      const int ck = k + dk;
      if (cj < 0 || ck < 0 || cj >= grid.n_cross() || ck >= grid.n_cross() || !grid.cross_masked(cj, ck)) return -2;
      const int o = jumps.owner(cj, ck);
      if (owner == -3) {
        owner = o;
      } else if (owner != o) {
        return -2;
      }
    }
  }
  return owner;
}

}  // namespace

double circuit_deviation(const DisplacementField& u) {
  if (u.jumps() == nullptr) return 0.0;
  const Grid& grid = u.grid();
  const JumpSet& jumps = *u.jumps();
  const int i0 = grid.interface_layer();
  const int n = grid.n_cross();
  double worst = 0.0;
  for (std::size_t s = 0; s < jumps.surfaces().size(); ++s) {
    const DislocationSpec& surface = jumps.surfaces()[s];
    if (surface.faces.empty()) continue;
    // interior node nearest to the face centroid
    double cj = 0.0;
    double ck = 0.0;
    for (int f : surface.faces) {
      cj += f / n + 0.5;
      ck += f % n + 0.5;
    }
    cj /= static_cast<double>(surface.faces.size());
    ck /= static_cast<double>(surface.faces.size());
    std::optional<std::array<int, 2>> inside;
    double best = 1e300;
    std::vector<Candidate> outside;
    for (int j = 0; j <= n; ++j) {
      for (int k = 0; k <= n; ++k) {
        const int o = node_owner(grid, jumps, j, k);
        if (o == static_cast<int>(s)) {
          const double d = (j - cj) * (j - cj) + (k - ck) * (k - ck);
          if (d < best) {
            best = d;
            inside = std::array<int, 2>{j, k};
          }
        } else if (o == -1) {
          outside.push_back({j, k, 0});
        }
      }
    }
    if (!inside || outside.empty()) continue;
    for (Candidate& c : outside) {
      c.dist = static_cast<long>(c.j - (*inside)[0]) * (c.j - (*inside)[0]) +
               static_cast<long>(c.k - (*inside)[1]) * (c.k - (*inside)[1]);
    }
    std::stable_sort(outside.begin(), outside.end(),
                     [](const Candidate& a, const Candidate& b) { return a.dist < b.dist; });
    bool done = false;
    for (std::size_t t = 0; t < outside.size() && t < 64 && !done; ++t) {
      const LatticeLoop loop = crossing_loop(i0 - 2, i0 + 2, *inside, {outside[t].j, outside[t].k});
      try {
        const Vec3 c = burgers_circuit(u, loop);
        worst = std::max(worst, (c + surface.burgers).norm() / (1.0 + surface.burgers.norm()));
        done = true;
      } catch (const InvalidArgument&) {
        // loop left the section or touched another line; try the next candidate
      }
    }
    if (!done) throw ConstraintError("circuit_deviation: no admissible loop around surface " + surface.id);
  }
  return worst;
}

namespace {

void verify_circuits(GammaEstimate& est) {
  est.circuit_error = circuit_deviation(est.field);
  if (est.circuit_error > 1e-10) {
    std::ostringstream msg;
    msg << "gamma_dislocated: Burgers circuit deviates by " << est.circuit_error << " on the final field";
    throw ConstraintError(msg.str());
  }
}

}  // namespace

GammaEstimate gamma_dislocated(const TileGlueSpec& tiles, double m, double spacing, const ElasticModel& model,
                               const SolverConfig& cfg, const GammaEstimate* base) {
  const CrossSection section{Shape::square, tiles.r};
  auto grid = make_grid(section, m, spacing);
  auto base_grid = tile_base_grid(tiles, *grid);
  GammaEstimate own_base;
  if (base == nullptr) {
    own_base = gamma_elastic(base_grid->cross_section(), m, spacing, model, cfg);
    base = &own_base;
  }
  const ConstructionResult glued = glued_tile_field(tiles, grid, base->field, model);
  const EndClamp clamp{Mat3::Identity(), model.h(), 1};
  GammaEstimate est;
  est.kind = EstimateKind::dislocated;
  est.cross_section = section;
  est.m = m;
  est.spacing = spacing;
  std::ostringstream id;
  id << "tiles_" << tiles.tiles_per_side << "x" << tiles.tiles_per_side;
  est.dislocation_id = id.str();
  est.initial_energy = glued.energy;
  est.construction = glued.breakdown;
  fill_from(est, minimize_with_restarts(glued.field, clamp, cfg, model));
  verify_circuits(est);
  return est;
}

GammaEstimate gamma_dislocated(const CrossSection& section, double m, double spacing,
                               const std::vector<DislocationSpec>& surfaces, const ElasticModel& model,
                               const SolverConfig& cfg) {
  auto grid = make_grid(section, m, spacing);
  auto jumps = std::make_shared<const JumpSet>(*grid, surfaces);
  const ConstructionResult ramp = mismatch_ramp(RampSpec{section.half_extent}, grid, model);
  DisplacementField start(grid, jumps);
  start.values() = ramp.field.values();
  const EndClamp clamp{Mat3::Identity(), model.h(), 1};
  GammaEstimate est;
  est.kind = EstimateKind::dislocated;
  est.cross_section = section;
  est.m = m;
  est.spacing = spacing;
  for (const DislocationSpec& s : surfaces) est.dislocation_id += (est.dislocation_id.empty() ? "" : "+") + s.id;
  est.initial_energy = total_energy(start, model, cfg.fluctuation_weight);
  fill_from(est, minimize_with_restarts(start, clamp, cfg, model));
  verify_circuits(est);
  return est;
}

CrossoverResult crossover_sweep(const std::vector<double>& r_list, const ElasticModel& model,
                                const SolverConfig& cfg, const CrossoverOptions& options) {
  if (r_list.empty()) throw InvalidArgument("crossover_sweep: empty radius list");
  for (std::size_t i = 1; i < r_list.size(); ++i) {
    if (!(r_list[i] > r_list[i - 1])) throw InvalidArgument("crossover_sweep: radii must increase");
  }
  CrossoverResult out;
  for (double r : r_list) {
    CrossoverRow row;
    row.r = r;
    row.spacing = r / options.cells_per_radius;
    row.mu = options.mu_cells * row.spacing;
    const double m = options.m_over_r * r;
    const double r3 = r * r * r;
    row.elastic = gamma_elastic({Shape::square, r}, m, row.spacing, model, cfg).energy / r3;
    row.dislocated = 1e300;
    for (int k : options.tiles_per_side) {
      const TileGlueSpec tiles{r, row.mu, m, k};
      const GammaEstimate est = gamma_dislocated(tiles, m, row.spacing, model, cfg);
      row.by_tiles.emplace_back(k, est.energy / r3);
      row.construction_by_tiles.emplace_back(k, est.initial_energy / r3);
      if (est.energy / r3 < row.dislocated) {
        row.dislocated = est.energy / r3;
        row.best_tiles = k;
      }
    }
    if (!out.crossover_radius && row.dislocated < row.elastic) out.crossover_radius = r;
    out.rows.push_back(std::move(row));
  }
  double mean = 0.0;
  for (const auto& row : out.rows) mean += row.elastic;
  mean /= static_cast<double>(out.rows.size());
  for (const auto& row : out.rows) {
    out.elastic_spread = std::max(out.elastic_spread, mean > 0.0 ? std::abs(row.elastic / mean - 1.0) : 0.0);
  }
  return out;
}

RotationInvarianceResult rotation_invariance_check(const std::vector<Mat3>& rotations, const CrossSection& section,
                                                   double m, double spacing, const ElasticModel& model,
                                                   const SolverConfig& cfg) {
  RotationInvarianceResult out;
  out.reference = gamma_elastic(section, m, spacing, model, cfg).energy;
  for (const Mat3& r : rotations) {
    if ((r.transpose() * r - Mat3::Identity()).norm() > 1e-10 || r.determinant() <= 0.0) {
      throw InvalidArgument("rotation_invariance_check: samples must be proper rotations");
    }
    ElasticOptions opt;
    opt.frame = r;
    const double e = gamma_elastic(section, m, spacing, model, cfg, opt).energy;
    out.rotated.push_back(e);
    const double dev = out.reference > 0.0 ? std::abs(e - out.reference) / out.reference : std::abs(e);
    out.max_relative_deviation = std::max(out.max_relative_deviation, dev);
  }
  return out;
}

std::vector<Mat3> random_rotations(int count, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  std::vector<Mat3> out;
  for (int i = 0; i < count; ++i) {
    Eigen::Quaterniond q(normal(rng), normal(rng), normal(rng), normal(rng));
    q.normalize();
    out.push_back(q.toRotationMatrix());
  }
  return out;
}

RecoverySpec recovery_setup(const CrossSection& section, const RecoverySetup& setup, const ElasticModel& model,
                            const SolverConfig& cfg, GammaEstimate* block_out) {
  GammaEstimate block = gamma_elastic(section, setup.block_half_length * section.half_extent, setup.spacing, model, cfg);
  const Mat3 bent = rotation_about(Vec3::UnitY(), setup.angle);
  RecoverySpec spec;
  spec.profile.left_points = {setup.left_point};
  spec.profile.left_rotations = {bent, Mat3::Identity()};
  spec.profile.right_points = {setup.right_point};
  spec.profile.right_matrices = {model.h(), bent * model.h()};
  spec.h = setup.h;
  spec.sigma = setup.sigma_factor * std::sqrt(setup.h);
  spec.length = setup.length;
  spec.block = block.field;
  spec.block_energy = block.energy;
  if (block_out != nullptr) *block_out = std::move(block);
  return spec;
}

std::vector<TrendRow> gamma_convergence_trend(const std::vector<double>& h_list, const RecoverySpec& base,
                                              const ElasticModel& model, const TrendOptions& options) {
  for (std::size_t i = 1; i < h_list.size(); ++i) {
    if (!(h_list[i] < h_list[i - 1])) throw InvalidArgument("gamma_convergence_trend: h must decrease");
  }
  std::vector<TrendRow> rows;
  for (double h : h_list) {
    RecoverySpec spec = base;
    spec.h = h;
    spec.sigma = options.sigma_factor * std::sqrt(h);
    const ConstructionResult rec = recovery_sequence(spec, model);
    TrendRow row;
    row.h = h;
    row.sigma = spec.sigma;
    row.recovery = rec.energy;
    row.recovery_thin = rescaled_energy_thin(rec.field, h, model);
    row.bands = rec.part("bands");
    row.band_constant = row.bands * spec.sigma / h;
    row.minimized = row.recovery_thin;
    if (options.minimize) {
      const DisplacementField thin = change_of_variables(rec.field, thin_grid(rec.field.grid(), h));
      const EndClamp clamp{base.profile.left_rotations.front(), base.profile.right_matrices.back(), 1};
      SolverConfig cfg = options.minimizer;
      cfg.restarts = 1;
      const MinimizationResult res = minimize(thin, clamp, cfg, model);
      row.minimized = res.energy / (h * h * h);
      row.iterations = res.iterations;
    }
    rows.push_back(row);
  }
  return rows;
}

// ---------------------------------------------------------------------------
// persistence

std::string format_double(double v) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

nlohmann::json to_json(const GammaEstimate& e) {
  nlohmann::json j;
  j["kind"] = to_string(e.kind);
  j["shape"] = to_string(e.cross_section.shape);
  j["r"] = e.r();
  j["M"] = e.m;
  j["spacing"] = e.spacing;
  j["dislocation_id"] = e.dislocation_id;
  j["energy"] = e.energy;
  j["restart_energies"] = e.restart_energies;
  j["initial_energy"] = e.initial_energy;
  j["converged"] = e.converged;
  j["iterations"] = e.iterations;
  j["grad_norm"] = e.grad_norm;
  j["circuit_error"] = e.circuit_error;
  nlohmann::json parts = nlohmann::json::object();
  for (const auto& [k, v] : e.construction) parts[k] = v;
  j["construction"] = parts;
  if (e.m_triple) {
    j["m_triple"] = {e.m_triple->e_m, e.m_triple->e_2m, e.m_triple->e_4m};
  }
  return j;
}

nlohmann::json to_json(const CrossoverResult& result) {
  nlohmann::json j;
  nlohmann::json rows = nlohmann::json::array();
  for (const auto& row : result.rows) {
    nlohmann::json r;
    r["r"] = row.r;
    r["spacing"] = row.spacing;
    r["mu"] = row.mu;
    r["elastic_per_r3"] = row.elastic;
    r["dislocated_per_r3"] = row.dislocated;
    r["best_tiles_per_side"] = row.best_tiles;
    nlohmann::json tiles = nlohmann::json::array();
    for (std::size_t i = 0; i < row.by_tiles.size(); ++i) {
      tiles.push_back({{"tiles_per_side", row.by_tiles[i].first},
                       {"minimized_per_r3", row.by_tiles[i].second},
                       {"construction_per_r3", row.construction_by_tiles[i].second}});
    }
    r["tiles"] = tiles;
    rows.push_back(r);
  }
  j["rows"] = rows;
  j["crossover_radius"] = result.crossover_radius ? nlohmann::json(*result.crossover_radius) : nlohmann::json("none");
  j["elastic_spread"] = result.elastic_spread;
  return j;
}

nlohmann::json to_json(const std::vector<TrendRow>& rows) {
  nlohmann::json out = nlohmann::json::array();
  for (const auto& row : rows) {
    out.push_back({{"h", row.h},
                   {"sigma", row.sigma},
                   {"recovery", row.recovery},
                   {"recovery_thin", row.recovery_thin},
                   {"bands", row.bands},
                   {"band_constant", row.band_constant},
                   {"minimized", row.minimized},
                   {"iterations", row.iterations}});
  }
  return out;
}

void write_record(const std::string& dir, const ExperimentRecord& record) {
  std::filesystem::create_directories(dir);
  nlohmann::json j;
  j["name"] = record.name;
  j["config_hash"] = record.config_hash;
  j["seed"] = record.seed;
  j["content_id"] = record.content_id;
  j["payload"] = record.payload;
  std::ofstream out(std::filesystem::path(dir) / (record.name + ".json"));
  if (!out) throw InvalidArgument("write_record: cannot open output in " + dir);
  out << j.dump(2) << '\n';
}

void write_csv(const std::string& path, const std::string& config_hash, const std::vector<std::string>& header,
               const std::vector<std::vector<double>>& rows) {
  std::ofstream out(path);
  if (!out) throw InvalidArgument("write_csv: cannot open " + path);
  out << "# config_hash " << config_hash << '\n';
  for (std::size_t i = 0; i < header.size(); ++i) out << (i ? "," : "") << header[i];
  out << '\n';
  for (const auto& row : rows) {
    for (std::size_t i = 0; i < row.size(); ++i) out << (i ? "," : "") << format_double(row[i]);
    out << '\n';
  }
}

void write_plot_data(const std::string& path, const std::string& config_hash, const std::string& x_label,
                     const std::string& y_label, const std::vector<std::pair<double, double>>& points) {
  std::ofstream out(path);
  if (!out) throw InvalidArgument("write_plot_data: cannot open " + path);
  out << "# config_hash " << config_hash << '\n';
  out << "# " << x_label << ' ' << y_label << '\n';
  for (const auto& [x, y] : points) out << format_double(x) << ' ' << format_double(y) << '\n';
}

}  // namespace misfit
