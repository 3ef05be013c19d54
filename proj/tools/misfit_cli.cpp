// misfit: run transition-energy experiments from a YAML configuration.
//
//   misfit [--config run.yaml] [--out dir] [--threads n] [--seed s] [command]
//
// Exit status: 0 success, 2 invalid configuration, 3 solver abort,
// 4 other failures. Records are written before a failing status is returned.

#include "misfit/config.hpp"
#include "misfit/estimates.hpp"
#include "misfit/experiments.hpp"
#include "misfit/hashing.hpp"
#include "misfit/parallel.hpp"

#include <CLI11.hpp>

#include <chrono>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>

namespace fs = std::filesystem;
using namespace misfit;

namespace {

struct RunContext {
  RunConfig cfg;
  std::string hash;
  fs::path out;
  std::ostringstream summary;

  ExperimentRecord record(const std::string& name, nlohmann::json payload) const {
    ExperimentRecord r;
    r.name = name;
    r.config_hash = hash;
    r.seed = cfg.solver.seed;
    r.content_id = hex64(hash_text(cfg.command + "\n" + to_text(cfg)));
    r.payload = std::move(payload);
    return r;
  }
  std::string path(const std::string& file) const { return (out / file).string(); }
};

nlohmann::json to_json(const ProbeReport& r) {
  return {{"probe", r.probe},
          {"seed", r.seed},
          {"samples", r.samples},
          {"verification_samples", r.verification_samples},
          {"calibrated_constant", r.calibrated_constant},
          {"verification_max", r.verification_max},
          {"min_ratio", r.min_ratio},
          {"violations", r.violations},
          {"stable", r.stable},
          {"lower_constant", r.lower_constant},
          {"upper_constant", r.upper_constant}};
}

nlohmann::json to_json(const ConstructionResult& c) {
  nlohmann::json parts = nlohmann::json::object();
  for (const auto& [name, value] : c.breakdown) parts[name] = value;
  return {{"energy", c.energy}, {"breakdown", parts}, {"warnings", c.warnings}};
}

std::vector<DislocationSpec> dislocations(const RunConfig& cfg, const Grid& grid) {
  std::vector<DislocationSpec> out;
  if (!cfg.geometry.dislocation) return out;
  const DislocationBlock& d = *cfg.geometry.dislocation;
  Polygon curve;
  for (const auto& v : d.polygon) curve.emplace_back(v[0], v[1]);
  out.push_back(rasterize_dislocation(curve, grid, Vec3(d.burgers[0], d.burgers[1], d.burgers[2]), d.id));
  if (!out.back().warning.empty()) std::cerr << "warning: " << out.back().warning << '\n';
  return out;
}

void run_gamma(RunContext& ctx) {
  const RunConfig& cfg = ctx.cfg;
  const ElasticModel model = model_from(cfg);
  const CrossSection section = section_from(cfg);
  GammaEstimate est;
  if (cfg.geometry.dislocation) {
    const auto grid = make_grid(section, cfg.geometry.m, cfg.geometry.spacing);
    est = gamma_dislocated(section, cfg.geometry.m, cfg.geometry.spacing, dislocations(cfg, *grid), model,
                           solver_from(cfg));
  } else {
    ElasticOptions opt;
    opt.m_sensitivity = cfg.experiment.m_sensitivity;
    est = gamma_elastic(section, cfg.geometry.m, cfg.geometry.spacing, model, solver_from(cfg), opt);
  }
  write_record(ctx.out.string(), ctx.record("gamma", to_json(est)));
  std::vector<std::pair<double, double>> restarts;
  for (std::size_t i = 0; i < est.restart_energies.size(); ++i) {
    restarts.emplace_back(static_cast<double>(i), est.restart_energies[i]);
  }
  write_plot_data(ctx.path("gamma_restarts.dat"), ctx.hash, "restart", "energy", restarts);
  ctx.summary << "gamma (" << to_string(est.kind) << ") on " << to_string(section.shape) << " r = "
              << format_double(section.half_extent) << ", M = " << format_double(est.m)
              << ", spacing = " << format_double(est.spacing) << '\n';
  ctx.summary << "estimate: " << format_double(est.energy) << " (construction " << format_double(est.initial_energy)
              << ", " << (est.converged ? "converged" : "not converged") << " after " << est.iterations
              << " iterations)\n";
  if (est.m_triple) {
    const MTriple& t = *est.m_triple;
    ctx.summary << "M-sensitivity: E(M) = " << format_double(t.e_m) << ", E(2M) = " << format_double(t.e_2m)
                << ", E(4M) = " << format_double(t.e_4m) << '\n';
    write_plot_data(ctx.path("gamma_m_sensitivity.dat"), ctx.hash, "M", "energy",
                    {{est.m, t.e_m}, {2.0 * est.m, t.e_2m}, {4.0 * est.m, t.e_4m}});
  }
}

void run_sweep(RunContext& ctx) {
  const RunConfig& cfg = ctx.cfg;
  const ExperimentBlock& ex = cfg.experiment;
  CrossoverOptions opt;
  opt.cells_per_radius = ex.cells_per_radius;
  opt.m_over_r = ex.m_over_r;
  opt.mu_cells = ex.mu_cells;
  opt.tiles_per_side = ex.tiles_per_side;
  const CrossoverResult result = crossover_sweep(ex.r_list, model_from(cfg), solver_from(cfg), opt);
  write_record(ctx.out.string(), ctx.record("crossover", to_json(result)));

  std::vector<std::vector<double>> rows;
  std::vector<std::pair<double, double>> elastic, dislocated;
  for (const CrossoverRow& row : result.rows) {
    double construction = 0.0;
    for (const auto& [k, e] : row.construction_by_tiles) {
      if (k == row.best_tiles) construction = e;
    }
    rows.push_back({row.r, row.spacing, row.mu, row.elastic, row.dislocated, static_cast<double>(row.best_tiles),
                    construction, row.dislocated / row.elastic});
    elastic.emplace_back(row.r, row.elastic);
    dislocated.emplace_back(row.r, row.dislocated);
  }
  write_csv(ctx.path("crossover.csv"), ctx.hash,
            {"r", "spacing", "mu", "elastic_per_r3", "dislocated_per_r3", "best_tiles", "construction_per_r3",
             "dislocated_over_elastic"},
            rows);
  write_plot_data(ctx.path("crossover_elastic.dat"), ctx.hash, "r", "elastic_per_r3", elastic);
  write_plot_data(ctx.path("crossover_dislocated.dat"), ctx.hash, "r", "dislocated_per_r3", dislocated);

  ctx.summary << "r           elastic/r^3     dislocated/r^3  tiles\n";
  for (const CrossoverRow& row : result.rows) {
    ctx.summary << format_double(row.r) << "  " << format_double(row.elastic) << "  "
                << format_double(row.dislocated) << "  " << row.best_tiles << '\n';
  }
  ctx.summary << "elastic spread: " << format_double(result.elastic_spread) << '\n';
  if (result.crossover_radius) {
    ctx.summary << "crossover radius: " << format_double(*result.crossover_radius) << '\n';
  } else {
    ctx.summary << "crossover radius: none in range\n";
  }
}

RecoverySetup recovery_from(const RunConfig& cfg, double h) {
  const ExperimentBlock& ex = cfg.experiment;
  RecoverySetup setup;
  setup.angle = ex.recovery_angle;
  setup.left_point = ex.recovery_left_point;
  setup.right_point = ex.recovery_right_point;
  setup.block_half_length = ex.recovery_block_half_length;
  setup.spacing = cfg.geometry.spacing;
  setup.length = ex.recovery_length;
  setup.h = h;
  setup.sigma_factor = ex.sigma_factor;
  return setup;
}

void run_construct(RunContext& ctx) {
  const RunConfig& cfg = ctx.cfg;
  const ElasticModel model = model_from(cfg);
  const CrossSection section = section_from(cfg);
  const std::string kind = cfg.experiment.construction;
  ConstructionResult result;
  if (kind == "ramp") {
    result = mismatch_ramp({cfg.geometry.m}, make_grid(section, cfg.geometry.m, cfg.geometry.spacing), model);
  } else if (kind == "tiles") {
    if (section.shape != Shape::square) throw InvalidArgument("construct tiles needs geometry.shape: square");
    const auto grid = make_grid(section, cfg.geometry.m, cfg.geometry.spacing);
    const TileGlueSpec spec{section.half_extent, cfg.experiment.mu_cells * cfg.geometry.spacing, cfg.geometry.m,
                            cfg.experiment.tiles_per_side.front()};
    const auto base = mismatch_ramp({cfg.geometry.m}, tile_base_grid(spec, *grid), model).field;
    result = glued_tile_field(spec, grid, base, model);
  } else {
    const RecoverySpec spec = recovery_setup(section, recovery_from(cfg, cfg.experiment.h), model, solver_from(cfg));
    result = recovery_sequence(spec, model);
  }
  for (const std::string& w : result.warnings) std::cerr << "warning: " << w << '\n';
  write_record(ctx.out.string(), ctx.record("construction_" + kind, to_json(result)));
  {
    std::ofstream field(ctx.path("construction_" + kind + "_field.txt"));
    field << "# config_hash " << ctx.hash << '\n';
    write_field(field, result.field, kind == "recovery" ? cfg.experiment.h : 1.0);
  }
  ctx.summary << "construction " << kind << ": energy " << format_double(result.energy) << '\n';
  for (const auto& [name, value] : result.breakdown) ctx.summary << "  " << name << ": " << format_double(value) << '\n';
}

void run_probe(RunContext& ctx) {
  const RunConfig& cfg = ctx.cfg;
  const ExperimentBlock& ex = cfg.experiment;
  const double p = cfg.material.p;
  const std::uint64_t seed = cfg.solver.seed;
  const auto grid = probe_grid(ex.probe_cells);
  std::vector<ProbeReport> reports;
  if (ex.probe == "all" || ex.probe == "rigidity") {
    reports.push_back(rigidity_ratio_probe(ex.probe_samples, grid, RigidityMode::classic, p, seed));
    reports.push_back(rigidity_ratio_probe(ex.probe_samples, grid, RigidityMode::truncated, p, seed));
  }
  if (ex.probe == "all" || ex.probe == "poincare") reports.push_back(poincare_probe(ex.probe_samples, grid, p, seed));
  if (ex.probe == "all" || ex.probe == "pointwise") {
    reports.push_back(pointwise_equivalence_probe(ex.probe_samples, ex.probe_g * Mat3::Identity(), p, seed));
  }
  nlohmann::json payload = nlohmann::json::array();
  std::vector<std::vector<double>> rows;
  for (std::size_t i = 0; i < reports.size(); ++i) {
    const ProbeReport& r = reports[i];
    payload.push_back(to_json(r));
    rows.push_back({static_cast<double>(i), static_cast<double>(r.samples), r.calibrated_constant,
                    r.verification_max, r.min_ratio, static_cast<double>(r.violations), r.stable ? 1.0 : 0.0});
    ctx.summary << r.probe << ": constant " << format_double(r.calibrated_constant) << ", doubled "
                << format_double(r.verification_max) << ", violations " << r.violations
                << (r.stable ? ", stable" : ", unstable") << '\n';
  }
  write_record(ctx.out.string(), ctx.record("probes", payload));
  write_csv(ctx.path("probes.csv"), ctx.hash,
            {"probe_index", "samples", "calibrated", "verification_max", "min_ratio", "violations", "stable"}, rows);
}

void run_gammaconv(RunContext& ctx) {
  const RunConfig& cfg = ctx.cfg;
  const ElasticModel model = model_from(cfg);
  const SolverConfig solver = solver_from(cfg);
  GammaEstimate block;
  const RecoverySpec base =
      recovery_setup(section_from(cfg), recovery_from(cfg, cfg.experiment.h_list.front()), model, solver, &block);
  TrendOptions opt;
  opt.sigma_factor = cfg.experiment.sigma_factor;
  opt.minimizer = solver;
  opt.minimize = cfg.experiment.minimize;
  const std::vector<TrendRow> rows = gamma_convergence_trend(cfg.experiment.h_list, base, model, opt);
  nlohmann::json payload{{"gamma", block.energy}, {"rows", to_json(rows)}};
  write_record(ctx.out.string(), ctx.record("gamma_trend", payload));

  std::vector<std::vector<double>> table;
  std::vector<std::pair<double, double>> points;
  ctx.summary << "standalone gamma: " << format_double(block.energy) << '\n';
  ctx.summary << "h  recovery  minimized  band_constant\n";
  for (const TrendRow& r : rows) {
    table.push_back({r.h, r.sigma, r.recovery, r.recovery_thin, r.bands, r.band_constant, r.minimized});
    points.emplace_back(r.h, r.recovery);
    ctx.summary << format_double(r.h) << "  " << format_double(r.recovery) << "  " << format_double(r.minimized)
                << "  " << format_double(r.band_constant) << '\n';
  }
  write_csv(ctx.path("gamma_trend.csv"), ctx.hash,
            {"h", "sigma", "recovery", "recovery_thin", "bands", "band_constant", "minimized"}, table);
  write_plot_data(ctx.path("gamma_trend.dat"), ctx.hash, "h", "recovery", points);
}

void write_summary(const RunContext& ctx) {
  std::ofstream out(ctx.path("summary.txt"));
  out << "# config_hash " << ctx.hash << '\n' << ctx.summary.str();
  std::cout << ctx.summary.str();
}

void write_failure(RunContext& ctx, const std::string& kind, const std::string& message) {
  try {
    write_record(ctx.out.string(), ctx.record("failure", {{"kind", kind}, {"message", message}}));
  } catch (const std::exception& e) {
    std::cerr << "cannot persist failure record: " << e.what() << '\n';
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Transition energies of misfit heterostructured rods"};
  std::string config_path;
  std::optional<std::string> out_dir;
  std::optional<int> threads;
  std::optional<std::uint64_t> seed;
  std::string command;
  app.add_option("--config", config_path, "YAML run configuration")->check(CLI::ExistingFile);
  app.add_option("--out", out_dir, "output directory (env MISFIT_OUT)");
  app.add_option("--threads", threads, "worker threads (env MISFIT_THREADS)")->check(CLI::PositiveNumber);
  app.add_option("--seed", seed, "solver and sampling seed");
  app.add_option("command", command, "gamma | sweep | construct | probe | gammaconv (overrides the config)")
      ->check(CLI::IsMember({"gamma", "sweep", "construct", "probe", "gammaconv"}));
  CLI11_PARSE(app, argc, argv);

  RunContext ctx;
  try {
    ctx.cfg = config_path.empty() ? RunConfig{} : load_config(config_path);
    if (!command.empty()) ctx.cfg.command = command;
    if (const char* env = std::getenv("MISFIT_OUT"); env != nullptr && *env != '\0') ctx.cfg.output = env;
    if (const char* env = std::getenv("MISFIT_THREADS"); env != nullptr && *env != '\0') {
      try {
        ctx.cfg.threads = std::stoi(env);
      } catch (const std::exception&) {
        throw ConfigError("MISFIT_THREADS", 0, 0, "not an integer: " + std::string(env));
      }
      if (ctx.cfg.threads < 1) throw ConfigError("MISFIT_THREADS", 0, 0, "threads must be at least 1");
    }
    if (out_dir) ctx.cfg.output = *out_dir;
    if (threads) ctx.cfg.threads = *threads;
    if (seed) ctx.cfg.solver.seed = *seed;
    // re-validate the merged settings
    ctx.cfg = parse_config(to_text(ctx.cfg), config_path.empty() ? "<defaults>" : config_path);
  } catch (const ConfigError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  }

  ctx.hash = config_hash(ctx.cfg);
  ctx.out = ctx.cfg.output;
  set_thread_count(ctx.cfg.threads);
  const auto start = std::chrono::steady_clock::now();
  int status = 0;
  try {
    fs::create_directories(ctx.out);
    std::ofstream(ctx.path("config.yaml")) << "# config_hash " << ctx.hash << '\n' << to_text(ctx.cfg);
    const std::string& cmd = ctx.cfg.command;
    if (cmd == "gamma") run_gamma(ctx);
    else if (cmd == "sweep") run_sweep(ctx);
    else if (cmd == "construct") run_construct(ctx);
    else if (cmd == "probe") run_probe(ctx);
    else run_gammaconv(ctx);
    write_summary(ctx);
  } catch (const SolverError& e) {
    std::cerr << "solver abort: " << e.what() << '\n';
    write_failure(ctx, "solver", e.what());
    status = 3;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    write_failure(ctx, "error", e.what());
    status = 4;
  }
  const double seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  std::cerr << ctx.cfg.command << " finished in " << seconds << " s (config " << ctx.hash << ")\n";
  return status;
}
