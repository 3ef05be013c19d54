#include "misfit/parallel.hpp"
#include "misfit/solver.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <random>

namespace misfit {
namespace {

std::shared_ptr<const Grid> small_grid(Shape shape = Shape::square) {
  return make_grid({shape, 0.5}, 0.75, 0.125);
}

DisplacementField perturbed_identity(std::shared_ptr<const Grid> grid, const EndClamp& clamp, double amp,
                                     std::uint64_t seed) {
  DisplacementField u(grid);
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> d(-1.0, 1.0);
  for (int n = 0; n < grid->node_count(); ++n) {
    if (in_left_slab(*grid, n, clamp) || in_right_slab(*grid, n, clamp)) continue;
    u.values()[static_cast<std::size_t>(n)] += amp * Vec3(d(rng), d(rng), d(rng));
  }
  return u;
}

TEST(TotalEnergyTest, LeftPhaseAtIdentityIsZero) {
  const auto grid = small_grid();
  const ElasticModel model;
  const DisplacementField u(grid);
  const EnergyAssembler assembler(grid, nullptr, model);
  const auto energies = assembler.cell_energies(u.values());
  for (std::size_t c = 0; c < energies.size(); ++c) {
    if (assembler.phase(c) == Phase::left) EXPECT_EQ(energies[c], 0.0);
  }
  const ElasticModel no_mismatch(MismatchSpec::from_alpha(0.0), 1.5);
  EXPECT_EQ(total_energy(u, no_mismatch), 0.0);
}

TEST(TotalEnergyTest, MismatchMapGivesLeftVolumeTimesDistance) {
  const auto grid = make_grid({Shape::disk, 1.0}, 1.0, 0.25);
  const ElasticModel model;
  const Mat3 h = model.h();
  const auto u = DisplacementField::from_map(grid, nullptr, [&](const Vec3& x) { Vec3 r = h * x; return r; });
  const double left_volume = 0.5 * grid->cell_count() * grid->cell_volume();
  const double expected = 3.0 * 0.05 * 0.05 * left_volume;
  EXPECT_NEAR(total_energy(u, model), expected, 1e-13 * expected);
}

TEST(TotalGradientTest, VanishesAtPhaseMinima) {
  const auto grid = small_grid();
  const ElasticModel model;
  const EnergyAssembler assembler(grid, nullptr, model);
  const DisplacementField id(grid);
  const auto g_id = total_gradient(id, model);
  const Mat3 h = model.h();
  const auto uh = DisplacementField::from_map(grid, nullptr, [&](const Vec3& x) { Vec3 r = h * x; return r; });
  const auto g_h = total_gradient(uh, model);
  for (int n = 0; n < grid->node_count(); ++n) {
    const int i = grid->node_multi_index(n)[0];
    if (i < grid->interface_layer()) EXPECT_LT(g_id[static_cast<std::size_t>(n)].norm(), 1e-16);
    if (i > grid->interface_layer()) EXPECT_LT(g_h[static_cast<std::size_t>(n)].norm(), 1e-16);
  }
}

TEST(TotalGradientTest, MatchesFiniteDifferences) {
  const auto grid = make_grid({Shape::disk, 0.5}, 0.5, 0.125);
  const Vec3 hb(0.01, 0.02, -0.01);
  const auto jumps = std::make_shared<const JumpSet>(
      *grid, std::vector<DislocationSpec>{rasterize_dislocation(square_polygon({0, 0}, 0.25), *grid, hb)});
  const ElasticModel model;
  DisplacementField u(grid, jumps);
  std::mt19937_64 rng(21);
  std::uniform_real_distribution<double> d(-1.0, 1.0);
  for (Vec3& v : u.values()) v += 0.03 * Vec3(d(rng), d(rng), d(rng));
  const auto g = total_gradient(u, model);
  const EnergyAssembler assembler(grid, jumps, model);
  double max_err = 0.0;
  double max_g = 0.0;
  const double step = 1e-6;
  for (int n = 0; n < grid->node_count(); n += 3) {
    if (!grid->node_active(n)) continue;
    for (int c = 0; c < 3; ++c) {
      DisplacementField up = u;
      DisplacementField dn = u;
      up.values()[static_cast<std::size_t>(n)][c] += step;
      dn.values()[static_cast<std::size_t>(n)][c] -= step;
      const double fd = (assembler.evaluate(up.values(), nullptr) - assembler.evaluate(dn.values(), nullptr)) /
                        (2.0 * step);
      max_err = std::max(max_err, std::abs(fd - g[static_cast<std::size_t>(n)][c]));
      max_g = std::max(max_g, std::abs(g[static_cast<std::size_t>(n)][c]));
    }
  }
  EXPECT_LE(max_err, 1e-5 * max_g);
}

TEST(TotalEnergyTest, FluctuationTermMatchesQuadratureForm) {
  const auto grid = make_grid({Shape::square, 0.5}, 0.5, 0.125);
  const ElasticModel model;
  DisplacementField u(grid);
  std::mt19937_64 rng(17);
  std::uniform_real_distribution<double> d(-1.0, 1.0);
  for (Vec3& v : u.values()) v += 0.05 * Vec3(d(rng), d(rng), d(rng));
  const NodeMatrix k = gradient_fluctuation_matrix(*grid);
  // affine data lies in the kernel
  Eigen::Matrix<double, 8, 3> affine;
  const Cell& first = grid->cells()[0];
  for (int n = 0; n < 8; ++n) affine.row(n) = (Mat3::Identity() * 1.3 * grid->node_position(first.nodes[n])).transpose();
  EXPECT_LT((k * affine).norm(), 1e-14);
  double direct = 0.0;
  for (const Cell& cell : grid->cells()) {
    Eigen::Matrix<double, 8, 3> y;
    for (int n = 0; n < 8; ++n) y.row(n) = u.values()[static_cast<std::size_t>(cell.nodes[n])].transpose();
    direct += (y.transpose() * k * y).trace();
  }
  const double with = EnergyAssembler(grid, nullptr, model, Vec3::Ones(), 2.0).evaluate(u.values(), nullptr);
  const double without = EnergyAssembler(grid, nullptr, model, Vec3::Ones(), 0.0).evaluate(u.values(), nullptr);
  EXPECT_NEAR(with - without, 2.0 * direct, 1e-10 * direct);
}

TEST(TotalGradientTest, ClampZeroesSlabEntries) {
  const auto grid = small_grid();
  const ElasticModel model;
  const EndClamp clamp{Mat3::Identity(), model.h(), 1};
  const auto g = total_gradient(perturbed_identity(grid, clamp, 0.01, 3), model, &clamp);
  for (int n = 0; n < grid->node_count(); ++n) {
    if (in_left_slab(*grid, n, clamp) || in_right_slab(*grid, n, clamp)) {
      EXPECT_EQ(g[static_cast<std::size_t>(n)], Vec3::Zero());
    }
  }
}

TEST(MinimizeTest, RecoversRigidStateWhenWellsCoincide) {
  const auto grid = small_grid();
  const ElasticModel model(MismatchSpec::from_alpha(0.0), 1.5);
  const EndClamp clamp;
  SolverConfig cfg;
  cfg.grad_tol = 1e-10;
  const DisplacementField u0 = perturbed_identity(grid, clamp, 0.01, 5);
  const MinimizationResult r = minimize(u0, clamp, cfg, model);
  EXPECT_LE(r.energy, 1e-8);
  double dev = 0.0;
  for (const Mat3& g : strain(r.field).cells) dev = std::max(dev, (g - Mat3::Identity()).norm());
  EXPECT_LE(dev, 1e-4);
}

TEST(MinimizeTest, ZeroIterationsReturnsInput) {
  const auto grid = small_grid();
  const ElasticModel model;
  const EndClamp clamp;
  SolverConfig cfg;
  cfg.max_iter = 0;
  const DisplacementField u0 = perturbed_identity(grid, clamp, 0.01, 5);
  const MinimizationResult r = minimize(u0, clamp, cfg, model);
  EXPECT_FALSE(r.converged);
  EXPECT_EQ(r.iterations, 0);
  EXPECT_EQ(r.field.values(), u0.values());
}

TEST(MinimizeTest, DescentClampAndGauge) {
  const auto grid = small_grid(Shape::disk);
  const ElasticModel model;
  const EndClamp clamp{Mat3::Identity(), model.h(), 1};
  const Mat3 h = model.h();
  const auto start = DisplacementField::from_map(grid, nullptr, [&](const Vec3& x) {
    const double phi = std::clamp(0.5 - x.x(), 0.0, 1.0);
    return Vec3(phi * x + (1.0 - phi) * (h * x));
  });
  SolverConfig cfg;
  cfg.max_iter = 300;
  const MinimizationResult r = minimize(start, clamp, cfg, model);
  for (std::size_t k = 1; k < r.history.size(); ++k) EXPECT_LE(r.history[k], r.history[k - 1]);
  EXPECT_LE(r.energy, total_energy(start, model));
  const Vec3 t = r.field.values()[static_cast<std::size_t>(grid->node_index(grid->n_axial(), 4, 4))] -
                 h * grid->node_position(grid->n_axial(), 4, 4);
  for (int n = 0; n < grid->node_count(); ++n) {
    if (!grid->node_active(n)) continue;
    const Vec3 x = grid->node_position(n);
    if (in_left_slab(*grid, n, clamp)) EXPECT_EQ(r.field.values()[static_cast<std::size_t>(n)], Vec3(x));
    if (in_right_slab(*grid, n, clamp)) {
      EXPECT_LT((r.field.values()[static_cast<std::size_t>(n)] - Vec3(h * x + t)).norm(), 1e-15);
    }
  }
  DisplacementField shifted = r.field;
  for (Vec3& v : shifted.values()) v += Vec3(0.25, -0.5, 0.125);
  EXPECT_NEAR(total_energy(shifted, model), r.energy, 1e-12 * std::max(1.0, r.energy));
}

TEST(MinimizeTest, DeterministicAcrossRunsAndThreads) {
  const auto grid = small_grid(Shape::disk);
  const ElasticModel model;
  const EndClamp clamp{Mat3::Identity(), model.h(), 1};
  const Mat3 h = model.h();
  const auto start = DisplacementField::from_map(grid, nullptr, [&](const Vec3& x) {
    const double phi = std::clamp(0.5 - x.x(), 0.0, 1.0);
    return Vec3(phi * x + (1.0 - phi) * (h * x));
  });
  SolverConfig cfg;
  cfg.max_iter = 100;
  cfg.restarts = 2;
  set_thread_count(1);
  const MinimizationResult a = minimize_with_restarts(start, clamp, cfg, model);
  const MinimizationResult b = minimize_with_restarts(start, clamp, cfg, model);
  EXPECT_EQ(a.field.values(), b.field.values());
  EXPECT_EQ(a.energy, b.energy);
  EXPECT_EQ(a.restart_energies.size(), 2u);
  set_thread_count(3);
  const MinimizationResult c = minimize_with_restarts(start, clamp, cfg, model);
  set_thread_count(1);
  EXPECT_NEAR(c.energy, a.energy, 1e-12 * std::max(1.0, a.energy));
}

TEST(MinimizeTest, RejectsStartOffTheClamp) {
  const auto grid = small_grid();
  const ElasticModel model;
  const EndClamp clamp{Mat3::Identity(), model.h(), 1};
  EXPECT_THROW(minimize(DisplacementField(grid), clamp, SolverConfig{}, model), InvalidArgument);
}

TEST(MinimizeTest, NonFiniteEnergyAborts) {
  const auto grid = small_grid();
  const ElasticModel model;
  const EndClamp clamp;
  DisplacementField u(grid);
  u.values()[static_cast<std::size_t>(grid->node_index(grid->interface_layer(), 2, 2))] = Vec3(1e300, 1e300, 1e300);
  EXPECT_THROW(minimize(u, clamp, SolverConfig{}, model), SolverError);
}

}  // namespace
}  // namespace misfit
