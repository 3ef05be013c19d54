#include "misfit/estimates.hpp"

#include "misfit/parallel.hpp"

#include <Eigen/Geometry>

#include <algorithm>
#include <cmath>
#include <numbers>
#include <random>

namespace misfit {

namespace {

std::mt19937_64 sample_rng(std::uint64_t seed, std::uint64_t index) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(index), static_cast<std::uint32_t>(index >> 32)};
  return std::mt19937_64(seq);
}

Mat3 random_rotation(std::mt19937_64& rng) {
  std::normal_distribution<double> normal(0.0, 1.0);
  Eigen::Quaterniond q(normal(rng), normal(rng), normal(rng), normal(rng));
  q.normalize();
  return q.toRotationMatrix();
}

double log_uniform(std::mt19937_64& rng, double lo, double hi) {
  std::uniform_real_distribution<double> unit(std::log(lo), std::log(hi));
  return std::exp(unit(rng));
}

std::vector<Mat3> cell_gradients(const DisplacementField& u) {
  const Grid& grid = u.grid();
  std::vector<Mat3> out(grid.cell_count());
  for (std::size_t c = 0; c < grid.cell_count(); ++c) {
    const Cell& cell = grid.cells()[c];
    out[c] = cell_gradient(grid, cell, u.values(), cell_jump(grid, u.jumps(), cell));
  }
  return out;
}

double truncated_lhs(const std::vector<Mat3>& f, const Mat3& r, double p, double volume) {
  double sum = 0.0;
  for (const Mat3& a : f) sum += std::min((a - r).squaredNorm(), std::pow(a.norm(), p) + 1.0);
  return sum * volume;
}

// Calibration over the first n entries, verification over all of them.
void summarise(ProbeReport& report, const std::vector<double>& ratios, int n) {
  report.samples = n;
  report.verification_samples = static_cast<int>(ratios.size());
  report.calibrated_constant = *std::max_element(ratios.begin(), ratios.begin() + n);
  report.verification_max = *std::max_element(ratios.begin(), ratios.end());
  report.min_ratio = *std::min_element(ratios.begin(), ratios.end());
  report.violations = 0;
  for (double r : ratios) {
    if (r > 1.2 * report.calibrated_constant) ++report.violations;
  }
  report.stable = report.verification_max <= 1.2 * report.calibrated_constant;
}

void require_samples(int samples, const char* what) {
  if (samples < 10) throw InvalidArgument(std::string(what) + ": at least 10 samples are required");
}

}  // namespace

std::shared_ptr<const Grid> probe_grid(int cells_per_side) {
  if (cells_per_side < 4) throw InvalidArgument("probe_grid: need at least 4 cells per side");
  return make_grid({Shape::square, 0.5}, 0.5, 1.0 / cells_per_side);
}

DisplacementField smooth_random_field(std::shared_ptr<const Grid> grid, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  std::uniform_real_distribution<double> phase(0.0, 2.0 * std::numbers::pi);
  struct Mode {
    Vec3 k;
    Vec3 coef;
    Vec3 phase;
  };
  std::vector<Mode> modes;
  double largest = 0.0;
  for (int a = 1; a <= 3; ++a) {
    for (int b = 1; b <= 3; ++b) {
      for (int c = 1; c <= 3; ++c) {
        Mode m;
        m.k = Vec3(a, b, c);
        const double decay = 1.0 / m.k.squaredNorm();
        for (int d = 0; d < 3; ++d) {
          m.coef[d] = normal(rng) * decay;
          m.phase[d] = phase(rng);
          largest = std::max(largest, std::abs(m.coef[d]));
        }
        modes.push_back(m);
      }
    }
  }
  for (Mode& m : modes) m.coef /= largest;
  return DisplacementField::from_map(grid, nullptr, [&](const Vec3& x) {
    Vec3 u = Vec3::Zero();
    for (const Mode& m : modes) {
      const double arg = std::numbers::pi * m.k.dot(x);
      for (int d = 0; d < 3; ++d) u[d] += m.coef[d] * std::sin(arg + m.phase[d]);
    }
    return Vec3(x + u);
  });
}

void add_spikes(DisplacementField& u, double fraction, double gradient, std::uint64_t seed) {
  const Grid& grid = u.grid();
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  const int count = std::max(1, static_cast<int>(std::lround(fraction * grid.cell_count() / 8.0)));
  // one displaced node changes the averaged gradient of its cells by |d| sqrt(3) / (4 a)
  const double size = gradient * 4.0 * grid.min_spacing() / std::sqrt(3.0);
  std::uniform_int_distribution<int> pick(0, grid.node_count() - 1);
  for (int s = 0; s < count; ++s) {
    int node = pick(rng);
    while (!grid.node_active(node)) node = pick(rng);
    Vec3 dir(normal(rng), normal(rng), normal(rng));
    u.values()[static_cast<std::size_t>(node)] += size * dir.normalized();
  }
}

std::string to_string(RigidityMode mode) { return mode == RigidityMode::classic ? "classic" : "truncated"; }

RigidityIntegrands rigidity_integrands(const DisplacementField& u, const Mat3& rotation, double p) {
  const std::vector<Mat3> f = cell_gradients(u);
  const double volume = u.grid().cell_volume();
  RigidityIntegrands out;
  for (const Mat3& a : f) {
    const double d2 = (a - rotation).squaredNorm();
    out.classic.push_back(volume * d2);
    out.truncated.push_back(volume * std::min(d2, std::pow(a.norm(), p) + 1.0));
  }
  return out;
}

RigiditySides rigidity_sides(const DisplacementField& u, RigidityMode mode, double p) {
  const std::vector<Mat3> f = cell_gradients(u);
  const double volume = u.grid().cell_volume();
  Mat3 mean = Mat3::Zero();
  for (const Mat3& a : f) mean += a;
  mean /= static_cast<double>(f.size());
  RigiditySides out;
  out.rotation = closest_rotation(mean);
  if (mode == RigidityMode::classic) {
    for (const Mat3& a : f) {
      out.lhs += (a - out.rotation).squaredNorm();
      out.rhs += project_to_well(a, Mat3::Identity()).dist2;
    }
    out.lhs *= volume;
    out.rhs *= volume;
    return out;
  }
  for (const Mat3& a : f) {
    out.rhs += std::min(project_to_well(a, Mat3::Identity()).dist2, std::pow(a.norm(), p) + 1.0);
  }
  out.rhs *= volume;
  out.lhs = truncated_lhs(f, out.rotation, p, volume);
  const double total_volume = volume * static_cast<double>(f.size());
  for (int step = 0; step < 20; ++step) {
    Mat3 grad = Mat3::Zero();
    for (const Mat3& a : f) {
      if ((a - out.rotation).squaredNorm() < std::pow(a.norm(), p) + 1.0) grad -= 2.0 * volume * (a - out.rotation);
    }
    if (grad.norm() == 0.0) break;
    double eta = 0.5 / total_volume;
    bool improved = false;
    for (int tries = 0; tries < 12 && !improved; ++tries, eta *= 0.5) {
      const Mat3 candidate = closest_rotation(out.rotation - eta * grad);
      const double lhs = truncated_lhs(f, candidate, p, volume);
      if (lhs < out.lhs) {
        out.rotation = candidate;
        out.lhs = lhs;
        improved = true;
      }
    }
    if (!improved) break;
  }
  return out;
}

double rigidity_ratio(const RigiditySides& sides) {
  constexpr double zero = 1e-20;
  if (sides.rhs <= zero) {
    if (sides.lhs > 1e-10) throw EstimateViolation("rigidity: positive left side for an exact rigid motion");
    return 1.0;
  }
  return sides.lhs / sides.rhs;
}

ProbeReport rigidity_ratio_probe(int samples, std::shared_ptr<const Grid> grid, RigidityMode mode, double p,
                                 std::uint64_t seed, const SampleOptions& options) {
  require_samples(samples, "rigidity_ratio_probe");
  std::vector<double> ratios(static_cast<std::size_t>(2 * samples));
  parallel_for(ratios.size(), [&](std::size_t begin, std::size_t end) {
    for (std::size_t s = begin; s < end; ++s) {
      std::mt19937_64 rng = sample_rng(seed, s);
      const Mat3 r = random_rotation(rng);
      const double amplitude = log_uniform(rng, options.min_amplitude, options.max_amplitude);
      const std::uint64_t field_seed = rng();
      const bool spiky = std::uniform_real_distribution<double>(0.0, 1.0)(rng) < options.spike_probability;
      const std::uint64_t spike_seed = rng();
      DisplacementField u = smooth_random_field(grid, field_seed);
      for (int n = 0; n < grid->node_count(); ++n) {
        Vec3& y = u.values()[static_cast<std::size_t>(n)];
        const Vec3 x = grid->node_position(n);
        y = r * x + amplitude * (y - x);
      }
      if (spiky) add_spikes(u, options.spike_fraction, options.spike_gradient, spike_seed);
      ratios[s] = rigidity_ratio(rigidity_sides(u, mode, p));
    }
  });
  ProbeReport report;
  report.probe = "rigidity_" + to_string(mode);
  report.seed = seed;
  summarise(report, ratios, samples);
  return report;
}

namespace {

struct CellData {
  std::vector<Mat3> du;
  std::vector<Vec3> u;
};

CellData cell_data(const DisplacementField& u) {
  const Grid& grid = u.grid();
  CellData out;
  out.du = cell_gradients(u);
  for (Mat3& a : out.du) a -= Mat3::Identity();
  for (const Cell& cell : grid.cells()) {
    Vec3 avg = Vec3::Zero();
    for (int n : cell.nodes) avg += u.displacement(n);
    out.u.push_back(avg / 8.0);
  }
  return out;
}

double epsilon_of(const std::vector<double>& du_norm, double scale, double p, double volume) {
  double sum = 0.0;
  for (double g : du_norm) {
    const double a = scale * g;
    sum += std::min(a * a, std::pow(a, p) + 1.0);
  }
  return sum * volume;
}

}  // namespace

PoincareSides poincare_sides(const DisplacementField& u, double p) {
  const CellData data = cell_data(u);
  const double volume = u.grid().cell_volume();
  PoincareSides out;
  for (std::size_t c = 0; c < data.du.size(); ++c) {
    const double g = data.du[c].norm();
    const double v = data.u[c].norm();
    out.lhs += std::min(v * v + g * g, std::pow(g, p) + std::pow(v, p) + 1.0);
    out.epsilon += std::min(g * g, std::pow(g, p) + 1.0);
  }
  out.lhs *= volume;
  out.epsilon *= volume;
  return out;
}

void remove_mean(DisplacementField& u) {
  const CellData data = cell_data(u);
  Vec3 mean = Vec3::Zero();
  for (const Vec3& v : data.u) mean += v;
  mean /= static_cast<double>(data.u.size());
  for (int n = 0; n < u.grid().node_count(); ++n) {
    if (u.grid().node_active(n)) u.values()[static_cast<std::size_t>(n)] -= mean;
  }
}

void scale_to_epsilon(DisplacementField& u, double target, double p) {
  if (!(target > 0.0)) throw InvalidArgument("scale_to_epsilon: target must be positive");
  const CellData data = cell_data(u);
  std::vector<double> norms;
  for (const Mat3& a : data.du) norms.push_back(a.norm());
  const double volume = u.grid().cell_volume();
  if (epsilon_of(norms, 1.0, p, volume) == 0.0) throw InvalidArgument("scale_to_epsilon: field has zero gradient");
  double lo = 0.0;
  double hi = 1.0;
  while (epsilon_of(norms, hi, p, volume) < target) {
    lo = hi;
    hi *= 2.0;
  }
  for (int it = 0; it < 200 && hi - lo > 1e-15 * hi; ++it) {
    const double mid = 0.5 * (lo + hi);
    (epsilon_of(norms, mid, p, volume) < target ? lo : hi) = mid;
  }
  const double s = 0.5 * (lo + hi);
  const Grid& grid = u.grid();
  for (int n = 0; n < grid.node_count(); ++n) {
    if (!grid.node_active(n)) continue;
    const Vec3 x = grid.node_position(n);
    Vec3& y = u.values()[static_cast<std::size_t>(n)];
    y = x + s * (y - x);
  }
}

ProbeReport poincare_probe(int samples, std::shared_ptr<const Grid> grid, double p, std::uint64_t seed,
                           const SampleOptions& options) {
  require_samples(samples, "poincare_probe");
  std::vector<double> ratios(static_cast<std::size_t>(2 * samples));
  parallel_for(ratios.size(), [&](std::size_t begin, std::size_t end) {
    for (std::size_t s = begin; s < end; ++s) {
      std::mt19937_64 rng = sample_rng(seed, s);
      const double target = log_uniform(rng, 1e-4, 0.5);
      const std::uint64_t field_seed = rng();
      const bool spiky = std::uniform_real_distribution<double>(0.0, 1.0)(rng) < options.spike_probability;
      const std::uint64_t spike_seed = rng();
      DisplacementField u = smooth_random_field(grid, field_seed);
      if (spiky) add_spikes(u, options.spike_fraction, options.spike_gradient, spike_seed);
      remove_mean(u);
      scale_to_epsilon(u, target, p);
      const PoincareSides sides = poincare_sides(u, p);
      ratios[s] = sides.lhs / std::pow(sides.epsilon, 0.5 * p);
    }
  });
  ProbeReport report;
  report.probe = "poincare";
  report.seed = seed;
  summarise(report, ratios, samples);
  return report;
}

double poincare_exponent(const DisplacementField& u, const std::vector<double>& epsilons, double p) {
  if (epsilons.size() < 2) throw InvalidArgument("poincare_exponent: need at least two scales");
  std::vector<double> lx;
  std::vector<double> ly;
  for (double eps : epsilons) {
    DisplacementField v = u;
    remove_mean(v);
    scale_to_epsilon(v, eps, p);
    const PoincareSides sides = poincare_sides(v, p);
    lx.push_back(std::log(sides.epsilon));
    ly.push_back(std::log(sides.lhs));
  }
  const double n = static_cast<double>(lx.size());
  double mx = 0.0;
  double my = 0.0;
  for (std::size_t i = 0; i < lx.size(); ++i) {
    mx += lx[i] / n;
    my += ly[i] / n;
  }
  double sxy = 0.0;
  double sxx = 0.0;
  for (std::size_t i = 0; i < lx.size(); ++i) {
    sxy += (lx[i] - mx) * (ly[i] - my);
    sxx += (lx[i] - mx) * (lx[i] - mx);
  }
  return sxy / sxx;
}

ProbeReport pointwise_equivalence_probe(int samples, const Mat3& g, double p, std::uint64_t seed) {
  require_samples(samples, "pointwise_equivalence_probe");
  const EquivalenceConstants constants = equivalence_constants(g.norm(), p);
  const std::size_t total = static_cast<std::size_t>(2 * samples);
  std::vector<double> ratios(total, 1.0);
  std::vector<char> failed(total, 0);
  parallel_for(total, [&](std::size_t begin, std::size_t end) {
    for (std::size_t s = begin; s < end; ++s) {
      Mat3 a = Mat3::Zero();
      if (s > 0) {
        std::mt19937_64 rng = sample_rng(seed, s);
        std::normal_distribution<double> normal(0.0, 1.0);
        for (int i = 0; i < 9; ++i) a(i / 3, i % 3) = normal(rng);
        a *= log_uniform(rng, 1e-3, 1e3) / a.norm();
      }
      const double a2 = a.squaredNorm();
      const double base = std::min(a2, std::pow(a.norm(), p) + 1.0);
      const double middle = std::min(a2, std::pow((a + g).norm(), p) + 1.0);
      constexpr double slack = 1e-12;
      if (constants.c1 * base > middle * (1.0 + slack) || middle > constants.c2 * base * (1.0 + slack)) {
        failed[s] = 1;
      }
      if (base > 0.0) ratios[s] = middle / base;
    }
  });
  ProbeReport report;
  report.probe = "pointwise_equivalence";
  report.seed = seed;
  summarise(report, ratios, samples);
  report.violations = static_cast<int>(std::count(failed.begin(), failed.end(), 1));
  report.lower_constant = constants.c1;
  report.upper_constant = constants.c2;
  if (report.violations > 0) {
    throw EstimateViolation("pointwise_equivalence_probe: " + std::to_string(report.violations) +
                            " samples violate the constructed bounds");
  }
  return report;
}

}  // namespace misfit
