#pragma once

#include "misfit/fields.hpp"

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

namespace misfit {

/// Raised when a sampled field violates an inequality at a point where it must
/// hold exactly (rigid motions, constructed pointwise constants).
class EstimateViolation : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Calibration over `samples` draws, verification over 2 * samples draws from
/// the same seeded stream (the first half repeats the calibration draws).
struct ProbeReport {
  std::string probe;
  std::uint64_t seed = 0;
  int samples = 0;
  int verification_samples = 0;
  double calibrated_constant = 0.0;  // max ratio over the calibration draws
  double verification_max = 0.0;     // max ratio over the verification draws
  double min_ratio = 0.0;            // over the verification draws
  /// Verification ratios above 1.2 * calibrated_constant (for the pointwise
  /// probe: samples outside [c1, c2]).
  int violations = 0;
  bool stable = false;  // verification_max within 20% of calibrated_constant
  double lower_constant = 0.0;  // c1 (pointwise probe only)
  double upper_constant = 0.0;  // c2 (pointwise probe only)
};

/// Unit cube (-1/2, 1/2)^3 with `cells_per_side` cells per side.
std::shared_ptr<const Grid> probe_grid(int cells_per_side = 8);

/// Random sample generator: smooth band-limited fields with three sine modes
/// per axis and optional sparse large-gradient spikes.
struct SampleOptions {
  /// Amplitude of the smooth part is drawn log-uniformly in [min, max].
  double min_amplitude = 1e-3;
  double max_amplitude = 1.0;
  /// Probability that a sample carries spikes.
  double spike_probability = 0.5;
  /// Fraction of cells touched by spikes and their gradient magnitude.
  double spike_fraction = 0.01;
  double spike_gradient = 1e3;
};

/// Smooth part only: sum of sin(pi (k . x) + phase) modes with k in {1,2,3}^3
/// and coefficients decaying like 1 / |k|^2, scaled to unit max |coefficient|.
DisplacementField smooth_random_field(std::shared_ptr<const Grid> grid, std::uint64_t seed);

/// Displaces whole nodes so that about `fraction` of the cells carry a
/// gradient of size `gradient`.
void add_spikes(DisplacementField& u, double fraction, double gradient, std::uint64_t seed);

enum class RigidityMode { classic, truncated };
std::string to_string(RigidityMode mode);

struct RigiditySides {
  double lhs = 0.0;  // integral of |Du - R|^2 (truncated: ^ (|Du|^p + 1))
  double rhs = 0.0;  // integral of dist^2(Du, SO(3)) (same truncation)
  Mat3 rotation = Mat3::Identity();
};

/// Per-cell integrands for a fixed rotation: truncated and classic LHS.
struct RigidityIntegrands {
  std::vector<double> truncated;
  std::vector<double> classic;
};
RigidityIntegrands rigidity_integrands(const DisplacementField& u, const Mat3& rotation, double p);

/// Rotation from Kabsch on the mean gradient, improved for the truncated mode
/// by projected gradient steps on the truncated LHS.
RigiditySides rigidity_sides(const DisplacementField& u, RigidityMode mode, double p);

/// LHS / RHS; 1 when both vanish. Throws EstimateViolation when the RHS
/// vanishes and the LHS exceeds 1e-10.
double rigidity_ratio(const RigiditySides& sides);

/// Samples R x + amplitude * smooth (+ spikes) with random proper R.
ProbeReport rigidity_ratio_probe(int samples, std::shared_ptr<const Grid> grid, RigidityMode mode, double p,
                                 std::uint64_t seed, const SampleOptions& options = {});

struct PoincareSides {
  double lhs = 0.0;      // integral of (|u|^2 + |Du|^2) ^ (|Du|^p + |u|^p + 1)
  double epsilon = 0.0;  // integral of |Du|^2 ^ (|Du|^p + 1)
};

/// Cell values of u are averages of the eight nodal displacements.
PoincareSides poincare_sides(const DisplacementField& u, double p);

/// Subtracts the cell-weighted mean displacement.
void remove_mean(DisplacementField& u);

/// Multiplies the displacement by the factor that makes epsilon equal to
/// `target` (bisection; epsilon is increasing in the factor).
void scale_to_epsilon(DisplacementField& u, double target, double p);

/// Zero-mean samples rescaled to epsilon drawn log-uniformly in [1e-4, 0.5];
/// ratio = lhs / epsilon^(p/2).
ProbeReport poincare_probe(int samples, std::shared_ptr<const Grid> grid, double p, std::uint64_t seed,
                           const SampleOptions& options = {});

/// Least-squares slope of log lhs against log epsilon along a ladder of
/// rescalings of one zero-mean field.
double poincare_exponent(const DisplacementField& u, const std::vector<double>& epsilons, double p);

/// Matrices with |A| log-uniform in [1e-3, 1e3] plus A = 0; checks
///   c1 m(A) <= |A|^2 ^ (|A+G|^p + 1) <= c2 m(A),  m(A) = |A|^2 ^ (|A|^p + 1)
/// with the constants of equivalence_constants. Throws EstimateViolation on
/// any failing sample. Ratios are middle / m(A) over samples with m(A) > 0.
ProbeReport pointwise_equivalence_probe(int samples, const Mat3& g, double p, std::uint64_t seed);

}  // namespace misfit
