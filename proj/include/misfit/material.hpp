#pragma once

#include <Eigen/Core>

#include <optional>
#include <stdexcept>

namespace misfit {

using Mat3 = Eigen::Matrix3d;
using Vec3 = Eigen::Vector3d;

/// Thrown for inputs that violate a documented precondition.
class InvalidArgument : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Signed singular value decomposition A = U diag(s) V^T with U, V proper
/// rotations, s[0] >= s[1] >= |s[2]| and s[2] carrying the sign of det A.
struct SignedSvd {
  Mat3 u = Mat3::Identity();
  Vec3 s = Vec3::Zero();
  Mat3 v = Mat3::Identity();
};

/// One-sided Jacobi SVD of a 3x3 matrix. Columns of A are orthogonalised by
/// plane rotations applied on the right (cyclic sweeps over the pairs
/// (0,1), (0,2), (1,2)) until every pair is orthogonal to machine precision.
/// The column norms are the singular values; the result is deterministic.
SignedSvd signed_svd(const Mat3& a);

/// Rotation closest to `a` in the Frobenius norm (proper polar factor).
Mat3 closest_rotation(const Mat3& a);

enum class Phase { left, right };

struct MismatchSpec {
  Vec3 zeta = Vec3::Ones();
  std::optional<double> alpha;

  static MismatchSpec from_alpha(double alpha);
  static MismatchSpec from_zeta(const Vec3& zeta);

  Mat3 h() const { return zeta.asDiagonal(); }
};

/// H = (1 - alpha) I. Rejects alpha outside [0, 1) since det H must stay positive.
Mat3 mismatch_to_h(double alpha);

/// Two-well density W_i(A) = dist^2(A, SO(3) K_i) ^ (|A|^p + 1) with K_left = I
/// and K_right = H.
class ElasticModel {
 public:
  ElasticModel() : ElasticModel(MismatchSpec::from_alpha(0.05), 1.5) {}
  ElasticModel(MismatchSpec mismatch, double p);

  const MismatchSpec& mismatch() const { return mismatch_; }
  double p() const { return p_; }
  const Mat3& well(Phase phase) const { return phase == Phase::left ? well_left_ : well_right_; }
  const Mat3& h() const { return well_right_; }

 private:
  MismatchSpec mismatch_;
  double p_;
  Mat3 well_left_;
  Mat3 well_right_;
};

/// min over R in SO(3) of |A - R K|. Rejects non-finite entries.
double dist_to_rotation_well(const Mat3& a, const Mat3& k);

/// Squared distance together with the minimising rotation.
struct WellProjection {
  double dist2 = 0.0;
  Mat3 rotation = Mat3::Identity();
};
WellProjection project_to_well(const Mat3& a, const Mat3& k);

double energy_density(Phase phase, const Mat3& a, const ElasticModel& model);

/// Derivative of energy_density with respect to A. Where the two branches of
/// the minimum tie, the dist^2 branch is selected.
Mat3 energy_density_gradient(Phase phase, const Mat3& a, const ElasticModel& model);

/// Density and gradient in one pass (the hot path of the solver).
double energy_density_and_gradient(Phase phase, const Mat3& a, const ElasticModel& model,
                                   Mat3& gradient);

/// Constants (c1, c2) of the pointwise two-sided bound
///   c1 (|A|^2 ^ (|A|^p+1)) <= |A|^2 ^ (|A+G|^p+1) <= c2 (|A|^2 ^ (|A|^p+1)),
/// built from a radius rho beyond which |A+G|^p + 1 > (|A|^p + 1) / 2.
struct EquivalenceConstants {
  double rho = 1.0;
  double c1 = 0.5;
  double c2 = 1.0;
};
EquivalenceConstants equivalence_constants(double g_norm, double p);

}  // namespace misfit
