#include "misfit/material.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <string>

namespace misfit {

namespace {

constexpr double kEps = std::numeric_limits<double>::epsilon();

// Unit vector orthogonal to `u` (|u| = 1), chosen from the coordinate axis
// least aligned with u so the result is deterministic and well conditioned.
Vec3 any_orthogonal(const Vec3& u) {
  Eigen::Index axis = 0;
  u.cwiseAbs().minCoeff(&axis);
  Vec3 e = Vec3::Unit(axis);
  Vec3 w = e - u.dot(e) * u;
  return w.normalized();
}

}  // namespace

SignedSvd signed_svd(const Mat3& a) {
  Mat3 b = a;
  Mat3 v = Mat3::Identity();
  constexpr std::array<std::array<int, 2>, 3> pairs{{{0, 1}, {0, 2}, {1, 2}}};
  for (int sweep = 0; sweep < 64; ++sweep) {
    bool rotated = false;
    for (const auto& [p, q] : pairs) {
      const double alpha = b.col(p).squaredNorm();
      const double beta = b.col(q).squaredNorm();
      const double gamma = b.col(p).dot(b.col(q));
      if (alpha == 0.0 || beta == 0.0) continue;
      if (std::abs(gamma) <= kEps * std::sqrt(alpha * beta)) continue;
      rotated = true;
      const double zeta = (beta - alpha) / (2.0 * gamma);
      const double t = std::copysign(1.0, zeta) / (std::abs(zeta) + std::sqrt(1.0 + zeta * zeta));
      const double c = 1.0 / std::sqrt(1.0 + t * t);
      const double s = c * t;
      const Vec3 bp = b.col(p);
      const Vec3 bq = b.col(q);
      b.col(p) = c * bp - s * bq;
      b.col(q) = s * bp + c * bq;
      const Vec3 vp = v.col(p);
      const Vec3 vq = v.col(q);
      v.col(p) = c * vp - s * vq;
      v.col(q) = s * vp + c * vq;
    }
    if (!rotated) break;
  }

  std::array<int, 3> order{0, 1, 2};
  const Vec3 norms(b.col(0).norm(), b.col(1).norm(), b.col(2).norm());
  std::stable_sort(order.begin(), order.end(), [&](int i, int j) { return norms[i] > norms[j]; });
  Mat3 bs;
  Mat3 vs;
  for (int i = 0; i < 3; ++i) {
    bs.col(i) = b.col(order[i]);
    vs.col(i) = v.col(order[i]);
  }
  if (vs.determinant() < 0.0) {
    vs.col(2) = -vs.col(2);
    bs.col(2) = -bs.col(2);
  }

  SignedSvd out;
  out.v = vs;
  const double s0 = bs.col(0).norm();
  if (s0 == 0.0) {
    out.u = Mat3::Identity();
    out.s.setZero();
    return out;
  }
  const Vec3 u0 = bs.col(0) / s0;
  Vec3 u1 = bs.col(1) - u0.dot(bs.col(1)) * u0;
  const double n1 = u1.norm();
  if (n1 > 64.0 * kEps * s0) {
    u1 /= n1;
  } else {
    u1 = any_orthogonal(u0);
  }
  const Vec3 u2 = u0.cross(u1);
  out.u.col(0) = u0;
  out.u.col(1) = u1;
  out.u.col(2) = u2;
  out.s = Vec3(s0, u1.dot(bs.col(1)), u2.dot(bs.col(2)));
  return out;
}

Mat3 closest_rotation(const Mat3& a) {
  const SignedSvd svd = signed_svd(a);
  return svd.u * svd.v.transpose();
}

MismatchSpec MismatchSpec::from_alpha(double alpha) {
  if (!(alpha >= 0.0 && alpha < 1.0)) {
    throw InvalidArgument("mismatch alpha must lie in [0, 1) so that det H > 0; got " +
                          std::to_string(alpha));
  }
  MismatchSpec spec;
  spec.alpha = alpha;
  spec.zeta = Vec3::Constant(1.0 - alpha);
  return spec;
}

MismatchSpec MismatchSpec::from_zeta(const Vec3& zeta) {
  if (!zeta.allFinite() || (zeta.array() <= 0.0).any()) {
    throw InvalidArgument("every zeta_i must be positive so that det H > 0");
  }
  MismatchSpec spec;
  spec.zeta = zeta;
  return spec;
}

Mat3 mismatch_to_h(double alpha) { return MismatchSpec::from_alpha(alpha).h(); }

ElasticModel::ElasticModel(MismatchSpec mismatch, double p)
    : mismatch_(std::move(mismatch)), p_(p), well_left_(Mat3::Identity()), well_right_(mismatch_.h()) {
  if (!(p > 1.0 && p < 2.0)) {
    throw InvalidArgument("growth exponent p must lie in (1, 2); got " + std::to_string(p));
  }
  if (!mismatch_.zeta.allFinite() || (mismatch_.zeta.array() <= 0.0).any()) {
    throw InvalidArgument("every zeta_i must be positive so that det H > 0");
  }
}

WellProjection project_to_well(const Mat3& a, const Mat3& k) {
  const SignedSvd svd = signed_svd(a * k.transpose());
  WellProjection out;
  out.rotation = svd.u * svd.v.transpose();
  out.dist2 = (a - out.rotation * k).squaredNorm();
  return out;
}

double dist_to_rotation_well(const Mat3& a, const Mat3& k) {
  if (!a.allFinite() || !k.allFinite()) {
    throw InvalidArgument("dist_to_rotation_well: non-finite matrix entry");
  }
  return std::sqrt(project_to_well(a, k).dist2);
}

double energy_density_and_gradient(Phase phase, const Mat3& a, const ElasticModel& model,
                                   Mat3& gradient) {
  const Mat3& k = model.well(phase);
  const WellProjection proj = project_to_well(a, k);
  const double norm = a.norm();
  const double growth = std::pow(norm, model.p()) + 1.0;
  if (proj.dist2 <= growth) {
    gradient = 2.0 * (a - proj.rotation * k);
    return proj.dist2;
  }
  if (norm == 0.0) {
    gradient.setZero();
  } else {
    gradient = model.p() * std::pow(norm, model.p() - 2.0) * a;
  }
  return growth;
}

double energy_density(Phase phase, const Mat3& a, const ElasticModel& model) {
  const WellProjection proj = project_to_well(a, model.well(phase));
  return std::min(proj.dist2, std::pow(a.norm(), model.p()) + 1.0);
}

Mat3 energy_density_gradient(Phase phase, const Mat3& a, const ElasticModel& model) {
  Mat3 g;
  energy_density_and_gradient(phase, a, model, g);
  return g;
}

EquivalenceConstants equivalence_constants(double g_norm, double p) {
  if (!(g_norm >= 0.0) || !std::isfinite(g_norm)) {
    throw InvalidArgument("equivalence_constants: |G| must be finite and non-negative");
  }
  EquivalenceConstants c;
  if (g_norm == 0.0) {
    c.rho = 1.0;
    c.c1 = 1.0;
    c.c2 = 1.0;
    return c;
  }
  // |A| - |G| >= 2^{-1/p} |A| gives (|A| - |G|)^p >= |A|^p / 2.
  c.rho = std::max(1.0, g_norm / (1.0 - std::pow(2.0, -1.0 / p)));
  c.c1 = std::min(1.0 / (std::pow(c.rho, p) + 1.0), 0.5);
  const double convexity = std::pow(2.0, p - 1.0);
  c.c2 = std::max(convexity, convexity * std::pow(g_norm, p) + 1.0);
  return c;
}

}  // namespace misfit
