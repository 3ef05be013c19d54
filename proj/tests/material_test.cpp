#include "misfit/material.hpp"

#include <Eigen/Dense>
#include <Eigen/Geometry>
#include <gtest/gtest.h>

#include <cmath>
#include <random>

namespace misfit {
namespace {

Mat3 random_rotation(std::mt19937_64& rng) {
  std::normal_distribution<double> n(0.0, 1.0);
  Eigen::Quaterniond q(n(rng), n(rng), n(rng), n(rng));
  q.normalize();
  return q.toRotationMatrix();
}

Mat3 random_matrix(std::mt19937_64& rng, double scale) {
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  Mat3 a;
  for (int i = 0; i < 9; ++i) a(i) = scale * u(rng);
  return a;
}

// Minimum of |A - R K| over rotations by random search refined with local
// axis-angle perturbations; independent of any SVD.
double brute_force_distance(const Mat3& a, const Mat3& k) {
  std::mt19937_64 rng(7);
  double best = 1e300;
  Mat3 best_r = Mat3::Identity();
  for (int s = 0; s < 20000; ++s) {
    const Mat3 r = random_rotation(rng);
    const double d = (a - r * k).norm();
    if (d < best) {
      best = d;
      best_r = r;
    }
  }
  std::normal_distribution<double> n(0.0, 1.0);
  double radius = 0.2;
  for (int s = 0; s < 60000; ++s) {
    const Vec3 axis(n(rng), n(rng), n(rng));
    const Mat3 r = Eigen::AngleAxisd(radius * n(rng), axis.normalized()).toRotationMatrix() * best_r;
    const double d = (a - r * k).norm();
    if (d < best) {
      best = d;
      best_r = r;
    }
    if (s % 2000 == 1999) radius *= 0.7;
  }
  return best;
}

TEST(MismatchTest, AlphaToH) {
  EXPECT_EQ(mismatch_to_h(0.0), Mat3::Identity());
  EXPECT_EQ(mismatch_to_h(0.05), Mat3(0.95 * Mat3::Identity()));
  EXPECT_EQ(mismatch_to_h(0.5), Mat3(0.5 * Mat3::Identity()));
  EXPECT_THROW(mismatch_to_h(1.0), InvalidArgument);
  EXPECT_THROW(mismatch_to_h(1.2), InvalidArgument);
  EXPECT_THROW(mismatch_to_h(-0.1), InvalidArgument);
}

TEST(MismatchTest, ZetaMustBePositive) {
  EXPECT_THROW(MismatchSpec::from_zeta(Vec3(1.0, 0.0, 1.0)), InvalidArgument);
  EXPECT_NO_THROW(MismatchSpec::from_zeta(Vec3(0.9, 1.0, 1.1)));
}

TEST(ElasticModelTest, RejectsExponentOutsideRange) {
  EXPECT_THROW(ElasticModel(MismatchSpec::from_alpha(0.05), 1.0), InvalidArgument);
  EXPECT_THROW(ElasticModel(MismatchSpec::from_alpha(0.05), 2.0), InvalidArgument);
}

TEST(SignedSvdTest, ReconstructsAndMatchesEigen) {
  std::mt19937_64 rng(1);
  for (int s = 0; s < 2000; ++s) {
    const Mat3 a = random_matrix(rng, 3.0);
    const SignedSvd svd = signed_svd(a);
    EXPECT_NEAR(svd.u.determinant(), 1.0, 1e-12);
    EXPECT_NEAR(svd.v.determinant(), 1.0, 1e-12);
    EXPECT_LT((svd.u * svd.s.asDiagonal() * svd.v.transpose() - a).norm(), 1e-12 * (1.0 + a.norm()));
    Eigen::JacobiSVD<Mat3> ref(a);
    Vec3 expected = ref.singularValues();
    if (a.determinant() < 0.0) expected[2] = -expected[2];
    EXPECT_LT((svd.s - expected).norm(), 1e-12 * (1.0 + a.norm()));
  }
}

TEST(DistanceTest, Examples) {
  EXPECT_EQ(dist_to_rotation_well(Mat3::Identity(), Mat3::Identity()), 0.0);
  EXPECT_NEAR(dist_to_rotation_well(2.0 * Mat3::Identity(), Mat3::Identity()), std::sqrt(3.0), 1e-14);
  const Mat3 flip = Vec3(1.0, 1.0, -1.0).asDiagonal();
  EXPECT_NEAR(dist_to_rotation_well(flip, Mat3::Identity()), 2.0, 1e-14);
  EXPECT_NEAR(brute_force_distance(flip, Mat3::Identity()), 2.0, 1e-3);
}

TEST(DistanceTest, AgreesWithBruteForce) {
  std::mt19937_64 rng(3);
  const Mat3 h = mismatch_to_h(0.05);
  for (int s = 0; s < 4; ++s) {
    const Mat3 a = random_matrix(rng, 1.5);
    const Mat3 k = (s % 2 == 0) ? Mat3::Identity() : h;
    EXPECT_NEAR(dist_to_rotation_well(a, k), brute_force_distance(a, k), 2e-3);
  }
}

TEST(DistanceTest, RejectsNonFinite) {
  Mat3 a = Mat3::Identity();
  a(1, 2) = std::nan("");
  EXPECT_THROW(dist_to_rotation_well(a, Mat3::Identity()), InvalidArgument);
}

TEST(DensityTest, Examples) {
  const ElasticModel model;
  EXPECT_EQ(energy_density(Phase::left, Mat3::Identity(), model), 0.0);
  EXPECT_EQ(energy_density(Phase::right, model.h(), model), 0.0);
  const Mat3 big = 1000.0 * Mat3::Identity();
  const double dist2 = 3.0 * 999.0 * 999.0;
  const double growth = std::pow(1000.0 * std::sqrt(3.0), 1.5) + 1.0;
  EXPECT_GT(dist2, growth);
  EXPECT_NEAR(energy_density(Phase::left, big, model), growth, 1e-9 * growth);
  EXPECT_NEAR(growth, 7.2085e4, 1.0);
}

TEST(DensityTest, MatchesTruncatedDistanceExpression) {
  const ElasticModel model;
  std::mt19937_64 rng(5);
  for (int s = 0; s < 1000; ++s) {
    const Mat3 a = random_matrix(rng, 2.0);
    for (Phase phase : {Phase::left, Phase::right}) {
      const double d = project_to_well(a, model.well(phase)).dist2;
      const double expr = std::min(d, std::pow(a.norm(), model.p()) + 1.0);
      EXPECT_EQ(energy_density(phase, a, model), expr);
    }
  }
}

TEST(DensityTest, FrameIndifference) {
  const ElasticModel model;
  std::mt19937_64 rng(11);
  for (int s = 0; s < 10000; ++s) {
    const Mat3 r = random_rotation(rng);
    const Mat3 a = random_matrix(rng, 2.0);
    const Phase phase = s % 2 == 0 ? Phase::left : Phase::right;
    const double w = energy_density(phase, a, model);
    EXPECT_LE(std::abs(energy_density(phase, r * a, model) - w), 1e-12 * (1.0 + w));
  }
}

TEST(GradientTest, Examples) {
  const ElasticModel model;
  EXPECT_LT(energy_density_gradient(Phase::left, Mat3::Identity(), model).norm(), 1e-15);
  EXPECT_LT(energy_density_gradient(Phase::right, model.h(), model).norm(), 1e-15);
  const Mat3 g = energy_density_gradient(Phase::left, 1.1 * Mat3::Identity(), model);
  EXPECT_LT((g - 0.2 * Mat3::Identity()).norm(), 1e-13);
}

TEST(GradientTest, MatchesCentralDifferences) {
  const ElasticModel model;
  std::mt19937_64 rng(13);
  int checked = 0;
  while (checked < 1000) {
    const double scale = checked % 3 == 0 ? 4.0 : 1.2;
    const Mat3 a = random_matrix(rng, scale);
    const Phase phase = checked % 2 == 0 ? Phase::left : Phase::right;
    const double d2 = project_to_well(a, model.well(phase)).dist2;
    const double growth = std::pow(a.norm(), model.p()) + 1.0;
    if (std::abs(d2 - growth) < 1e-6 * (1.0 + growth)) continue;
    const Mat3 g = energy_density_gradient(phase, a, model);
    Mat3 fd;
    const double step = 1e-6;
    for (int i = 0; i < 9; ++i) {
      Mat3 ap = a;
      Mat3 am = a;
      ap(i) += step;
      am(i) -= step;
      fd(i) = (energy_density(phase, ap, model) - energy_density(phase, am, model)) / (2.0 * step);
    }
    EXPECT_LE((g - fd).norm(), 1e-5 * std::max(1.0, g.norm()));
    ++checked;
  }
}

TEST(EquivalenceTest, ZeroShiftGivesUnitConstants) {
  const EquivalenceConstants c = equivalence_constants(0.0, 1.5);
  EXPECT_EQ(c.c1, 1.0);
  EXPECT_EQ(c.c2, 1.0);
}

TEST(EquivalenceTest, ConstantsHoldOnSamples) {
  std::mt19937_64 rng(17);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  std::uniform_real_distribution<double> logmag(-3.0, 3.0);
  for (double p : {1.1, 1.5, 1.9}) {
    for (int gs = 0; gs < 10; ++gs) {
      Mat3 g = random_matrix(rng, 1.0);
      g *= (5.0 * (gs + 1) / 10.0) / g.norm();
      const EquivalenceConstants c = equivalence_constants(g.norm(), p);
      for (int s = 0; s < 1000; ++s) {
        Mat3 a = random_matrix(rng, 1.0);
        a *= std::pow(10.0, logmag(rng)) / a.norm();
        const double base = std::min(a.squaredNorm(), std::pow(a.norm(), p) + 1.0);
        const double mid = std::min(a.squaredNorm(), std::pow((a + g).norm(), p) + 1.0);
        EXPECT_LE(c.c1 * base, mid * (1.0 + 1e-12));
        EXPECT_LE(mid, c.c2 * base * (1.0 + 1e-12));
      }
    }
  }
}

}  // namespace
}  // namespace misfit
