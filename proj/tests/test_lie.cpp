#include <gtest/gtest.h>

#include <cmath>
#include <limits>
#include <numbers>

#include "raloc/errors.hpp"
#include "raloc/lie.hpp"
#include "test_utils.hpp"

using namespace raloc;
using namespace raloc::testing;

namespace {

double pose_distance(const Pose& a, const Pose& b) {
  return (a.matrix() - b.matrix()).cwiseAbs().maxCoeff();
}

}  // namespace

TEST(Lie, ExpOfZeroIsIdentity) {
  const Pose t = lie::exp(Twist::Zero());
  EXPECT_LT(pose_distance(t, Pose()), 1e-15);
}

// The one canonical statement of the twist ordering: the first three
// components translate, the last three rotate.
TEST(Lie, TwistOrderingIsTranslationFirst) {
  Twist xi = Twist::Zero();
  xi[0] = 1.5;
  const Pose t = lie::exp(xi);
  EXPECT_NEAR(t.translation().x(), 1.5, 1e-15);
  EXPECT_LT(t.rotation().angle(), 1e-15);

  Twist w = Twist::Zero();
  w[3] = std::numbers::pi / 2;
  const Pose r = lie::exp(w);
  EXPECT_LT(r.translation().norm(), 1e-15);
  Matrix3 expected;
  expected << 1, 0, 0, 0, 0, -1, 0, 1, 0;
  EXPECT_LT((r.rotation().matrix() - expected).cwiseAbs().maxCoeff(), 1e-15);
}

TEST(Lie, ExpMatchesSeriesOracle) {
  std::mt19937_64 rng(1);
  for (int i = 0; i < 2000; ++i) {
    const Twist xi = random_twist(rng, std::numbers::pi - 1e-3);
    const Eigen::Matrix4d expected = series_expm(lie::hat(xi));
    EXPECT_LT((lie::exp(xi).matrix() - expected).cwiseAbs().maxCoeff(), 1e-9);
  }
}

TEST(Lie, ExpLogRoundtrip) {
  std::mt19937_64 rng(2);
  for (int i = 0; i < 10000; ++i) {
    const Twist xi = random_twist(rng, std::numbers::pi - 1e-3);
    EXPECT_LT((lie::log(lie::exp(xi)) - xi).norm(), 1e-9) << xi.transpose();
  }
}

TEST(Lie, RoundtripAcrossSmallAngleBranches) {
  for (double angle : {0.0, 1e-12, 1e-9, 1e-7, 2e-7, 1e-5, 1e-3, 9e-3, 1.1e-2, 0.5}) {
    Twist xi;
    xi << 0.3, -0.2, 0.7, 0.0, 0.0, 0.0;
    xi.tail<3>() = Vector3(1, 2, -1).normalized() * angle;
    EXPECT_LT((lie::log(lie::exp(xi)) - xi).norm(), 1e-12) << angle;
    EXPECT_LT((lie::exp(xi).matrix() - series_expm(lie::hat(xi))).cwiseAbs().maxCoeff(), 1e-12)
        << angle;
  }
}

TEST(Lie, RoundtripNearPi) {
  Twist xi;
  xi << 0.4, 1.0, -0.3, 0.0, 0.0, 0.0;
  xi.tail<3>() = Vector3(0.2, -0.5, 1.0).normalized() * (std::numbers::pi - 1e-6);
  const Twist back = lie::log(lie::exp(xi));
  EXPECT_TRUE(back.allFinite());
  EXPECT_LT((back - xi).norm(), 1e-6);
  EXPECT_LT(pose_distance(lie::exp(back), lie::exp(xi)), 1e-9);
}

TEST(Lie, LogAtPiIsFinite) {
  Twist xi = Twist::Zero();
  xi[5] = std::numbers::pi;
  xi[0] = 1.0;
  const Twist back = lie::log(lie::exp(xi));
  EXPECT_TRUE(back.allFinite());
  EXPECT_NEAR(back.tail<3>().norm(), std::numbers::pi, 1e-12);
}

TEST(Lie, NonFiniteInputThrows) {
  Twist xi = Twist::Zero();
  xi[4] = std::numeric_limits<double>::quiet_NaN();
  EXPECT_THROW(lie::exp(xi), InvalidArgument);
  EXPECT_THROW(Rotation(Eigen::Quaterniond(0, 0, 0, 0)), InvalidArgument);
}

TEST(Lie, AdjointOfIdentityAndTranslation) {
  EXPECT_LT((lie::adjoint(Pose()) - Matrix6::Identity()).cwiseAbs().maxCoeff(), 1e-15);
  const Vector3 t(1, -2, 3);
  Matrix6 expected = Matrix6::Identity();
  expected.topRightCorner<3, 3>() = skew(t);
  EXPECT_LT((lie::adjoint(Pose::from_translation(t)) - expected).cwiseAbs().maxCoeff(), 1e-15);
}

TEST(Lie, AdjointDefiningIdentity) {
  std::mt19937_64 rng(3);
  for (int i = 0; i < 2000; ++i) {
    const Pose t = random_pose(rng);
    const Twist xi = random_twist(rng, 1.0);
    const Pose lhs = lie::exp(lie::adjoint(t) * xi);
    const Pose rhs = t * lie::exp(xi) * t.inverse();
    EXPECT_LT(pose_distance(lhs, rhs), 1e-9);
  }
}

TEST(Lie, AdjointHomomorphism) {
  std::mt19937_64 rng(4);
  for (int i = 0; i < 2000; ++i) {
    const Pose a = random_pose(rng);
    const Pose b = random_pose(rng);
    EXPECT_LT((lie::adjoint(a * b) - lie::adjoint(a) * lie::adjoint(b)).cwiseAbs().maxCoeff(),
              1e-9);
  }
}

TEST(Lie, InverseOfComposition) {
  std::mt19937_64 rng(5);
  for (int i = 0; i < 1000; ++i) {
    const Pose a = random_pose(rng);
    const Pose b = random_pose(rng);
    EXPECT_LT(pose_distance((a * b).inverse(), b.inverse() * a.inverse()), 1e-9);
    const Pose c = random_pose(rng);
    EXPECT_LT(pose_distance((a * b) * c, a * (b * c)), 1e-9);
  }
}

TEST(Lie, LongCompositionStaysOrthonormal) {
  std::mt19937_64 rng(6);
  Pose t;
  for (int i = 0; i < 10000; ++i) t = t * lie::exp(random_twist(rng, 0.5, 0.1));
  const Matrix3 r = t.rotation().matrix();
  EXPECT_LT((r * r.transpose() - Matrix3::Identity()).cwiseAbs().maxCoeff(), 1e-7);
  EXPECT_NEAR(r.determinant(), 1.0, 1e-7);
}

TEST(Lie, LeftJacobianMatchesFiniteDifferences) {
  std::mt19937_64 rng(7);
  for (double max_angle : {1e-3, 5e-3, 0.5, 2.5}) {
    for (int n = 0; n < 50; ++n) {
      const Twist xi = random_twist(rng, max_angle);
      const Pose base_inv = lie::exp(xi).inverse();
      Matrix6 numeric;
      const double h = 1e-6;
      for (int i = 0; i < 6; ++i) {
        Twist d = Twist::Zero();
        d[i] = h;
        numeric.col(i) = (lie::log(lie::exp(xi + d) * base_inv) -
                          lie::log(lie::exp(xi - d) * base_inv)) / (2 * h);
      }
      EXPECT_LT(jacobian_rel_error(lie::left_jacobian(xi), numeric), 1e-7) << xi.transpose();
      EXPECT_LT((lie::left_jacobian(xi) * lie::left_jacobian_inverse(xi) - Matrix6::Identity())
                    .cwiseAbs()
                    .maxCoeff(),
                1e-9);
    }
  }
}

TEST(Lie, TransportCovarianceTrivialCases) {
  std::mt19937_64 rng(8);
  const Matrix6 cov = random_spd(rng, 6);
  EXPECT_LT((lie::transport_covariance(cov, Pose()) - cov).cwiseAbs().maxCoeff(), 1e-15);
  const Pose r(Rotation::exp(Vector3(0.3, -0.2, 1.1)), Vector3::Zero());
  EXPECT_LT((lie::transport_covariance(Matrix6::Identity(), r) - Matrix6::Identity())
                .cwiseAbs()
                .maxCoeff(),
            1e-12);
}

TEST(Lie, TransportCovarianceMatchesMonteCarlo) {
  std::mt19937_64 rng(9);
  const Pose t = random_pose(rng, 2.0);
  const Matrix6 cov = random_spd(rng, 6, 1e-3);
  const int n = 1000;
  Eigen::MatrixXd samples(n, 6);
  for (int i = 0; i < n; ++i) {
    const Twist xi = sample_gaussian(rng, cov);
    samples.row(i) = lie::log(t * lie::exp(xi) * t.inverse()).transpose();
  }
  const Matrix6 expected = lie::transport_covariance(cov, t);
  EXPECT_LT(frobenius_rel(sample_covariance(samples), expected), 0.10);
}

TEST(Lie, RightPerturbationSelfConsistency) {
  std::mt19937_64 rng(10);
  const Pose mean = random_pose(rng);
  const Matrix6 cov = random_spd(rng, 6, 1e-2);
  const int n = 20000;
  Eigen::MatrixXd samples(n, 6);
  for (int i = 0; i < n; ++i) {
    const Pose x = mean * lie::exp(sample_gaussian(rng, cov));
    samples.row(i) = lie::log(mean.inverse() * x).transpose();
  }
  EXPECT_LT(frobenius_rel(sample_covariance(samples), cov), 0.05);
}

TEST(Lie, InterpolateEndpoints) {
  std::mt19937_64 rng(11);
  const Pose a = random_pose(rng);
  const Pose b = random_pose(rng);
  EXPECT_LT(pose_distance(lie::interpolate(a, b, 0.0), a), 1e-12);
  EXPECT_LT(pose_distance(lie::interpolate(a, b, 1.0), b), 1e-9);
}
