#pragma once

// SO(3)/SE(3) for the estimators.
//
// Conventions used everywhere in the project:
//  * Twist ordering is translation first: xi = (rho; phi), rho in meters,
//    phi in radians.
//  * Uncertainty is a right perturbation, T = Tbar * exp(xi^), so every
//    6x6 covariance lives in the body-side tangent space with the same
//    (translation; rotation) block order.

#include <Eigen/Core>
#include <Eigen/Geometry>

namespace raloc {

using Vector3 = Eigen::Vector3d;
using Matrix3 = Eigen::Matrix3d;
using Vector6 = Eigen::Matrix<double, 6, 1>;
using Matrix6 = Eigen::Matrix<double, 6, 6>;

/// Element of se(3) as (translation; rotation).
using Twist = Vector6;

/// Below this rotation angle the sinc-like coefficients switch to series.
inline constexpr double kSmallAngle = 1e-7;

Matrix3 skew(const Vector3& v);

class Rotation {
 public:
  Rotation() = default;
  explicit Rotation(const Eigen::Quaterniond& q);

  static Rotation from_matrix(const Matrix3& m);
  static Rotation about_z(double yaw);
  static Rotation exp(const Vector3& phi);

  /// Rotation vector with angle in [0, pi]. At exactly pi the axis sign
  /// follows the stored quaternion.
  Vector3 log() const;

  Matrix3 matrix() const { return q_.toRotationMatrix(); }
  const Eigen::Quaterniond& quaternion() const { return q_; }
  double angle() const;
  double yaw() const;

  Rotation inverse() const { return Rotation(q_.conjugate(), Normalized{}); }
  Rotation operator*(const Rotation& other) const;
  Vector3 operator*(const Vector3& v) const { return q_ * v; }

 private:
  struct Normalized {};
  Rotation(const Eigen::Quaterniond& q, Normalized) : q_(q) {}

  Eigen::Quaterniond q_{Eigen::Quaterniond::Identity()};
};

class Pose {
 public:
  Pose() = default;
  Pose(const Rotation& rotation, const Vector3& translation)
      : rotation_(rotation), translation_(translation) {}

  static Pose from_translation(const Vector3& t) { return Pose(Rotation(), t); }

  const Rotation& rotation() const { return rotation_; }
  const Vector3& translation() const { return translation_; }

  Pose inverse() const;
  Pose operator*(const Pose& other) const;
  Vector3 operator*(const Vector3& point) const {
    return rotation_ * point + translation_;
  }
  Eigen::Matrix4d matrix() const;

 private:
  Rotation rotation_;
  Vector3 translation_{Vector3::Zero()};
};

struct PoseWithCovariance {
  Pose mean;
  Matrix6 cov{Matrix6::Zero()};
};

namespace lie {

/// 4x4 matrix form of xi^.
Eigen::Matrix4d hat(const Twist& xi);

/// Exact SE(3) exponential. Throws InvalidArgument on non-finite input.
Pose exp(const Twist& xi);

/// Inverse of exp. Rotation angle is reported in [0, pi].
Twist log(const Pose& pose);

/// Ad_T with the (translation; rotation) ordering:
///   [ R  t^R ]
///   [ 0   R  ]
Matrix6 adjoint(const Pose& pose);

/// Ad_T * cov * Ad_T^T, re-symmetrized.
Matrix6 transport_covariance(const Matrix6& cov, const Pose& pose);

Matrix3 so3_left_jacobian(const Vector3& phi);
Matrix3 so3_left_jacobian_inverse(const Vector3& phi);

/// J_l such that exp(xi + d) ~ exp(J_l d) exp(xi).
Matrix6 left_jacobian(const Twist& xi);
Matrix6 left_jacobian_inverse(const Twist& xi);

/// J_r such that exp(xi + d) ~ exp(xi) exp(J_r d).
inline Matrix6 right_jacobian(const Twist& xi) { return left_jacobian(-xi); }
inline Matrix6 right_jacobian_inverse(const Twist& xi) {
  return left_jacobian_inverse(-xi);
}

/// Geodesic interpolation a * exp(alpha * log(a^-1 b)).
Pose interpolate(const Pose& a, const Pose& b, double alpha);

/// (M + M^T) / 2.
template <typename Derived>
typename Derived::PlainObject symmetrize(const Eigen::MatrixBase<Derived>& m) {
  return 0.5 * (m + m.transpose());
}

}  // namespace lie
}  // namespace raloc
