#include "raloc/lie.hpp"

#include <cmath>

#include "raloc/errors.hpp"

namespace raloc {
namespace {

// Coefficients with cancellation in their closed form switch to series
// well above kSmallAngle; the truncation error there is below 1e-16.
constexpr double kSeriesAngle = 1e-2;

bool all_finite(const Eigen::Ref<const Eigen::VectorXd>& v) { return v.allFinite(); }

}  // namespace

Matrix3 skew(const Vector3& v) {
  Matrix3 s;
  // clang-format off
  s <<    0.0, -v.z(),  v.y(),
        v.z(),    0.0, -v.x(),
       -v.y(),  v.x(),    0.0;
  // clang-format on
  return s;
}

Rotation::Rotation(const Eigen::Quaterniond& q) {
  const double n = q.norm();
  if (!std::isfinite(n) || n < 1e-12) {
    throw InvalidArgument("Rotation: quaternion is zero or not finite");
  }
  q_ = Eigen::Quaterniond(q.coeffs() / n);
}

Rotation Rotation::from_matrix(const Matrix3& m) {
  if (!m.allFinite()) throw InvalidArgument("Rotation: matrix is not finite");
  return Rotation(Eigen::Quaterniond(m));
}

Rotation Rotation::about_z(double yaw) {
  return Rotation(Eigen::Quaterniond(Eigen::AngleAxisd(yaw, Vector3::UnitZ())));
}

Rotation Rotation::exp(const Vector3& phi) {
  if (!phi.allFinite()) throw InvalidArgument("Rotation::exp: non-finite input");
  const double theta = phi.norm();
  const double half = 0.5 * theta;
  // sin(theta/2) / theta
  const double k = theta < kSmallAngle ? 0.5 - theta * theta / 48.0 : std::sin(half) / theta;
  Eigen::Quaterniond q;
  q.w() = std::cos(half);
  q.vec() = k * phi;
  return Rotation(q);
}

Vector3 Rotation::log() const {
  Eigen::Quaterniond q = q_;
  if (q.w() < 0.0) q.coeffs() = -q.coeffs();
  const double n = q.vec().norm();
  if (n < kSmallAngle) {
    const double w = q.w();
    return (2.0 / w) * (1.0 - n * n / (3.0 * w * w)) * q.vec();
  }
  const double theta = 2.0 * std::atan2(n, q.w());
  return (theta / n) * q.vec();
}

double Rotation::angle() const {
  return 2.0 * std::atan2(q_.vec().norm(), std::abs(q_.w()));
}

double Rotation::yaw() const {
  const Matrix3 m = matrix();
  return std::atan2(m(1, 0), m(0, 0));
}

Rotation Rotation::operator*(const Rotation& other) const {
  Eigen::Quaterniond q = q_ * other.q_;
  q.normalize();
  return Rotation(q, Normalized{});
}

Pose Pose::inverse() const {
  const Rotation r = rotation_.inverse();
  return Pose(r, -(r * translation_));
}

Pose Pose::operator*(const Pose& other) const {
  return Pose(rotation_ * other.rotation_, rotation_ * other.translation_ + translation_);
}

Eigen::Matrix4d Pose::matrix() const {
  Eigen::Matrix4d m = Eigen::Matrix4d::Identity();
  m.topLeftCorner<3, 3>() = rotation_.matrix();
  m.topRightCorner<3, 1>() = translation_;
  return m;
}

namespace lie {

Eigen::Matrix4d hat(const Twist& xi) {
  Eigen::Matrix4d m = Eigen::Matrix4d::Zero();
  m.topLeftCorner<3, 3>() = skew(xi.tail<3>());
  m.topRightCorner<3, 1>() = xi.head<3>();
  return m;
}

Matrix3 so3_left_jacobian(const Vector3& phi) {
  const double theta = phi.norm();
  const Matrix3 w = skew(phi);
  if (theta < kSmallAngle) return Matrix3::Identity() + 0.5 * w + (1.0 / 6.0) * w * w;
  const double t2 = theta * theta;
  const double s = std::sin(0.5 * theta);
  const double a = 2.0 * s * s / t2;
  const double b = theta < kSeriesAngle ? 1.0 / 6.0 - t2 / 120.0 + t2 * t2 / 5040.0
                                        : (theta - std::sin(theta)) / (t2 * theta);
  return Matrix3::Identity() + a * w + b * w * w;
}

Matrix3 so3_left_jacobian_inverse(const Vector3& phi) {
  const double theta = phi.norm();
  const Matrix3 w = skew(phi);
  const double t2 = theta * theta;
  double c;
  if (theta < kSeriesAngle) {
    c = 1.0 / 12.0 + t2 / 720.0 + t2 * t2 / 30240.0;
  } else {
    const double half = 0.5 * theta;
    c = (1.0 - half * std::cos(half) / std::sin(half)) / t2;
  }
  return Matrix3::Identity() - 0.5 * w + c * w * w;
}

namespace {

// Off-diagonal block of the SE(3) left Jacobian.
Matrix3 jacobian_q(const Vector3& rho, const Vector3& phi) {
  const double theta = phi.norm();
  const double t2 = theta * theta;
  double c1, c2, c3;
  if (theta < kSeriesAngle) {
    const double t4 = t2 * t2;
    c1 = 1.0 / 6.0 - t2 / 120.0 + t4 / 5040.0;
    c2 = 1.0 / 24.0 - t2 / 720.0 + t4 / 40320.0;
    c3 = 1.0 / 120.0 - t2 / 2520.0 + t4 / 120960.0;
  } else {
    const double s = std::sin(theta);
    const double c = std::cos(theta);
    c1 = (theta - s) / (t2 * theta);
    c2 = (t2 + 2.0 * c - 2.0) / (2.0 * t2 * t2);
    c3 = (2.0 * theta - 3.0 * s + theta * c) / (2.0 * t2 * t2 * theta);
  }
  const Matrix3 p = skew(phi);
  const Matrix3 r = skew(rho);
  const Matrix3 pr = p * r;
  const Matrix3 rp = r * p;
  const Matrix3 prp = pr * p;
  const Matrix3 ppr = p * pr;
  return 0.5 * r + c1 * (pr + rp + prp) + c2 * (ppr + rp * p - 3.0 * prp) +
         c3 * (prp * p + p * prp);
}

}  // namespace

Matrix6 left_jacobian(const Twist& xi) {
  const Matrix3 j = so3_left_jacobian(xi.tail<3>());
  Matrix6 out = Matrix6::Zero();
  out.topLeftCorner<3, 3>() = j;
  out.bottomRightCorner<3, 3>() = j;
  out.topRightCorner<3, 3>() = jacobian_q(xi.head<3>(), xi.tail<3>());
  return out;
}

Matrix6 left_jacobian_inverse(const Twist& xi) {
  const Matrix3 ji = so3_left_jacobian_inverse(xi.tail<3>());
  const Matrix3 q = jacobian_q(xi.head<3>(), xi.tail<3>());
  Matrix6 out = Matrix6::Zero();
  out.topLeftCorner<3, 3>() = ji;
  out.bottomRightCorner<3, 3>() = ji;
  out.topRightCorner<3, 3>() = -ji * q * ji;
  return out;
}

Pose exp(const Twist& xi) {
  if (!all_finite(xi)) throw InvalidArgument("lie::exp: non-finite twist");
  const Vector3 phi = xi.tail<3>();
  return Pose(Rotation::exp(phi), so3_left_jacobian(phi) * xi.head<3>());
}

Twist log(const Pose& pose) {
  const Vector3 phi = pose.rotation().log();
  Twist xi;
  xi.head<3>() = so3_left_jacobian_inverse(phi) * pose.translation();
  xi.tail<3>() = phi;
  return xi;
}

Matrix6 adjoint(const Pose& pose) {
  const Matrix3 r = pose.rotation().matrix();
  Matrix6 ad = Matrix6::Zero();
  ad.topLeftCorner<3, 3>() = r;
  ad.bottomRightCorner<3, 3>() = r;
  ad.topRightCorner<3, 3>() = skew(pose.translation()) * r;
  return ad;
}

Matrix6 transport_covariance(const Matrix6& cov, const Pose& pose) {
  const Matrix6 ad = adjoint(pose);
  return symmetrize(ad * cov * ad.transpose());
}

Pose interpolate(const Pose& a, const Pose& b, double alpha) {
  return a * exp(alpha * log(a.inverse() * b));
}

}  // namespace lie
}  // namespace raloc
