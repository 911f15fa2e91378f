#include "raloc/factors.hpp"

#include <cmath>

#include <Eigen/Cholesky>
#include <fmt/format.h>

#include "raloc/errors.hpp"

namespace raloc {

Eigen::MatrixXd sqrt_information(const Eigen::MatrixXd& cov) {
  if (cov.rows() != cov.cols() || cov.rows() == 0) {
    throw InvalidArgument("sqrt_information: covariance must be square and non-empty");
  }
  if (!cov.allFinite()) throw DegenerateFactorError("sqrt_information: non-finite covariance");
  const Eigen::Index n = cov.rows();
  const Eigen::MatrixXd sym = lie::symmetrize(Eigen::MatrixXd(cov));
  Eigen::LLT<Eigen::MatrixXd> llt(sym);
  if (llt.info() != Eigen::Success) {
    llt.compute(sym + 1e-12 * Eigen::MatrixXd::Identity(n, n));
    if (llt.info() != Eigen::Success) {
      throw DegenerateFactorError("sqrt_information: covariance not invertible after regularization");
    }
  }
  const Eigen::MatrixXd info = lie::symmetrize(Eigen::MatrixXd(llt.solve(Eigen::MatrixXd::Identity(n, n))));
  Eigen::LLT<Eigen::MatrixXd> info_llt(info);
  if (info_llt.info() != Eigen::Success || !info.allFinite()) {
    throw DegenerateFactorError("sqrt_information: information not positive definite");
  }
  // info = L L^T, so W = L^T gives W^T W = info.
  return info_llt.matrixU();
}

namespace {

Vector3 antenna_to_anchor(const Pose& pose, const Anchor& anchor, const LeverArm& arm) {
  return anchor.position - pose.rotation() * arm.offset - pose.translation();
}

Eigen::MatrixXd scalar_weight(double sigma) {
  if (!(sigma > 0.0) || !std::isfinite(sigma)) {
    throw DegenerateFactorError(fmt::format("non-positive sigma {}", sigma));
  }
  return Eigen::MatrixXd::Constant(1, 1, 1.0 / sigma);
}

}  // namespace

double predicted_range(const Pose& pose, double bias, const Anchor& anchor, const LeverArm& arm) {
  return antenna_to_anchor(pose, anchor, arm).norm() + bias;
}

Residual range_residual(const Pose& pose, double bias, const RangeMeasurement& z,
                        const Anchor& anchor, const LeverArm& arm) {
  const Vector3 d = antenna_to_anchor(pose, anchor, arm);
  const double dist = d.norm();
  if (dist < 1e-6) {
    throw SingularGeometryError(
        fmt::format("range factor: antenna coincident with anchor {}", anchor.id));
  }
  const Vector3 u = d / dist;
  const Matrix3 r = pose.rotation().matrix();

  Residual res;
  res.value = Eigen::VectorXd::Constant(1, dist + bias - z.range);
  Eigen::MatrixXd jt(1, 6);
  jt.leftCols<3>() = -u.transpose() * r;
  jt.rightCols<3>() = u.transpose() * r * skew(arm.offset);
  res.jacobians = {jt, Eigen::MatrixXd::Ones(1, 1)};
  res.weight = scalar_weight(z.sigma);
  return res;
}

Residual odometry_residual(const Pose& ti, const Pose& tj, const PreintegratedOdometry& m) {
  Residual res;
  const Twist e = lie::log(m.delta.inverse() * ti.inverse() * tj);
  const Matrix6 jr_inv = lie::right_jacobian_inverse(e);
  res.value = e;
  res.jacobians = {Eigen::MatrixXd(-jr_inv * lie::adjoint(tj.inverse() * ti)),
                   Eigen::MatrixXd(jr_inv)};
  res.weight = sqrt_information(m.cov);
  return res;
}

Residual prior_residual(const Pose& x, const Pose& mean, const Matrix6& cov) {
  Residual res;
  const Twist e = lie::log(mean.inverse() * x);
  res.value = e;
  res.jacobians = {Eigen::MatrixXd(lie::right_jacobian_inverse(e))};
  res.weight = sqrt_information(cov);
  return res;
}

Residual prior_residual(double bias, double mean, double sigma) {
  Residual res;
  res.value = Eigen::VectorXd::Constant(1, bias - mean);
  res.jacobians = {Eigen::MatrixXd::Ones(1, 1)};
  res.weight = scalar_weight(sigma);
  return res;
}

Residual prior_residual(const OffsetState& x, const OffsetState& mean, const Matrix6& cov) {
  Residual res;
  res.value = x.vector() - mean.vector();
  res.jacobians = {Eigen::MatrixXd::Identity(6, 6)};
  res.weight = sqrt_information(cov);
  return res;
}

Matrix6 wnoa_transition(double dt) {
  Matrix6 phi = Matrix6::Identity();
  phi.topRightCorner<3, 3>() = dt * Matrix3::Identity();
  return phi;
}

Matrix6 wnoa_covariance(double dt, const Matrix3& qw) {
  Matrix6 q;
  q.topLeftCorner<3, 3>() = dt * dt * dt / 3.0 * qw;
  q.topRightCorner<3, 3>() = dt * dt / 2.0 * qw;
  q.bottomLeftCorner<3, 3>() = dt * dt / 2.0 * qw;
  q.bottomRightCorner<3, 3>() = dt * qw;
  return q;
}

Residual wnoa_residual(const OffsetState& prev, const OffsetState& next, double dt,
                       const Matrix3& qw) {
  if (!(dt > 0.0)) throw OrderingError(fmt::format("wnoa factor: dt = {} must be positive", dt));
  const Matrix6 phi = wnoa_transition(dt);
  Residual res;
  res.value = next.vector() - phi * prev.vector();
  res.jacobians = {Eigen::MatrixXd(-phi), Eigen::MatrixXd::Identity(6, 6)};
  res.weight = sqrt_information(wnoa_covariance(dt, qw));
  return res;
}

Residual offset_measurement_residual(const OffsetState& x, const Vector3& y, const Matrix3& cov) {
  Residual res;
  res.value = x.position - y;
  Eigen::MatrixXd j = Eigen::MatrixXd::Zero(3, 6);
  j.leftCols<3>().setIdentity();
  res.jacobians = {j};
  res.weight = sqrt_information(cov);
  return res;
}

// --- graph factors ---

std::vector<VariableKey> RangeFactor::make_keys(const VariableKey& pose,
                                                const std::optional<VariableKey>& bias) {
  if (bias) return {pose, *bias};
  return {pose};
}

RangeFactor::RangeFactor(const VariableKey& pose, std::optional<VariableKey> bias,
                         RangeMeasurement z, Anchor anchor, LeverArm arm, double fixed_bias)
    : Factor(make_keys(pose, bias)),
      has_bias_(bias.has_value()),
      z_(z),
      anchor_(std::move(anchor)),
      arm_(arm),
      fixed_bias_(fixed_bias) {
  scalar_weight(z_.sigma);
}

Residual RangeFactor::evaluate(const Values& values) const {
  const double b = has_bias_ ? values.scalar(keys()[1]) : fixed_bias_;
  Residual res = range_residual(values.pose(keys()[0]), b, z_, anchor_, arm_);
  if (!has_bias_) res.jacobians.pop_back();
  return res;
}

OdometryFactor::OdometryFactor(const VariableKey& from, const VariableKey& to,
                               PreintegratedOdometry m)
    : Factor({from, to}), m_(std::move(m)), weight_(sqrt_information(m_.cov)) {}

Residual OdometryFactor::evaluate(const Values& values) const {
  const Pose& ti = values.pose(keys()[0]);
  const Pose& tj = values.pose(keys()[1]);
  Residual res;
  const Twist e = lie::log(m_.delta.inverse() * ti.inverse() * tj);
  const Matrix6 jr_inv = lie::right_jacobian_inverse(e);
  res.value = e;
  res.jacobians = {Eigen::MatrixXd(-jr_inv * lie::adjoint(tj.inverse() * ti)),
                   Eigen::MatrixXd(jr_inv)};
  res.weight = weight_;
  return res;
}

PosePriorFactor::PosePriorFactor(const VariableKey& key, Pose mean, const Matrix6& cov)
    : Factor({key}), mean_(mean), weight_(sqrt_information(cov)) {}

Residual PosePriorFactor::evaluate(const Values& values) const {
  Residual res;
  const Twist e = lie::log(mean_.inverse() * values.pose(keys()[0]));
  res.value = e;
  res.jacobians = {Eigen::MatrixXd(lie::right_jacobian_inverse(e))};
  res.weight = weight_;
  return res;
}

BiasPriorFactor::BiasPriorFactor(const VariableKey& key, double mean, double sigma)
    : Factor({key}), mean_(mean), sigma_(sigma) {
  scalar_weight(sigma_);
}

Residual BiasPriorFactor::evaluate(const Values& values) const {
  return prior_residual(values.scalar(keys()[0]), mean_, sigma_);
}

OffsetPriorFactor::OffsetPriorFactor(const VariableKey& key, const Vector6& mean,
                                     const Matrix6& cov)
    : Factor({key}), mean_(mean), weight_(sqrt_information(cov)) {}

Residual OffsetPriorFactor::evaluate(const Values& values) const {
  Residual res;
  res.value = values.vector(keys()[0]) - mean_;
  res.jacobians = {Eigen::MatrixXd::Identity(6, 6)};
  res.weight = weight_;
  return res;
}

WnoaFactor::WnoaFactor(const VariableKey& prev, const VariableKey& next, double dt,
                       const Matrix3& qw)
    : Factor({prev, next}), transition_(wnoa_transition(dt)) {
  if (!(dt > 0.0)) throw OrderingError(fmt::format("wnoa factor: dt = {} must be positive", dt));
  weight_ = sqrt_information(wnoa_covariance(dt, qw));
}

Residual WnoaFactor::evaluate(const Values& values) const {
  Residual res;
  res.value = values.vector(keys()[1]) - transition_ * values.vector(keys()[0]);
  res.jacobians = {Eigen::MatrixXd(-transition_), Eigen::MatrixXd::Identity(6, 6)};
  res.weight = weight_;
  return res;
}

OffsetMeasurementFactor::OffsetMeasurementFactor(const VariableKey& key, const Vector3& y,
                                                 const Matrix3& cov)
    : Factor({key}), y_(y), weight_(sqrt_information(cov)) {}

Residual OffsetMeasurementFactor::evaluate(const Values& values) const {
  Residual res;
  res.value = values.vector(keys()[0]).head<3>() - y_;
  Eigen::MatrixXd j = Eigen::MatrixXd::Zero(3, 6);
  j.leftCols<3>().setIdentity();
  res.jacobians = {j};
  res.weight = weight_;
  return res;
}

}  // namespace raloc
