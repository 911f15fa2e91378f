#pragma once

// Residuals and analytic Jacobians for both smoothers.
//
// Every Jacobian is taken with respect to the tangent-space perturbation
// of the variable: right perturbation T exp(d^) for poses, additive for
// biases and offset states.

#include <optional>

#include "raloc/graph.hpp"
#include "raloc/preintegration.hpp"

namespace raloc {

struct Anchor {
  int id = 0;
  Vector3 position{Vector3::Zero()};
  double bias_prior_mean = 0.0;
  double bias_prior_sigma = 0.2;
};

struct RangeMeasurement {
  double stamp = 0.0;
  int anchor_id = 0;
  double range = 0.0;
  double sigma = 0.1;
};

/// UWB antenna position in the body frame.
struct LeverArm {
  Vector3 offset{Vector3::Zero()};
};

/// Frame-offset position and its rate, the state of the smoothing prior.
struct OffsetState {
  double stamp = 0.0;
  Vector3 position{Vector3::Zero()};
  Vector3 velocity{Vector3::Zero()};

  Vector6 vector() const {
    Vector6 v;
    v << position, velocity;
    return v;
  }
  static OffsetState from_vector(double stamp, const Vector6& v) {
    return {stamp, v.head<3>(), v.tail<3>()};
  }
};

/// W with W^T W = cov^-1. A cov that is not positive definite gets a
/// 1e-12 ridge; if that still fails, DegenerateFactorError.
Eigen::MatrixXd sqrt_information(const Eigen::MatrixXd& cov);

/// ||p_a - R p_u - p|| + b.
double predicted_range(const Pose& pose, double bias, const Anchor& anchor, const LeverArm& arm);

Residual range_residual(const Pose& pose, double bias, const RangeMeasurement& z,
                        const Anchor& anchor, const LeverArm& arm);

/// log(m.delta^-1 Ti^-1 Tj).
Residual odometry_residual(const Pose& ti, const Pose& tj, const PreintegratedOdometry& m);

Residual prior_residual(const Pose& x, const Pose& mean, const Matrix6& cov);
Residual prior_residual(double bias, double mean, double sigma);
Residual prior_residual(const OffsetState& x, const OffsetState& mean, const Matrix6& cov);

/// Constant-velocity transition over dt.
Matrix6 wnoa_transition(double dt);
/// Process covariance [dt^3/3 Qw, dt^2/2 Qw; dt^2/2 Qw, dt Qw].
Matrix6 wnoa_covariance(double dt, const Matrix3& qw);

/// x_next - Phi(dt) x_prev. Throws OrderingError for dt <= 0.
Residual wnoa_residual(const OffsetState& prev, const OffsetState& next, double dt,
                       const Matrix3& qw);

/// position(x) - y.
Residual offset_measurement_residual(const OffsetState& x, const Vector3& y, const Matrix3& cov);

// Graph factors. Whitening is computed once at construction.

class RangeFactor final : public Factor {
 public:
  /// Without a bias key the bias is held at `fixed_bias`.
  RangeFactor(const VariableKey& pose, std::optional<VariableKey> bias, RangeMeasurement z,
              Anchor anchor, LeverArm arm, double fixed_bias = 0.0);
  Residual evaluate(const Values& values) const override;
  std::string name() const override { return "range"; }
  const RangeMeasurement& measurement() const { return z_; }

 private:
  static std::vector<VariableKey> make_keys(const VariableKey& pose,
                                            const std::optional<VariableKey>& bias);
  bool has_bias_;
  RangeMeasurement z_;
  Anchor anchor_;
  LeverArm arm_;
  double fixed_bias_;
};

class OdometryFactor final : public Factor {
 public:
  OdometryFactor(const VariableKey& from, const VariableKey& to, PreintegratedOdometry m);
  Residual evaluate(const Values& values) const override;
  std::string name() const override { return "odometry"; }
  const PreintegratedOdometry& measurement() const { return m_; }

 private:
  PreintegratedOdometry m_;
  Matrix6 weight_;
};

class PosePriorFactor final : public Factor {
 public:
  PosePriorFactor(const VariableKey& key, Pose mean, const Matrix6& cov);
  Residual evaluate(const Values& values) const override;
  std::string name() const override { return "pose_prior"; }

 private:
  Pose mean_;
  Matrix6 weight_;
};

class BiasPriorFactor final : public Factor {
 public:
  BiasPriorFactor(const VariableKey& key, double mean, double sigma);
  Residual evaluate(const Values& values) const override;
  std::string name() const override { return "bias_prior"; }

 private:
  double mean_;
  double sigma_;
};

class OffsetPriorFactor final : public Factor {
 public:
  OffsetPriorFactor(const VariableKey& key, const Vector6& mean, const Matrix6& cov);
  Residual evaluate(const Values& values) const override;
  std::string name() const override { return "offset_prior"; }

 private:
  Vector6 mean_;
  Matrix6 weight_;
};

class WnoaFactor final : public Factor {
 public:
  WnoaFactor(const VariableKey& prev, const VariableKey& next, double dt, const Matrix3& qw);
  Residual evaluate(const Values& values) const override;
  std::string name() const override { return "wnoa"; }

 private:
  Matrix6 transition_;
  Matrix6 weight_;
};

class OffsetMeasurementFactor final : public Factor {
 public:
  OffsetMeasurementFactor(const VariableKey& key, const Vector3& y, const Matrix3& cov);
  Residual evaluate(const Values& values) const override;
  std::string name() const override { return "offset_measurement"; }

 private:
  Vector3 y_;
  Matrix3 weight_;
};

}  // namespace raloc
