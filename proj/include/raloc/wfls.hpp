#pragma once

// Second fixed-lag smoother: a white-noise-on-acceleration (constant
// velocity) Gaussian-process prior over the frame-offset position, fed with
// the offsets computed from the range smoother. The rotation of the offset
// is not smoothed; the latest one received is passed through unchanged and
// carries no covariance.

#include <functional>
#include <memory>
#include <mutex>
#include <optional>
#include <vector>

#include "raloc/factors.hpp"
#include "raloc/preintegration.hpp"
#include "raloc/solver.hpp"

namespace raloc {

struct WflsConfig {
  double window = 1.0;
  double update_rate = 10.0;
  /// Power spectral density of the offset acceleration [m^2/s^3].
  Matrix3 qw{Matrix3::Identity() * 0.1};
  double initial_position_sigma = 10.0;
  double initial_velocity_sigma = 1.0;
  OptimizerOptions solver;

  void validate() const;
};

struct WflsOutput {
  OffsetState offset;
  Rotation rotation;
};

struct CorrectedPose {
  double stamp = 0.0;
  /// Estimated T^W_i.
  Pose pose;
  Vector3 offset_position{Vector3::Zero()};
  Rotation offset_rotation;
  /// False until the first smoothed offset exists; the pose is then raw
  /// odometry in the odometry frame.
  bool aligned = false;
};

/// Constant-velocity GP posterior mean between two knots:
///   x(t) = Lambda x_a + Psi x_b, Psi = Q(tau) Phi(t_b - t)^T Q(dt)^-1,
///   Lambda = Phi(tau) - Psi Phi(dt).
/// Qw cancels, so it is not an argument.
OffsetState gp_interpolate(const OffsetState& a, const OffsetState& b, double t);
/// Phi(t - x.stamp) x.
OffsetState gp_extrapolate(const OffsetState& x, double t);

class Wfls {
 public:
  using Callback = std::function<void(const CorrectedPose&)>;

  explicit Wfls(WflsConfig config);

  /// Queues one offset measurement; false (dropped) on stamp regression.
  bool ingest_offset(const Vector3& y, const Matrix3& cov, const Rotation& rotation, double stamp);

  /// Marginalizes states older than now - window, optimizes and publishes
  /// the newest smoothed state. Throws NoEstimateError with no states.
  WflsOutput update(double now);

  /// Latest published offset extrapolated to odom.stamp and composed with
  /// the odometry pose. Safe to call concurrently with ingest and update.
  CorrectedPose correct(const OdometrySample& odom) const;

  /// Smoothed state at `t` from the current window (estimation context only).
  OffsetState query(double t) const;
  std::vector<OffsetState> window_states() const;

  void subscribe(Callback cb) { subscribers_.push_back(std::move(cb)); }
  const WflsConfig& config() const { return config_; }
  bool has_output() const;

 private:
  struct Pending {
    Vector3 y;
    Matrix3 cov;
    Rotation rotation;
    double stamp;
  };
  struct Snapshot {
    OffsetState offset;
    Rotation rotation;
  };

  WflsConfig config_;

  mutable std::mutex mutex_;
  std::vector<Pending> pending_;
  double last_ingested_ = -1e300;
  std::shared_ptr<const Snapshot> snapshot_;

  FactorGraph graph_;
  std::vector<VariableKey> states_;
  std::int64_t next_index_ = 0;
  Rotation latest_rotation_;
  std::vector<Callback> subscribers_;
};

}  // namespace raloc
