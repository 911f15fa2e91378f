#pragma once

// Seeded sensor simulator: anchor rooms, constant-speed spline paths,
// drifting odometry in a local frame, biased and spiky range streams, and
// the ground truth needed to score an estimator.
//
// Odometry model. With T_c(t) = T^W_i(0)^-1 T^W_i(t) the clean pose in {o},
//   T^o_i(t_k) = D(t_k) N_k,   N_k = N_{k-1} Exp(w_k) T_c(t_{k-1})^-1 T_c(t_k),
//   D(t) = {Rz(psi(t)), v_d t},
// where psi is a yaw drift (constant rate plus random walk) and w_k is the
// per-step increment noise. Each sample reports the
// covariance 0.5 * diag(s_t^2, s_r^2) * dt: composed through the increment
// rule (which adds neighbouring sample covariances) this matches the
// per-step noise. Densities below a floor are clamped for reporting only, so
// noiseless streams still carry an invertible covariance.

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "raloc/factors.hpp"
#include "raloc/preintegration.hpp"
#include "raloc/solver.hpp"
#include "raloc/ufls.hpp"

namespace raloc {

struct OdometryNoise {
  double translation_density = 0.0;  // m/sqrt(s)
  double rotation_density = 0.0;     // rad/sqrt(s)
  /// Reported-covariance floor for each density.
  double floor_density = 1e-3;
};

struct OdometryDrift {
  Vector3 velocity{Vector3::Zero()};  // m/s, expressed in {o}
  double yaw_rate = 0.0;              // rad/s
  double yaw_walk = 0.0;              // rad/sqrt(s)
};

struct NlosModel {
  double fraction = 0.0;
  double magnitude = 2.0;
};

struct Scenario {
  std::uint64_t seed = 1;
  std::vector<Anchor> anchors;
  std::vector<Vector3> waypoints;
  double speed = 1.0;
  bool closed = true;
  double duration = 60.0;
  double range_rate = 17.0;
  double odom_rate = 200.0;
  double range_sigma = 0.1;
  OdometryNoise odom_noise;
  OdometryDrift drift;
  std::map<int, double> bias_map;
  NlosModel nlos;
  LeverArm lever_arm;

  /// Throws ConfigError naming the offending field.
  void validate() const;
};

struct StampedPose {
  double stamp = 0.0;
  Pose pose;
};

/// A C^2 cubic spline through the waypoints (periodic when closed),
/// reparameterized by arc length.
class SplinePath {
 public:
  /// Throws InvalidArgument for fewer than two waypoints or a repeated
  /// consecutive waypoint.
  SplinePath(const std::vector<Vector3>& waypoints, bool closed);

  double length() const { return total_; }
  bool closed() const { return closed_; }
  /// Arc length s is wrapped for closed paths and clamped for open ones.
  Vector3 position(double s) const;
  /// Unit tangent.
  Vector3 tangent(double s) const;

 private:
  struct Segment {
    // p(u) = a + b u + c u^2 + d u^3 for u in [0, h].
    Vector3 a, b, c, d;
    double h = 0.0;
    double length = 0.0;
  };
  double speed_at(const Segment& seg, double u) const;
  double arc(const Segment& seg, double u) const;
  std::pair<const Segment*, double> locate(double s) const;

  bool closed_;
  std::vector<Segment> segments_;
  std::vector<double> cumulative_;
  double total_ = 0.0;
};

/// Poses at `rate` over [0, duration] moving at constant `speed`. Closed
/// paths repeat; open paths hold the final pose. Yaw follows the direction
/// of travel.
std::vector<StampedPose> generate_trajectory(const std::vector<Vector3>& waypoints, double speed,
                                             bool closed, double duration, double rate);

struct LabeledRange {
  RangeMeasurement z;
  bool nlos = false;
};

struct Dataset {
  std::vector<Anchor> anchors;
  LeverArm lever_arm;
  std::vector<LabeledRange> ranges;
  std::vector<OdometrySample> odometry;
  std::vector<StampedPose> ground_truth;
  /// True T^W_o at each odometry stamp.
  std::vector<StampedPose> offset_truth;
  std::map<int, double> biases;
};

Dataset simulate(const Scenario& scenario);

/// Named presets "<room>_<path>", rooms utias_testbed and cafeteria, paths
/// square and slalom. Nominal noise, no biases, no spikes.
std::vector<std::string> preset_names();
/// Throws ConfigError for an unknown name.
Scenario preset(const std::string& name);

enum class BatchBias { Constant, None };

struct BatchOptions {
  UflsConfig config;
  InitialOffset init;
  OptimizerOptions solver{100, 1e-12, 1e-10, 1e-4, 1e10};
  /// After each solve, ranges with |residual| > config.gate are dropped and
  /// the problem re-solved, at most this many times.
  int gating_passes = 3;
  /// Restrict to these ranges (e.g. the ones a fixed-lag run accepted).
  std::optional<std::vector<RangeMeasurement>> ranges;
};

struct BatchResult {
  std::vector<StampedPose> trajectory;
  std::map<int, BiasEstimate> biases;
  OptimizeSummary summary;
  std::size_t ranges_used = 0;
};

/// One graph over the whole run, built with the same state, factor and
/// initialization rules as the fixed-lag smoother, without marginalization.
BatchResult batch_oracle(const std::vector<RangeMeasurement>& ranges,
                         const std::vector<OdometrySample>& odometry,
                         const std::vector<Anchor>& anchors, BatchBias mode,
                         const BatchOptions& options);

}  // namespace raloc
