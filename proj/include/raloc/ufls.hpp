#pragma once

// Range-and-odometry fixed-lag smoother. Estimates the robot trajectory and
// one bias per anchor over a sliding time window and publishes the newest
// pose with its marginal covariance.
//
// Graph layout:
//  * one robot pose per accepted range-stamp cluster (or per update tick),
//    chained by preintegrated odometry;
//  * one factor per accepted range linking that pose and the anchor's bias;
//  * bias variables persist for the whole run. Whenever old poses are
//    marginalized, the bias block of the resulting prior receives random
//    walk noise bias_walk_sigma^2 * (elapsed / window), so information from
//    past windows decays while biases stay constant inside a window;
//  * the initial pose prior and calibration bias priors enter as dense
//    priors so they are folded into the marginal prior like everything else.

#include <cstdint>
#include <functional>
#include <map>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

#include "raloc/factors.hpp"
#include "raloc/preintegration.hpp"
#include "raloc/solver.hpp"

namespace raloc {

enum class StatePolicy {
  PerRange,  // one state per range-stamp cluster
  PerTick,   // one state per update, ranges attached to the closest state
};

/// Initial T^W_o. A missing position is bootstrapped by multilateration.
struct InitialOffset {
  std::optional<Vector3> position;
  double yaw = 0.0;
  double sigma_position = 0.5;
  double sigma_rotation = 0.05;
};

struct UflsConfig {
  double window = 1.0;
  double update_rate = 5.0;
  double gate = 0.5;
  double range_sigma = 0.1;
  /// Bias random-walk sigma accumulated over one window length [m].
  double bias_walk_sigma = 0.05;
  LeverArm lever_arm;
  bool bias_estimation = true;
  StatePolicy state_policy = StatePolicy::PerRange;
  double cluster_tolerance = 1e-3;
  double startup_gate_factor = 3.0;
  /// Huber threshold in whitened units; 0 keeps plain least squares.
  double huber = 0.0;
  /// Cost above which the window is considered diverged.
  double divergence_cost = 1e9;
  OptimizerOptions solver;
  AccumulateOptions odometry;

  /// Throws ConfigError naming the offending field.
  void validate() const;
};

struct BiasEstimate {
  double mean = 0.0;
  double sigma = 0.0;
};

struct UflsEstimate {
  double stamp = 0.0;
  PoseWithCovariance pose;
  std::map<int, BiasEstimate> biases;
  /// T^o_i at `stamp`.
  Pose matched_odometry;
  std::int64_t rejected_count = 0;
  /// No range factor was available for the newest state.
  bool dead_reckoning = false;
};

struct RangeIngestResult {
  bool accepted = false;
  /// Predicted range used for gating (NaN if no prediction was possible).
  double predicted = 0.0;
};

/// T^W_o = T^W_i (T^o_i)^-1 with covariance Ad(M) S Ad(M)^T, M = T^o_i.
PoseWithCovariance frame_offset(const UflsEstimate& estimate);
/// World-frame covariance of the offset translation.
Matrix3 offset_position_covariance(const PoseWithCovariance& offset);

/// Groups time-sorted ranges whose stamps lie within `tolerance` of the
/// cluster's first stamp.
std::vector<std::vector<RangeMeasurement>> cluster_ranges(std::vector<RangeMeasurement> ranges,
                                                          double tolerance);

/// Range factor as used by both the fixed-lag and the batch estimator.
FactorPtr make_range_factor(const VariableKey& pose, const RangeMeasurement& z,
                            const Anchor& anchor, const UflsConfig& config);

/// Prior on one variable in the dense form used for marginal priors, so it
/// is folded into them on marginalization.
FactorPtr make_prior_factor(const VariableKey& key, const Value& mean, const Eigen::MatrixXd& cov);

/// Right-perturbation prior covariance on the first pose.
Matrix6 initial_pose_covariance(const InitialOffset& init);

/// Translation of T^W_o from ranges at different times, given the offset
/// rotation and the odometry. Multi-start Gauss-Newton on all ranges; the
/// worst range is dropped while its residual exceeds 1 m. Nullopt with
/// fewer than ten ranges or five anchors, without convergence, or when a distinct second
/// solution (e.g. a mirror image through the anchor geometry) fits almost as
/// well.
std::optional<Vector3> multilaterate_offset(const std::vector<RangeMeasurement>& ranges,
                                            const std::map<int, Anchor>& anchors,
                                            const OdometryBuffer& odometry,
                                            const Rotation& offset_rotation,
                                            const LeverArm& arm);

class Ufls {
 public:
  using Callback = std::function<void(const UflsEstimate&)>;

  Ufls(UflsConfig config, const std::vector<Anchor>& anchors, InitialOffset init = {});

  RangeIngestResult ingest_range(const RangeMeasurement& z);
  /// Returns false (and drops the sample) on stamp regression.
  bool ingest_odometry(const OdometrySample& s,
                       OdometryFrameMode mode = OdometryFrameMode::Absolute);

  /// Builds states for everything ingested so far, marginalizes states
  /// older than now - window, optimizes and publishes the newest state.
  /// Nullopt until initialized. Throws DivergenceError.
  std::optional<UflsEstimate> update(double now);

  void subscribe(Callback cb);

  const UflsConfig& config() const { return config_; }
  bool initialized() const { return initialized_; }
  std::int64_t rejected_count() const;
  std::int64_t accepted_count() const;
  /// Current window: pose states (key stamp, estimate) in time order.
  std::vector<std::pair<double, Pose>> window_states() const;
  std::map<int, double> bias_means() const;
  /// Fixed-lag smoothed trajectory: each state's estimate when it left the
  /// window, followed by the current window.
  std::vector<std::pair<double, Pose>> lagged_trajectory() const;
  const FactorGraph& graph() const { return graph_; }
  /// Final polish with the given options (for oracle comparisons).
  OptimizeSummary reoptimize(const OptimizerOptions& options);
  /// Wall time of each update's solve [s].
  const std::vector<double>& solve_times() const { return solve_times_; }

 private:
  struct GateSnapshot {
    bool valid = false;
    Pose offset;
    std::map<int, double> bias;
    double initialized_at = 0.0;
  };

  bool try_initialize(std::vector<RangeMeasurement>& ranges);
  double gate_for(double stamp) const;
  bool gate_check(const RangeMeasurement& z, double& predicted) const;
  void add_state(double stamp, const std::vector<RangeMeasurement>& ranges);
  void ensure_bias(int anchor_id);
  void marginalize_before(double cutoff);
  std::string dump_window() const;

  UflsConfig config_;
  std::map<int, Anchor> anchors_;
  InitialOffset init_;

  // Guarded by mutex_: ingest queues and gating snapshot.
  mutable std::mutex mutex_;
  std::vector<RangeMeasurement> pending_ranges_;
  std::vector<std::pair<OdometrySample, OdometryFrameMode>> pending_odometry_;
  std::optional<Pose> latest_odometry_;
  double latest_odometry_stamp_ = -1e300;
  GateSnapshot snapshot_;
  std::int64_t rejected_ = 0;
  std::int64_t accepted_ = 0;

  // Owned by the estimation context.
  OdometryBuffer odometry_;
  FactorGraph graph_;
  bool initialized_ = false;
  Pose offset_estimate_;
  std::vector<RangeMeasurement> bootstrap_;
  std::vector<RangeMeasurement> deferred_;
  std::vector<VariableKey> states_;  // pose keys in time order
  std::vector<std::pair<double, Pose>> retired_;
  std::int64_t next_index_ = 0;
  double last_frontier_ = 0.0;
  std::vector<double> solve_times_;
  std::vector<Callback> subscribers_;
};

}  // namespace raloc
