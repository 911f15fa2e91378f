#pragma once

// Causal replay of a measurement stream through the two smoothers.
//
//   ranges, odometry -> Ufls -> T^W_o (frame offset) -> Wfls -> T^W_o smooth
//   odometry ----------------------------------------------------> corrected
//
// Records are fed one at a time in stamp order; smoother updates fire on
// fixed ticks t0 + k / rate, each seeing only records with stamp <= tick.

#include <string>
#include <vector>

#include "raloc/metrics.hpp"
#include "raloc/ufls.hpp"
#include "raloc/wfls.hpp"

namespace raloc {

enum class Mode {
  Full,      // bias estimation + smoothed offset
  NoBias,    // offset smoothing, biases fixed at zero
  NoWnoa,    // raw (unsmoothed) offset applied to odometry
  UflsOnly,  // range smoother output used directly
  VioOnly,   // odometry alone, in its own frame
};

Mode parse_mode(const std::string& name);
std::string to_string(Mode mode);

struct PipelineConfig {
  UflsConfig ufls;
  WflsConfig wfls;
  InitialOffset init;
  /// Default covariance for odometry records without one.
  double odom_translation_density = 0.02;
  double odom_rotation_density = 0.005;
};

struct OffsetRecord {
  double stamp = 0.0;
  Vector3 position{Vector3::Zero()};
  Rotation rotation;
};

struct BiasRecord {
  double stamp = 0.0;
  std::map<int, BiasEstimate> biases;
};

struct PipelineResult {
  /// Output trajectory of the mode (aligned samples only).
  std::vector<StampedPose> corrected;
  /// Offset applied to each corrected sample (empty for ufls-only, vio-only).
  std::vector<OffsetRecord> offsets;
  /// Raw frame offsets T^W_o at the range smoother rate.
  std::vector<OffsetRecord> raw_offsets;
  std::vector<StampedPose> ufls;
  /// Range smoother states as they left the window (fixed-lag smoothed).
  std::vector<StampedPose> ufls_lagged;
  std::vector<BiasRecord> biases;
  std::vector<RangeDecision> decisions;
  std::int64_t accepted = 0;
  std::int64_t rejected = 0;
  std::vector<double> solve_times;
};

struct Record {
  enum class Kind { Range, Odometry } kind = Kind::Range;
  RangeMeasurement range;
  OdometrySample odometry;
  OdometryFrameMode frame = OdometryFrameMode::Absolute;
  /// False when the log carried no covariance; one is then synthesized from
  /// the configured densities.
  bool has_covariance = true;
  double stamp() const { return kind == Kind::Range ? range.stamp : odometry.stamp; }
};

/// Ranges and odometry merged into one stream; odometry first on ties.
std::vector<Record> merge_records(const std::vector<RangeMeasurement>& ranges,
                                  const std::vector<OdometrySample>& odometry);

class Pipeline {
 public:
  Pipeline(Mode mode, PipelineConfig config, const std::vector<Anchor>& anchors);

  /// Runs every tick due before `record`, then ingests it.
  void feed(const Record& record);
  /// Runs the ticks up to and including `stamp`.
  void advance_to(double stamp);

  const PipelineResult& result() const { return result_; }
  Mode mode() const { return mode_; }

 private:
  void ufls_tick(double now);
  void wfls_tick(double now);
  void run_ticks(double until, bool inclusive);
  void on_odometry(OdometrySample s, OdometryFrameMode frame, bool has_covariance);

  Mode mode_;
  PipelineConfig config_;
  Ufls ufls_;
  Wfls wfls_;
  bool started_ = false;
  double t0_ = 0.0;
  std::int64_t ufls_ticks_ = 0;
  std::int64_t wfls_ticks_ = 0;
  std::optional<Pose> raw_offset_;
  std::optional<Pose> latest_odom_;
  double last_odom_stamp_ = 0.0;
  double last_offset_stamp_ = -1e300;
  PipelineResult result_;
};

PipelineResult run_pipeline(Mode mode, const PipelineConfig& config, const std::vector<Anchor>& anchors,
                            const std::vector<Record>& records);

}  // namespace raloc
