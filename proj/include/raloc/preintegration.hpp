#pragma once

// Odometry preintegration: many high-rate odometry samples between two
// smoother states are folded into one relative-pose measurement.
//
// Absolute samples are first turned into increments,
//   dT  = T_prev^-1 T_next
//   S'  = Ad(dT^-1) S_prev Ad(dT^-1)^T + S_next
// and increments are composed with
//   dT_ac = dT_a dT_c
//   S''   = Ad(dT_c^-1) S_a Ad(dT_c^-1)^T + S_c.
//
// Caveat: the increment covariance adds the absolute covariances of two
// successive samples as if they were independent. A real VIO stream has
// strongly correlated errors between neighbouring samples, so this
// overstates the increment uncertainty. It is implemented as stated.

#include <deque>
#include <optional>
#include <span>
#include <vector>

#include "raloc/lie.hpp"

namespace raloc {

/// Pose of the robot frame in the odometry frame at `stamp`.
struct OdometrySample {
  double stamp = 0.0;
  PoseWithCovariance pose;
};

struct PreintegratedOdometry {
  double start_stamp = 0.0;
  double end_stamp = 0.0;
  Pose delta;
  Matrix6 cov{Matrix6::Zero()};
  /// Number of stream samples folded in (stamps in (start, end]).
  int samples = 0;
  /// Interval contained no odometry; delta is identity with zero covariance.
  bool empty = false;
  /// An odometry outage was bridged with an identity increment.
  bool gap_bridged = false;
};

inline constexpr double kStampTolerance = 1e-6;

/// Increment between two absolute samples. Throws OrderingError unless
/// next.stamp > prev.stamp.
PreintegratedOdometry to_incremental(const OdometrySample& prev, const OdometrySample& next);

/// Appends `inc` to `acc`. Throws DiscontinuityError when
/// acc.end_stamp and inc.start_stamp differ by more than kStampTolerance.
PreintegratedOdometry compose(const PreintegratedOdometry& acc, const PreintegratedOdometry& inc);

/// Zero-length, zero-covariance interval starting at `stamp`.
PreintegratedOdometry identity_increment(double stamp);

/// Sample at `stamp` between `a` and `b`: geodesic mean, linear covariance.
OdometrySample interpolate_sample(const OdometrySample& a, const OdometrySample& b, double stamp);

/// Diagonal covariance for a sample that arrived without one, from
/// per-axis noise densities [m/sqrt(s)], [rad/sqrt(s)] over `dt`.
Matrix6 default_odometry_covariance(double dt, double translation_density,
                                    double rotation_density);

struct AccumulateOptions {
  /// Sample spacing beyond which the increment is replaced by an identity
  /// bridge with inflated covariance.
  double max_gap = 0.5;
  double gap_translation_density = 1.0;
  double gap_rotation_density = 0.5;
};

/// One preintegrated measurement per consecutive pair of `cut_stamps`.
/// Cuts must be non-decreasing and inside the stream span; cut stamps that
/// fall between samples are interpolated on the manifold.
std::vector<PreintegratedOdometry> accumulate(std::span<const OdometrySample> stream,
                                              std::span<const double> cut_stamps,
                                              const AccumulateOptions& options = {});

/// Whether a sample is an absolute pose in the odometry frame or an
/// increment from the previous sample.
enum class OdometryFrameMode { Absolute, Relative };

/// Single-owner buffer of incoming odometry used by the range smoother.
/// Relative samples are integrated into absolute poses for lookups while
/// their covariance is used directly as the increment covariance.
class OdometryBuffer {
 public:
  explicit OdometryBuffer(AccumulateOptions options = {}) : options_(options) {}

  /// Returns false (and keeps the buffer unchanged) on stamp regression.
  bool push(const OdometrySample& sample, OdometryFrameMode mode = OdometryFrameMode::Absolute);

  bool empty() const { return knots_.empty(); }
  std::size_t size() const { return knots_.size(); }
  double first_stamp() const;
  double latest_stamp() const;
  bool covers(double stamp) const;

  /// Absolute odometry-frame pose at `stamp` (interpolated), nullopt if the
  /// stamp is outside the buffered span.
  std::optional<Pose> pose_at(double stamp) const;
  /// Latest sample at or before `stamp`.
  std::optional<OdometrySample> latest_at_or_before(double stamp) const;

  /// Preintegrated measurement over [from, to]; both must be covered.
  PreintegratedOdometry preintegrate(double from, double to) const;

  /// Drops knots that are no longer needed for stamps >= `stamp`.
  void prune_before(double stamp);

 private:
  struct Knot {
    OdometrySample sample;  // absolute pose; covariance as received
    OdometryFrameMode mode = OdometryFrameMode::Absolute;
  };

  OdometrySample sample_at(std::size_t upper, double stamp) const;
  std::size_t upper_index(double stamp) const;

  AccumulateOptions options_;
  std::deque<Knot> knots_;
};

}  // namespace raloc
