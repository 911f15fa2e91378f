#pragma once

// Trajectory scoring: stamp association, position RMSE, smoothness and
// gating precision/recall against labeled spikes.

#include <optional>
#include <vector>

#include "raloc/sim.hpp"

namespace raloc {

enum class Alignment { None, FirstPose };

struct EvaluateOptions {
  /// Largest distance to the nearest ground-truth stamp [s].
  double max_dt = 0.01;
  Alignment align = Alignment::None;
  /// Ignore estimates before this stamp.
  double from = -1e300;
};

struct ErrorReport {
  std::size_t count = 0;
  double rmse = 0.0;
  Vector3 axis_rmse{Vector3::Zero()};
  double max_error = 0.0;
  double final_error = 0.0;
  /// Max second finite difference of the estimated positions.
  double smoothness = 0.0;
};

/// Ground-truth pose at `t`, interpolated between bracketing samples, if
/// the nearest sample lies within max_dt.
std::optional<Pose> lookup(const std::vector<StampedPose>& gt, double t, double max_dt);

/// Throws AssociationError when no estimate can be associated.
ErrorReport evaluate(const std::vector<StampedPose>& estimate,
                     const std::vector<StampedPose>& ground_truth, const EvaluateOptions& options = {});

/// max_k |p_{k+1} - 2 p_k + p_{k-1}|; 0 for fewer than three points.
double max_second_difference(const std::vector<Vector3>& series);

struct RangeDecision {
  double stamp = 0.0;
  int anchor_id = 0;
  bool accepted = false;
};

struct GatingReport {
  std::size_t spikes = 0;
  std::size_t spikes_rejected = 0;
  std::size_t clean = 0;
  std::size_t clean_rejected = 0;
  double spike_rejection() const { return spikes ? double(spikes_rejected) / double(spikes) : 1.0; }
  double false_rejection() const { return clean ? double(clean_rejected) / double(clean) : 0.0; }
};

/// Joins decisions with labels by (stamp, anchor), counting only stamps
/// >= from.
GatingReport gating_report(const std::vector<RangeDecision>& decisions,
                           const std::vector<LabeledRange>& labels, double from);

}  // namespace raloc
