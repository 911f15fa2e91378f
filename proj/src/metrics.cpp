#include "raloc/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <map>

#include "raloc/errors.hpp"

namespace raloc {

std::optional<Pose> lookup(const std::vector<StampedPose>& gt, double t, double max_dt) {
  if (gt.empty()) return std::nullopt;
  const auto it = std::lower_bound(gt.begin(), gt.end(), t,
                                   [](const StampedPose& p, double s) { return p.stamp < s; });
  double nearest = 1e300;
  if (it != gt.end()) nearest = std::min(nearest, it->stamp - t);
  if (it != gt.begin()) nearest = std::min(nearest, t - std::prev(it)->stamp);
  if (!(nearest <= max_dt)) return std::nullopt;
  if (it == gt.end()) return std::prev(it)->pose;
  if (it->stamp == t || it == gt.begin()) return it->pose;
  const auto& a = *std::prev(it);
  const auto& b = *it;
  return lie::interpolate(a.pose, b.pose, (t - a.stamp) / (b.stamp - a.stamp));
}

double max_second_difference(const std::vector<Vector3>& p) {
  double out = 0.0;
  for (std::size_t k = 1; k + 1 < p.size(); ++k) {
    out = std::max(out, (p[k + 1] - 2.0 * p[k] + p[k - 1]).norm());
  }
  return out;
}

ErrorReport evaluate(const std::vector<StampedPose>& estimate,
                     const std::vector<StampedPose>& ground_truth, const EvaluateOptions& options) {
  std::vector<std::pair<Pose, Pose>> pairs;
  for (const auto& e : estimate) {
    if (e.stamp < options.from) continue;
    if (const auto g = lookup(ground_truth, e.stamp, options.max_dt)) pairs.emplace_back(e.pose, *g);
  }
  if (pairs.empty()) throw AssociationError("evaluate: no estimate within reach of ground truth");

  Pose align;
  if (options.align == Alignment::FirstPose) {
    align = pairs.front().second * pairs.front().first.inverse();
  }
  ErrorReport r;
  r.count = pairs.size();
  Vector3 sq = Vector3::Zero();
  std::vector<Vector3> positions;
  positions.reserve(pairs.size());
  for (const auto& [est, gt] : pairs) {
    const Vector3 p = (align * est).translation();
    const Vector3 e = p - gt.translation();
    sq += e.cwiseAbs2();
    r.max_error = std::max(r.max_error, e.norm());
    r.final_error = e.norm();
    positions.push_back(p);
  }
  const double n = static_cast<double>(pairs.size());
  r.axis_rmse = (sq / n).cwiseSqrt();
  r.rmse = std::sqrt(sq.sum() / n);
  r.smoothness = max_second_difference(positions);
  return r;
}

GatingReport gating_report(const std::vector<RangeDecision>& decisions,
                           const std::vector<LabeledRange>& labels, double from) {
  std::map<std::pair<std::int64_t, int>, bool> nlos;
  const auto key = [](double stamp, int id) {
    return std::make_pair(static_cast<std::int64_t>(std::llround(stamp * 1e6)), id);
  };
  for (const auto& l : labels) nlos[key(l.z.stamp, l.z.anchor_id)] = l.nlos;
  GatingReport r;
  for (const auto& d : decisions) {
    if (d.stamp < from) continue;
    const auto it = nlos.find(key(d.stamp, d.anchor_id));
    if (it == nlos.end()) continue;
    if (it->second) {
      ++r.spikes;
      if (!d.accepted) ++r.spikes_rejected;
    } else {
      ++r.clean;
      if (!d.accepted) ++r.clean_rejected;
    }
  }
  return r;
}

}  // namespace raloc
