#include "raloc/preintegration.hpp"

#include <algorithm>
#include <cmath>

#include <fmt/format.h>

#include "raloc/errors.hpp"

namespace raloc {
namespace {

PreintegratedOdometry gap_bridge(double start, double end, const AccumulateOptions& options) {
  const double dt = end - start;
  PreintegratedOdometry out;
  out.start_stamp = start;
  out.end_stamp = end;
  out.cov = default_odometry_covariance(dt, options.gap_translation_density,
                                        options.gap_rotation_density);
  out.samples = 1;
  out.gap_bridged = true;
  return out;
}

PreintegratedOdometry increment_with_gap_check(const OdometrySample& a, const OdometrySample& b,
                                               const AccumulateOptions& options) {
  if (b.stamp - a.stamp > options.max_gap) return gap_bridge(a.stamp, b.stamp, options);
  return to_incremental(a, b);
}

void fold(std::optional<PreintegratedOdometry>& acc, const PreintegratedOdometry& inc) {
  acc = acc ? compose(*acc, inc) : inc;
}

}  // namespace

PreintegratedOdometry to_incremental(const OdometrySample& prev, const OdometrySample& next) {
  if (!(next.stamp > prev.stamp)) {
    throw OrderingError(fmt::format("to_incremental: stamps not increasing ({:.9f} -> {:.9f})",
                                    prev.stamp, next.stamp));
  }
  PreintegratedOdometry out;
  out.start_stamp = prev.stamp;
  out.end_stamp = next.stamp;
  out.delta = prev.pose.mean.inverse() * next.pose.mean;
  out.cov = lie::transport_covariance(prev.pose.cov, out.delta.inverse()) + next.pose.cov;
  out.cov = lie::symmetrize(out.cov);
  out.samples = 1;
  return out;
}

PreintegratedOdometry compose(const PreintegratedOdometry& acc, const PreintegratedOdometry& inc) {
  if (std::abs(acc.end_stamp - inc.start_stamp) > kStampTolerance) {
    throw DiscontinuityError(fmt::format("compose: interval ends at {:.9f} but next starts at {:.9f}",
                                         acc.end_stamp, inc.start_stamp));
  }
  PreintegratedOdometry out;
  out.start_stamp = acc.start_stamp;
  out.end_stamp = inc.end_stamp;
  out.delta = acc.delta * inc.delta;
  out.cov = lie::symmetrize(lie::transport_covariance(acc.cov, inc.delta.inverse()) + inc.cov);
  out.samples = acc.samples + inc.samples;
  out.empty = acc.empty && inc.empty;
  out.gap_bridged = acc.gap_bridged || inc.gap_bridged;
  return out;
}

PreintegratedOdometry identity_increment(double stamp) {
  PreintegratedOdometry out;
  out.start_stamp = stamp;
  out.end_stamp = stamp;
  out.empty = true;
  return out;
}

OdometrySample interpolate_sample(const OdometrySample& a, const OdometrySample& b, double stamp) {
  const double span = b.stamp - a.stamp;
  if (!(span > 0.0)) throw OrderingError("interpolate_sample: bracketing stamps not increasing");
  const double alpha = std::clamp((stamp - a.stamp) / span, 0.0, 1.0);
  OdometrySample out;
  out.stamp = stamp;
  out.pose.mean = lie::interpolate(a.pose.mean, b.pose.mean, alpha);
  out.pose.cov = (1.0 - alpha) * a.pose.cov + alpha * b.pose.cov;
  return out;
}

Matrix6 default_odometry_covariance(double dt, double translation_density,
                                    double rotation_density) {
  Matrix6 cov = Matrix6::Zero();
  cov.diagonal().head<3>().setConstant(translation_density * translation_density * dt);
  cov.diagonal().tail<3>().setConstant(rotation_density * rotation_density * dt);
  return cov;
}

namespace {

OdometrySample stream_sample_at(std::span<const OdometrySample> stream, double stamp) {
  if (stream.empty()) throw InvalidArgument("accumulate: empty odometry stream");
  if (stamp < stream.front().stamp - kStampTolerance ||
      stamp > stream.back().stamp + kStampTolerance) {
    throw InvalidArgument(fmt::format("accumulate: cut {:.9f} outside odometry span [{:.9f}, {:.9f}]",
                                      stamp, stream.front().stamp, stream.back().stamp));
  }
  const auto it = std::lower_bound(stream.begin(), stream.end(), stamp - kStampTolerance,
                                   [](const OdometrySample& s, double t) { return s.stamp < t; });
  if (it == stream.end()) return stream.back();
  if (std::abs(it->stamp - stamp) <= kStampTolerance) {
    OdometrySample exact = *it;
    return exact;
  }
  if (it == stream.begin()) return *it;
  return interpolate_sample(*(it - 1), *it, stamp);
}

}  // namespace

std::vector<PreintegratedOdometry> accumulate(std::span<const OdometrySample> stream,
                                              std::span<const double> cut_stamps,
                                              const AccumulateOptions& options) {
  std::vector<PreintegratedOdometry> out;
  if (cut_stamps.size() < 2) return out;
  for (std::size_t i = 1; i < stream.size(); ++i) {
    if (!(stream[i].stamp > stream[i - 1].stamp)) {
      throw OrderingError("accumulate: odometry stamps not strictly increasing");
    }
  }
  out.reserve(cut_stamps.size() - 1);
  for (std::size_t k = 0; k + 1 < cut_stamps.size(); ++k) {
    const double from = cut_stamps[k];
    const double to = cut_stamps[k + 1];
    if (to < from - kStampTolerance) throw OrderingError("accumulate: cut stamps decreasing");
    if (to - from <= kStampTolerance) {
      out.push_back(identity_increment(from));
      continue;
    }
    OdometrySample prev = stream_sample_at(stream, from);
    prev.stamp = from;
    std::optional<PreintegratedOdometry> acc;
    int folded = 0;
    for (const auto& s : stream) {
      if (s.stamp <= from + kStampTolerance) continue;
      if (s.stamp >= to - kStampTolerance) break;
      fold(acc, increment_with_gap_check(prev, s, options));
      prev = s;
      ++folded;
    }
    OdometrySample last = stream_sample_at(stream, to);
    last.stamp = to;
    fold(acc, increment_with_gap_check(prev, last, options));
    const bool end_on_sample = std::any_of(stream.begin(), stream.end(), [&](const OdometrySample& s) {
      return std::abs(s.stamp - to) <= kStampTolerance;
    });
    acc->samples = folded + (end_on_sample ? 1 : 0);
    out.push_back(*acc);
  }
  return out;
}

bool OdometryBuffer::push(const OdometrySample& sample, OdometryFrameMode mode) {
  if (!knots_.empty() && !(sample.stamp > knots_.back().sample.stamp)) return false;
  Knot knot{sample, mode};
  if (mode == OdometryFrameMode::Relative && !knots_.empty()) {
    knot.sample.pose.mean = knots_.back().sample.pose.mean * sample.pose.mean;
  }
  knots_.push_back(std::move(knot));
  return true;
}

double OdometryBuffer::first_stamp() const {
  if (knots_.empty()) throw NoEstimateError("OdometryBuffer: empty");
  return knots_.front().sample.stamp;
}

double OdometryBuffer::latest_stamp() const {
  if (knots_.empty()) throw NoEstimateError("OdometryBuffer: empty");
  return knots_.back().sample.stamp;
}

bool OdometryBuffer::covers(double stamp) const {
  return !knots_.empty() && stamp >= knots_.front().sample.stamp - kStampTolerance &&
         stamp <= knots_.back().sample.stamp + kStampTolerance;
}

std::size_t OdometryBuffer::upper_index(double stamp) const {
  const auto it = std::lower_bound(knots_.begin(), knots_.end(), stamp - kStampTolerance,
                                   [](const Knot& k, double t) { return k.sample.stamp < t; });
  return static_cast<std::size_t>(it - knots_.begin());
}

OdometrySample OdometryBuffer::sample_at(std::size_t upper, double stamp) const {
  if (upper >= knots_.size()) return knots_.back().sample;
  const auto& hi = knots_[upper].sample;
  if (std::abs(hi.stamp - stamp) <= kStampTolerance || upper == 0) {
    OdometrySample s = hi;
    s.stamp = stamp;
    return s;
  }
  return interpolate_sample(knots_[upper - 1].sample, hi, stamp);
}

std::optional<Pose> OdometryBuffer::pose_at(double stamp) const {
  if (!covers(stamp)) return std::nullopt;
  return sample_at(upper_index(stamp), stamp).pose.mean;
}

std::optional<OdometrySample> OdometryBuffer::latest_at_or_before(double stamp) const {
  const std::size_t upper = upper_index(stamp);
  if (upper < knots_.size() && std::abs(knots_[upper].sample.stamp - stamp) <= kStampTolerance) {
    return knots_[upper].sample;
  }
  if (upper == 0) return std::nullopt;
  return knots_[upper - 1].sample;
}

PreintegratedOdometry OdometryBuffer::preintegrate(double from, double to) const {
  if (to < from - kStampTolerance) throw OrderingError("OdometryBuffer: interval reversed");
  if (!covers(from) || !covers(to)) {
    throw InvalidArgument(fmt::format("OdometryBuffer: [{:.9f}, {:.9f}] not covered", from, to));
  }
  if (to - from <= kStampTolerance) return identity_increment(from);

  // Walk the knots in (from, to), splitting the boundary intervals.
  std::size_t k = upper_index(from);
  if (k < knots_.size() && std::abs(knots_[k].sample.stamp - from) <= kStampTolerance) ++k;
  OdometrySample prev = sample_at(upper_index(from), from);
  std::optional<PreintegratedOdometry> acc;
  int folded = 0;

  auto step = [&](const OdometrySample& next, std::size_t knot_index) {
    const Knot& knot = knots_[knot_index];
    PreintegratedOdometry inc;
    if (next.stamp - prev.stamp > options_.max_gap) {
      inc = gap_bridge(prev.stamp, next.stamp, options_);
    } else if (knot.mode == OdometryFrameMode::Relative && knot_index > 0) {
      const double full = knot.sample.stamp - knots_[knot_index - 1].sample.stamp;
      const double fraction = (next.stamp - prev.stamp) / full;
      inc.start_stamp = prev.stamp;
      inc.end_stamp = next.stamp;
      inc.delta = prev.pose.mean.inverse() * next.pose.mean;
      inc.cov = fraction * knot.sample.pose.cov;
      inc.samples = 1;
    } else {
      inc = to_incremental(prev, next);
    }
    fold(acc, inc);
    prev = next;
  };

  for (; k < knots_.size() && knots_[k].sample.stamp < to - kStampTolerance; ++k) {
    step(knots_[k].sample, k);
    ++folded;
  }
  const std::size_t end_index = std::min(k, knots_.size() - 1);
  OdometrySample last = sample_at(end_index, to);
  const bool end_on_knot = std::abs(knots_[end_index].sample.stamp - to) <= kStampTolerance;
  step(last, end_index);
  acc->samples = folded + (end_on_knot ? 1 : 0);
  return *acc;
}

void OdometryBuffer::prune_before(double stamp) {
  while (knots_.size() > 2 && knots_[1].sample.stamp <= stamp) knots_.pop_front();
}

}  // namespace raloc
