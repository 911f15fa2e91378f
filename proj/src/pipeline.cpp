#include "raloc/pipeline.hpp"

#include <algorithm>
#include <cmath>

#include <fmt/format.h>
#include <spdlog/spdlog.h>

#include "raloc/errors.hpp"

namespace raloc {
namespace {

UflsConfig ufls_config_for(Mode mode, UflsConfig config) {
  if (mode == Mode::NoBias) config.bias_estimation = false;
  return config;
}

OffsetRecord offset_record(double stamp, const Pose& offset) {
  return {stamp, offset.translation(), offset.rotation()};
}

}  // namespace

Mode parse_mode(const std::string& name) {
  if (name == "full") return Mode::Full;
  if (name == "no-bias") return Mode::NoBias;
  if (name == "no-wnoa") return Mode::NoWnoa;
  if (name == "ufls-only") return Mode::UflsOnly;
  if (name == "vio-only") return Mode::VioOnly;
  throw ConfigError(fmt::format("mode: unknown value '{}'", name));
}

std::string to_string(Mode mode) {
  switch (mode) {
    case Mode::Full: return "full";
    case Mode::NoBias: return "no-bias";
    case Mode::NoWnoa: return "no-wnoa";
    case Mode::UflsOnly: return "ufls-only";
    case Mode::VioOnly: return "vio-only";
  }
  return "full";
}

std::vector<Record> merge_records(const std::vector<RangeMeasurement>& ranges,
                                  const std::vector<OdometrySample>& odometry) {
  std::vector<Record> out;
  out.reserve(ranges.size() + odometry.size());
  for (const auto& s : odometry) {
    Record r;
    r.kind = Record::Kind::Odometry;
    r.odometry = s;
    out.push_back(r);
  }
  for (const auto& z : ranges) {
    Record r;
    r.kind = Record::Kind::Range;
    r.range = z;
    out.push_back(r);
  }
  std::stable_sort(out.begin(), out.end(), [](const Record& a, const Record& b) {
    if (a.stamp() != b.stamp()) return a.stamp() < b.stamp();
    return a.kind == Record::Kind::Odometry && b.kind == Record::Kind::Range;
  });
  return out;
}

Pipeline::Pipeline(Mode mode, PipelineConfig config, const std::vector<Anchor>& anchors)
    : mode_(mode),
      config_(std::move(config)),
      ufls_(ufls_config_for(mode, config_.ufls), anchors, config_.init),
      wfls_(config_.wfls) {}

void Pipeline::ufls_tick(double now) {
  const auto est = ufls_.update(now);
  if (!est) return;
  result_.ufls.push_back({est->stamp, est->pose.mean});
  result_.biases.push_back({est->stamp, est->biases});
  const PoseWithCovariance offset = frame_offset(*est);
  result_.raw_offsets.push_back(offset_record(est->stamp, offset.mean));
  raw_offset_ = offset.mean;
  if (mode_ == Mode::UflsOnly) result_.corrected.push_back({est->stamp, est->pose.mean});
  if ((mode_ == Mode::Full || mode_ == Mode::NoBias) && est->stamp > last_offset_stamp_) {
    last_offset_stamp_ = est->stamp;
    wfls_.ingest_offset(offset.mean.translation(), offset_position_covariance(offset),
                        offset.mean.rotation(), est->stamp);
  }
}

void Pipeline::wfls_tick(double now) {
  if (mode_ != Mode::Full && mode_ != Mode::NoBias) return;
  try {
    wfls_.update(now);
  } catch (const NoEstimateError&) {
    // Nothing to smooth yet.
  }
}

void Pipeline::run_ticks(double until, bool inclusive) {
  if (!started_ || mode_ == Mode::VioOnly) return;
  const auto due = [&](double t) { return inclusive ? t <= until : t < until; };
  while (true) {
    const double tu = t0_ + static_cast<double>(ufls_ticks_ + 1) / config_.ufls.update_rate;
    const double tw = t0_ + static_cast<double>(wfls_ticks_ + 1) / config_.wfls.update_rate;
    const double next = std::min(tu, tw);
    if (!due(next)) break;
    if (tu <= tw) {
      ++ufls_ticks_;
      ufls_tick(tu);
    } else {
      ++wfls_ticks_;
      wfls_tick(tw);
    }
  }
}

void Pipeline::on_odometry(OdometrySample s, OdometryFrameMode frame, bool has_covariance) {
  if (!has_covariance) {
    const double dt = latest_odom_ ? std::max(s.stamp - last_odom_stamp_, 1e-6) : 1e-3;
    s.pose.cov = 0.5 * default_odometry_covariance(dt, config_.odom_translation_density,
                                                   config_.odom_rotation_density);
  }
  Pose absolute = s.pose.mean;
  if (frame == OdometryFrameMode::Relative && latest_odom_) absolute = (*latest_odom_) * s.pose.mean;
  if (latest_odom_ && !(s.stamp > last_odom_stamp_)) {
    spdlog::warn("pipeline: odometry stamp {:.9f} not increasing, dropped", s.stamp);
    return;
  }
  latest_odom_ = absolute;
  last_odom_stamp_ = s.stamp;

  if (mode_ == Mode::VioOnly) {
    result_.corrected.push_back({s.stamp, absolute});
    return;
  }
  ufls_.ingest_odometry(s, frame);

  if (mode_ == Mode::Full || mode_ == Mode::NoBias) {
    OdometrySample abs_sample = s;
    abs_sample.pose.mean = absolute;
    const CorrectedPose c = wfls_.correct(abs_sample);
    if (c.aligned) {
      result_.corrected.push_back({c.stamp, c.pose});
      result_.offsets.push_back({c.stamp, c.offset_position, c.offset_rotation});
    }
  } else if (mode_ == Mode::NoWnoa && raw_offset_) {
    result_.corrected.push_back({s.stamp, (*raw_offset_) * absolute});
    result_.offsets.push_back(offset_record(s.stamp, *raw_offset_));
  }
}

void Pipeline::feed(const Record& record) {
  if (!started_) {
    started_ = true;
    t0_ = record.stamp();
  }
  run_ticks(record.stamp(), false);
  if (record.kind == Record::Kind::Odometry) {
    on_odometry(record.odometry, record.frame, record.has_covariance);
  } else if (mode_ != Mode::VioOnly) {
    const RangeIngestResult r = ufls_.ingest_range(record.range);
    result_.decisions.push_back({record.range.stamp, record.range.anchor_id, r.accepted});
  }
  result_.accepted = ufls_.accepted_count();
  result_.rejected = ufls_.rejected_count();
}

void Pipeline::advance_to(double stamp) {
  run_ticks(stamp, true);
  result_.solve_times = ufls_.solve_times();
  result_.ufls_lagged.clear();
  for (const auto& [t, pose] : ufls_.lagged_trajectory()) result_.ufls_lagged.push_back({t, pose});
}

PipelineResult run_pipeline(Mode mode, const PipelineConfig& config, const std::vector<Anchor>& anchors,
                            const std::vector<Record>& records) {
  Pipeline p(mode, config, anchors);
  for (const auto& r : records) p.feed(r);
  if (!records.empty()) p.advance_to(records.back().stamp());
  return p.result();
}

}  // namespace raloc
