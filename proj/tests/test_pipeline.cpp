#include <gtest/gtest.h>

#include <cmath>

#include "raloc/errors.hpp"
#include "raloc/pipeline.hpp"

using namespace raloc;

namespace {

struct Replay {
  Dataset data;
  PipelineConfig config;
  std::vector<Record> records;
};

Replay make_run(double duration, const std::string& name = "utias_testbed_square") {
  Scenario sc = preset(name);
  sc.duration = duration;
  Replay r;
  r.data = simulate(sc);
  r.config.ufls.lever_arm = sc.lever_arm;
  r.config.ufls.range_sigma = sc.range_sigma;
  r.config.init.yaw = r.data.offset_truth.front().pose.rotation().yaw();
  std::vector<RangeMeasurement> rs;
  for (const auto& l : r.data.ranges) rs.push_back(l.z);
  r.records = merge_records(rs, r.data.odometry);
  return r;
}

double window_error(const std::vector<StampedPose>& est, const std::vector<StampedPose>& gt, double from,
                    double to) {
  std::vector<StampedPose> slice;
  for (const auto& e : est) {
    if (e.stamp >= from && e.stamp < to) slice.push_back(e);
  }
  return evaluate(slice, gt).rmse;
}

}  // namespace

TEST(Mode, RoundTripsNames) {
  for (const auto* n : {"full", "no-bias", "no-wnoa", "ufls-only", "vio-only"}) {
    EXPECT_EQ(to_string(parse_mode(n)), n);
  }
  EXPECT_THROW(parse_mode("fast"), ConfigError);
}

TEST(MergeRecords, OrdersByStampOdometryFirst) {
  RangeMeasurement z;
  z.stamp = 0.01;
  z.anchor_id = 1;
  z.range = 2.0;
  z.sigma = 0.1;
  RangeMeasurement early = z;
  early.stamp = 0.0;
  OdometrySample a, b;
  a.stamp = 0.0;
  b.stamp = 0.01;
  const auto merged = merge_records({z, early}, {a, b});
  ASSERT_EQ(merged.size(), 4u);
  EXPECT_EQ(merged[0].kind, Record::Kind::Odometry);
  EXPECT_EQ(merged[1].kind, Record::Kind::Range);
  EXPECT_EQ(merged[1].stamp(), 0.0);
  EXPECT_EQ(merged[2].kind, Record::Kind::Odometry);
  EXPECT_EQ(merged[3].kind, Record::Kind::Range);
}

TEST(Pipeline, VioOnlyPassesOdometryThrough) {
  const Replay r = make_run(2.0);
  const auto res = run_pipeline(Mode::VioOnly, r.config, r.data.anchors, r.records);
  ASSERT_EQ(res.corrected.size(), r.data.odometry.size());
  for (std::size_t k = 0; k < res.corrected.size(); k += 50) {
    EXPECT_EQ(res.corrected[k].pose.matrix(), r.data.odometry[k].pose.mean.matrix());
  }
  EXPECT_TRUE(res.decisions.empty());
}

TEST(Pipeline, UflsOnlyEmitsAtUpdateRate) {
  const Replay r = make_run(20.0);
  const auto res = run_pipeline(Mode::UflsOnly, r.config, r.data.anchors, r.records);
  // 5 Hz ticks over 20 s, less the few before bootstrap.
  EXPECT_LE(res.corrected.size(), 100u);
  EXPECT_GE(res.corrected.size(), 90u);
  for (std::size_t k = 1; k < res.corrected.size(); ++k) {
    EXPECT_GT(res.corrected[k].stamp, res.corrected[k - 1].stamp);
  }
  EXPECT_LT(evaluate(res.corrected, r.data.ground_truth).rmse, 0.2);
}

TEST(Pipeline, CorrectedOutputAtOdometryRate) {
  const Replay r = make_run(10.0);
  const auto res = run_pipeline(Mode::Full, r.config, r.data.anchors, r.records);
  ASSERT_FALSE(res.corrected.empty());
  ASSERT_EQ(res.corrected.size(), res.offsets.size());
  // Every odometry sample after alignment yields one output.
  const double first = res.corrected.front().stamp;
  std::size_t expected = 0;
  for (const auto& s : r.data.odometry) expected += s.stamp >= first;
  EXPECT_EQ(res.corrected.size(), expected);
  EXPECT_LT(first, 2.0);
}

TEST(Pipeline, SmootherRateIsIndependentOfOdometryRate) {
  // The smoothed offset is extrapolated at constant velocity between
  // smoother updates, so its second difference is non-zero only near ticks.
  const auto kinks = [](const PipelineResult& res) {
    std::size_t n = 0;
    for (std::size_t k = 1; k + 1 < res.offsets.size(); ++k) {
      const Vector3 d2 = res.offsets[k + 1].position - 2.0 * res.offsets[k].position + res.offsets[k - 1].position;
      n += d2.norm() > 1e-9;
    }
    return n;
  };
  Replay r = make_run(20.0);
  r.config.wfls.update_rate = 2.0;
  const auto slow = run_pipeline(Mode::Full, r.config, r.data.anchors, r.records);
  r.config.wfls.update_rate = 10.0;
  const auto fast = run_pipeline(Mode::Full, r.config, r.data.anchors, r.records);
  EXPECT_LE(kinks(slow), 2u * 40u);
  EXPECT_GT(kinks(fast), 2u * 40u);
  EXPECT_LE(kinks(fast), 2u * 200u);
  // A slower smoother aligns later but still follows the odometry to the end.
  EXPECT_GE(slow.corrected.size() + 400u, fast.corrected.size());
  EXPECT_EQ(slow.corrected.back().stamp, fast.corrected.back().stamp);
  // The range smoother does not depend on the offset smoother's rate.
  ASSERT_EQ(slow.raw_offsets.size(), fast.raw_offsets.size());
  for (std::size_t k = 0; k < slow.raw_offsets.size(); ++k) {
    EXPECT_EQ(slow.raw_offsets[k].position, fast.raw_offsets[k].position);
  }
}

TEST(Pipeline, OutputsDependOnlyOnThePast) {
  const Replay r = make_run(12.0);
  const double cut = 7.3;
  std::vector<Record> head;
  for (const auto& rec : r.records) {
    if (rec.stamp() <= cut) head.push_back(rec);
  }
  for (Mode m : {Mode::Full, Mode::NoWnoa, Mode::UflsOnly}) {
    const auto full = run_pipeline(m, r.config, r.data.anchors, r.records);
    const auto part = run_pipeline(m, r.config, r.data.anchors, head);
    std::size_t compared = 0;
    for (std::size_t k = 0; k < part.corrected.size(); ++k) {
      if (part.corrected[k].stamp > cut) break;
      ASSERT_LT(k, full.corrected.size());
      EXPECT_EQ(part.corrected[k].stamp, full.corrected[k].stamp);
      EXPECT_EQ(part.corrected[k].pose.matrix(), full.corrected[k].pose.matrix()) << to_string(m) << " " << k;
      ++compared;
    }
    EXPECT_GT(compared, 0u) << to_string(m);
  }
}

TEST(Pipeline, CorrectionBoundsOdometryDrift) {
  const Replay r = make_run(60.0);
  const auto full = run_pipeline(Mode::Full, r.config, r.data.anchors, r.records);
  auto vio = run_pipeline(Mode::VioOnly, r.config, r.data.anchors, r.records).corrected;
  for (auto& v : vio) v.pose = r.data.offset_truth.front().pose * v.pose;
  const double vio_early = window_error(vio, r.data.ground_truth, 10.0, 20.0);
  const double vio_late = window_error(vio, r.data.ground_truth, 50.0, 60.0);
  const double full_early = window_error(full.corrected, r.data.ground_truth, 10.0, 20.0);
  const double full_late = window_error(full.corrected, r.data.ground_truth, 50.0, 60.0);
  EXPECT_GT(vio_late, 2.0 * vio_early);
  EXPECT_LT(full_late, 0.2);
  EXPECT_LT(full_late, 2.0 * full_early + 0.05);
}

TEST(Pipeline, MissingCovarianceIsSynthesized) {
  Replay r = make_run(10.0);
  for (auto& rec : r.records) {
    if (rec.kind == Record::Kind::Odometry) {
      rec.has_covariance = false;
      rec.odometry.pose.cov.setConstant(std::nan(""));
    }
  }
  const auto res = run_pipeline(Mode::Full, r.config, r.data.anchors, r.records);
  ASSERT_FALSE(res.corrected.empty());
  for (const auto& c : res.corrected) ASSERT_TRUE(c.pose.matrix().allFinite());
  EXPECT_LT(evaluate(res.corrected, r.data.ground_truth).rmse, 0.3);
}

TEST(Pipeline, RelativeOdometryMatchesAbsolute) {
  Replay r = make_run(6.0);
  const auto absolute = run_pipeline(Mode::NoWnoa, r.config, r.data.anchors, r.records);
  const auto absolute_vio = run_pipeline(Mode::VioOnly, r.config, r.data.anchors, r.records);
  // Relative samples carry the increment and its covariance.
  std::optional<OdometrySample> previous;
  for (auto& rec : r.records) {
    if (rec.kind != Record::Kind::Odometry) continue;
    const OdometrySample abs = rec.odometry;
    rec.frame = OdometryFrameMode::Relative;
    if (previous) {
      const auto inc = to_incremental(*previous, abs);
      rec.odometry.pose.mean = inc.delta;
      rec.odometry.pose.cov = inc.cov;
    }
    previous = abs;
  }
  const auto relative = run_pipeline(Mode::NoWnoa, r.config, r.data.anchors, r.records);
  const auto relative_vio = run_pipeline(Mode::VioOnly, r.config, r.data.anchors, r.records);
  ASSERT_EQ(absolute_vio.corrected.size(), relative_vio.corrected.size());
  for (std::size_t k = 0; k < absolute_vio.corrected.size(); ++k) {
    ASSERT_LT((absolute_vio.corrected[k].pose.matrix() - relative_vio.corrected[k].pose.matrix()).norm(), 1e-9);
  }
  ASSERT_EQ(absolute.corrected.size(), relative.corrected.size());
  double worst = 0.0;
  for (std::size_t k = 0; k < absolute.corrected.size(); ++k) {
    worst = std::max(worst, (absolute.corrected[k].pose.translation() - relative.corrected[k].pose.translation()).norm());
  }
  // Split intervals apportion covariance differently in the two modes
  // (fraction of the increment vs interpolated absolute covariance), so the
  // estimates agree to well under the range noise rather than exactly.
  EXPECT_LT(worst, 5e-3);
}

TEST(Pipeline, DecisionsCoverEveryRange) {
  const Replay r = make_run(10.0);
  const auto res = run_pipeline(Mode::Full, r.config, r.data.anchors, r.records);
  EXPECT_EQ(res.decisions.size(), r.data.ranges.size());
  EXPECT_EQ(static_cast<std::size_t>(res.accepted + res.rejected), r.data.ranges.size());
  EXPECT_FALSE(res.solve_times.empty());
}
