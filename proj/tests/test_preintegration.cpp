#include <gtest/gtest.h>

#include <vector>

#include "raloc/errors.hpp"
#include "raloc/preintegration.hpp"
#include "test_utils.hpp"

using namespace raloc;
using namespace raloc::testing;

namespace {

double pose_distance(const Pose& a, const Pose& b) {
  return (a.matrix() - b.matrix()).cwiseAbs().maxCoeff();
}

PreintegratedOdometry random_increment(std::mt19937_64& rng, double start, double end,
                                       double max_angle) {
  PreintegratedOdometry inc;
  inc.start_stamp = start;
  inc.end_stamp = end;
  inc.delta = lie::exp(random_twist(rng, max_angle, 0.3));
  inc.cov = random_spd(rng, 6, 1e-4);
  inc.samples = 1;
  return inc;
}

// Smooth 200 Hz stream with small per-sample covariance.
std::vector<OdometrySample> make_stream(double duration, double rate = 200.0) {
  std::vector<OdometrySample> out;
  const int n = static_cast<int>(duration * rate) + 1;
  for (int k = 0; k < n; ++k) {
    const double t = k / rate;
    Twist xi;
    xi << std::sin(t), 0.5 * t, 0.1 * t * t, 0.05 * t, -0.02 * t, 0.3 * t;
    OdometrySample s;
    s.stamp = t;
    s.pose.mean = lie::exp(xi);
    s.pose.cov = default_odometry_covariance(t + 0.01, 0.01, 0.001);
    out.push_back(s);
  }
  return out;
}

}  // namespace

TEST(Preintegration, IncrementOfEqualPosesIsIdentity) {
  std::mt19937_64 rng(1);
  OdometrySample a{0.0, {random_pose(rng), Matrix6::Zero()}};
  OdometrySample b{0.1, {a.pose.mean, random_spd(rng, 6, 1e-3)}};
  const auto inc = to_incremental(a, b);
  EXPECT_LT(pose_distance(inc.delta, Pose()), 1e-12);
  EXPECT_LT((inc.cov - b.pose.cov).cwiseAbs().maxCoeff(), 1e-15);
}

TEST(Preintegration, IncrementFromAnchoredStart) {
  std::mt19937_64 rng(2);
  OdometrySample a{0.0, {Pose(), Matrix6::Zero()}};
  OdometrySample b{0.1, {random_pose(rng), random_spd(rng, 6, 1e-3)}};
  const auto inc = to_incremental(a, b);
  EXPECT_LT(pose_distance(inc.delta, b.pose.mean), 1e-12);
  EXPECT_LT((inc.cov - b.pose.cov).cwiseAbs().maxCoeff(), 1e-15);
}

TEST(Preintegration, IncrementRejectsNonIncreasingStamps) {
  OdometrySample a{1.0, {}};
  OdometrySample b{1.0, {}};
  EXPECT_THROW(to_incremental(a, b), OrderingError);
  b.stamp = 0.5;
  EXPECT_THROW(to_incremental(a, b), OrderingError);
}

TEST(Preintegration, IncrementCovarianceMatchesMonteCarlo) {
  std::mt19937_64 rng(3);
  OdometrySample a{0.0, {random_pose(rng), random_spd(rng, 6, 1e-4)}};
  OdometrySample b{0.1, {a.pose.mean * lie::exp(random_twist(rng, 0.2, 0.3)),
                         random_spd(rng, 6, 1e-4)}};
  const auto inc = to_incremental(a, b);
  const int n = 10000;
  Eigen::MatrixXd samples(n, 6);
  for (int i = 0; i < n; ++i) {
    const Pose ta = a.pose.mean * lie::exp(sample_gaussian(rng, a.pose.cov));
    const Pose tb = b.pose.mean * lie::exp(sample_gaussian(rng, b.pose.cov));
    samples.row(i) = lie::log(inc.delta.inverse() * ta.inverse() * tb).transpose();
  }
  EXPECT_LT(frobenius_rel(sample_covariance(samples), inc.cov), 0.10);
}

TEST(Preintegration, ComposeRightIdentity) {
  std::mt19937_64 rng(4);
  const auto x = random_increment(rng, 0.0, 0.1, 0.2);
  PreintegratedOdometry id = identity_increment(0.1);
  id.empty = false;
  const auto y = compose(x, id);
  EXPECT_LT(pose_distance(y.delta, x.delta), 1e-15);
  EXPECT_LT((y.cov - x.cov).cwiseAbs().maxCoeff(), 1e-15);
  EXPECT_EQ(y.end_stamp, 0.1);
}

TEST(Preintegration, ComposeRejectsDiscontinuity) {
  std::mt19937_64 rng(5);
  const auto a = random_increment(rng, 0.0, 0.1, 0.2);
  const auto b = random_increment(rng, 0.1 + 1e-3, 0.2, 0.2);
  EXPECT_THROW(compose(a, b), DiscontinuityError);
  const auto c = random_increment(rng, 0.1 + 5e-7, 0.2, 0.2);
  EXPECT_NO_THROW(compose(a, c));
}

TEST(Preintegration, ComposeEqualsDirectIncrement) {
  std::mt19937_64 rng(6);
  OdometrySample a{0.0, {random_pose(rng), random_spd(rng, 6, 1e-3)}};
  OdometrySample b{0.1, {random_pose(rng), Matrix6::Zero()}};
  OdometrySample c{0.2, {random_pose(rng), random_spd(rng, 6, 1e-3)}};
  const auto composed = compose(to_incremental(a, b), to_incremental(b, c));
  const auto direct = to_incremental(a, c);
  EXPECT_LT(pose_distance(composed.delta, direct.delta), 1e-12);
  EXPECT_LT((composed.cov - direct.cov).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(Preintegration, MeanAssociativityAndTraceMonotone) {
  std::mt19937_64 rng(7);
  const auto a = random_increment(rng, 0.0, 0.1, 0.5);
  const auto b = random_increment(rng, 0.1, 0.2, 0.5);
  const auto c = random_increment(rng, 0.2, 0.3, 0.5);
  const auto left = compose(compose(a, b), c);
  const auto right = compose(a, compose(b, c));
  EXPECT_LT(pose_distance(left.delta, right.delta), 1e-12);
  EXPECT_LT((left.cov - right.cov).cwiseAbs().maxCoeff(), 1e-12);
  EXPECT_GE(compose(a, b).cov.trace(), a.cov.trace() - 1e-15);
}

TEST(Preintegration, ChainCovarianceMatchesMonteCarlo) {
  std::mt19937_64 rng(8);
  std::vector<PreintegratedOdometry> incs;
  for (int k = 0; k < 10; ++k) incs.push_back(random_increment(rng, 0.1 * k, 0.1 * (k + 1), 0.2));
  PreintegratedOdometry acc = incs[0];
  for (int k = 1; k < 10; ++k) acc = compose(acc, incs[k]);
  const int n = 10000;
  Eigen::MatrixXd samples(n, 6);
  for (int i = 0; i < n; ++i) {
    Pose t;
    for (const auto& inc : incs) t = t * inc.delta * lie::exp(sample_gaussian(rng, inc.cov));
    samples.row(i) = lie::log(acc.delta.inverse() * t).transpose();
  }
  EXPECT_LT(frobenius_rel(sample_covariance(samples), acc.cov), 0.10);
}

TEST(Preintegration, AccumulateSinglePairEqualsIncrement) {
  const auto stream = make_stream(0.1);
  const std::vector<double> cuts{stream[3].stamp, stream[4].stamp};
  const auto out = accumulate(stream, cuts);
  ASSERT_EQ(out.size(), 1u);
  const auto direct = to_incremental(stream[3], stream[4]);
  EXPECT_LT(pose_distance(out[0].delta, direct.delta), 1e-12);
  EXPECT_LT((out[0].cov - direct.cov).cwiseAbs().maxCoeff(), 1e-15);
  EXPECT_EQ(out[0].samples, 1);
}

TEST(Preintegration, AccumulateFoldsEverySampleAtPaperRates) {
  const auto stream = make_stream(2.0);
  std::vector<double> cuts;
  for (double t = 0.0; t <= 1.95; t += 1.0 / 17.0) cuts.push_back(t);
  const auto out = accumulate(stream, cuts);
  ASSERT_EQ(out.size(), cuts.size() - 1);
  int total = 0;
  for (const auto& m : out) {
    EXPECT_GE(m.samples, 11);
    EXPECT_LE(m.samples, 12);
    EXPECT_FALSE(m.empty);
    total += m.samples;
  }
  // Every sample strictly inside the cut span is folded exactly once.
  int inside = 0;
  for (const auto& s : stream) {
    if (s.stamp > cuts.front() + 1e-9 && s.stamp <= cuts.back() + 1e-9) ++inside;
  }
  EXPECT_EQ(total, inside);
  // The chain of measurements reproduces the end-to-end relative pose.
  Pose chained;
  for (const auto& m : out) chained = chained * m.delta;
  const auto whole = accumulate(stream, std::vector<double>{cuts.front(), cuts.back()});
  EXPECT_LT(pose_distance(chained, whole[0].delta), 1e-9);
}

TEST(Preintegration, AccumulateSplitIsAssociative) {
  const auto stream = make_stream(1.0);
  const auto whole = accumulate(stream, std::vector<double>{0.013, 0.871});
  const auto split = accumulate(stream, std::vector<double>{0.013, 0.4371, 0.871});
  const auto joined = compose(split[0], split[1]);
  EXPECT_LT(pose_distance(joined.delta, whole[0].delta), 1e-12);
  // Splitting inside a sample interval interpolates the covariance, so the
  // covariance agrees only when the split lands on a sample.
  const auto on_sample = accumulate(stream, std::vector<double>{0.013, 0.435, 0.871});
  const auto joined2 = compose(on_sample[0], on_sample[1]);
  EXPECT_LT((joined2.cov - whole[0].cov).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(Preintegration, EmptyIntervalIsFlaggedIdentity) {
  const auto stream = make_stream(0.1);
  const auto out = accumulate(stream, std::vector<double>{0.05, 0.05});
  ASSERT_EQ(out.size(), 1u);
  EXPECT_TRUE(out[0].empty);
  EXPECT_LT(pose_distance(out[0].delta, Pose()), 1e-15);
  EXPECT_EQ(out[0].cov.norm(), 0.0);
}

TEST(Preintegration, GapIsBridgedWithInflatedCovariance) {
  auto stream = make_stream(0.1);
  OdometrySample late = stream.back();
  late.stamp = stream.back().stamp + 0.8;
  stream.push_back(late);
  const auto out = accumulate(stream, std::vector<double>{0.0, late.stamp});
  ASSERT_EQ(out.size(), 1u);
  EXPECT_TRUE(out[0].gap_bridged);
  EXPECT_GT(out[0].cov.trace(), stream[1].pose.cov.trace() * 10);
}

TEST(Preintegration, CutOutsideStreamThrows) {
  const auto stream = make_stream(0.1);
  EXPECT_THROW(accumulate(stream, std::vector<double>{0.0, 0.5}), InvalidArgument);
}

TEST(OdometryBuffer, PreintegrateMatchesAccumulate) {
  const auto stream = make_stream(1.0);
  OdometryBuffer buffer;
  for (const auto& s : stream) ASSERT_TRUE(buffer.push(s));
  for (auto [from, to] : {std::pair{0.0, 0.3}, std::pair{0.0123, 0.777}, std::pair{0.5, 0.5}}) {
    const auto a = buffer.preintegrate(from, to);
    const auto b = accumulate(stream, std::vector<double>{from, to})[0];
    EXPECT_LT(pose_distance(a.delta, b.delta), 1e-12);
    EXPECT_LT((a.cov - b.cov).cwiseAbs().maxCoeff(), 1e-14);
    EXPECT_EQ(a.samples, b.samples);
    EXPECT_EQ(a.empty, b.empty);
  }
}

TEST(OdometryBuffer, RegressionIsRejected) {
  OdometryBuffer buffer;
  EXPECT_TRUE(buffer.push({1.0, {}}));
  EXPECT_FALSE(buffer.push({1.0, {}}));
  EXPECT_FALSE(buffer.push({0.5, {}}));
  EXPECT_EQ(buffer.size(), 1u);
}

TEST(OdometryBuffer, RelativeSamplesUseIncrementCovarianceDirectly) {
  const auto stream = make_stream(0.5);
  OdometryBuffer abs_buf;
  OdometryBuffer rel_buf;
  Matrix6 inc_cov = default_odometry_covariance(0.005, 0.02, 0.002);
  for (std::size_t k = 0; k < stream.size(); ++k) {
    abs_buf.push(stream[k]);
    OdometrySample rel = stream[k];
    if (k > 0) rel.pose.mean = stream[k - 1].pose.mean.inverse() * stream[k].pose.mean;
    rel.pose.cov = inc_cov;
    rel_buf.push(rel, OdometryFrameMode::Relative);
  }
  const auto a = abs_buf.preintegrate(0.1, 0.4);
  const auto r = rel_buf.preintegrate(0.1, 0.4);
  EXPECT_LT(pose_distance(a.delta, r.delta), 1e-9);
  // Sixty increments composed without the absolute-covariance transport.
  PreintegratedOdometry expected;
  for (int k = 21; k <= 80; ++k) {
    PreintegratedOdometry inc;
    inc.start_stamp = stream[k - 1].stamp;
    inc.end_stamp = stream[k].stamp;
    inc.delta = stream[k - 1].pose.mean.inverse() * stream[k].pose.mean;
    inc.cov = inc_cov;
    expected = k == 21 ? inc : compose(expected, inc);
  }
  EXPECT_LT((r.cov - expected.cov).norm() / expected.cov.norm(), 1e-9);
}

TEST(OdometryBuffer, PoseLookupAndPrune) {
  const auto stream = make_stream(1.0);
  OdometryBuffer buffer;
  for (const auto& s : stream) buffer.push(s);
  EXPECT_FALSE(buffer.pose_at(1.5).has_value());
  EXPECT_LT(pose_distance(*buffer.pose_at(0.5), stream[100].pose.mean), 1e-12);
  buffer.prune_before(0.5);
  EXPECT_LE(buffer.first_stamp(), 0.5);
  EXPECT_TRUE(buffer.covers(0.5));
  EXPECT_FALSE(buffer.covers(0.4));
  const auto s = buffer.latest_at_or_before(0.5071);
  ASSERT_TRUE(s.has_value());
  EXPECT_DOUBLE_EQ(s->stamp, stream[101].stamp);
}
