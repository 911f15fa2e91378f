#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include "raloc/errors.hpp"
#include "raloc/io.hpp"

using namespace raloc;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
  const auto* info = ::testing::UnitTest::GetInstance()->current_test_info();
  const fs::path dir = fs::temp_directory_path() / "raloc_test_io" / info->name();
  fs::create_directories(dir);
  return dir / name;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void spit(const fs::path& p, const std::string& text) { std::ofstream(p) << text; }

std::vector<LogRecord> read_all(const std::string& text, LogReadOptions options = {}) {
  std::istringstream in(text);
  LogReader reader(in, options);
  std::vector<LogRecord> out;
  while (auto r = reader.next()) out.push_back(*r);
  return out;
}

}  // namespace

TEST(FormatNumber, TrimsAndNormalizes) {
  EXPECT_EQ(format_number(1.5), "1.5");
  EXPECT_EQ(format_number(2.0), "2");
  EXPECT_EQ(format_number(-0.0), "0");
  EXPECT_EQ(format_number(-1e-12), "0");
  EXPECT_EQ(format_number(0.123456789), "0.123456789");
  EXPECT_EQ(format_number(-3.25), "-3.25");
  EXPECT_EQ(format_number(100.0), "100");
}

TEST(ParseLogLine, RecognizesEachRecordKind) {
  EXPECT_FALSE(parse_log_line("", 1).has_value());
  EXPECT_FALSE(parse_log_line("   # comment", 2).has_value());

  const auto r = parse_log_line("RANGE 0.5 3 4.25 0.1", 3);
  ASSERT_TRUE(r);
  EXPECT_EQ(r->kind, LogRecord::Kind::Range);
  EXPECT_EQ(r->range.anchor_id, 3);
  EXPECT_DOUBLE_EQ(r->range.range, 4.25);
  EXPECT_DOUBLE_EQ(r->stamp(), 0.5);

  const auto o = parse_log_line("ODOM 1 rel 1 2 3 0 0 0 1", 4);
  ASSERT_TRUE(o);
  EXPECT_EQ(o->kind, LogRecord::Kind::Odometry);
  EXPECT_EQ(o->frame, OdometryFrameMode::Relative);
  EXPECT_FALSE(o->has_covariance);
  EXPECT_EQ(o->odometry.pose.mean.translation(), Vector3(1, 2, 3));

  std::string with_cov = "ODOM 1 abs 0 0 0 0 0 0 1";
  for (int i = 0; i < 21; ++i) with_cov += " " + std::to_string(i + 1);
  const auto c = parse_log_line(with_cov, 5);
  ASSERT_TRUE(c);
  EXPECT_TRUE(c->has_covariance);
  EXPECT_EQ(c->odometry.pose.cov(0, 0), 1.0);
  EXPECT_EQ(c->odometry.pose.cov(0, 5), 6.0);
  EXPECT_EQ(c->odometry.pose.cov(5, 0), 6.0);
  EXPECT_EQ(c->odometry.pose.cov(1, 1), 7.0);
  EXPECT_EQ(c->odometry.pose.cov(5, 5), 21.0);

  const auto g = parse_log_line("GT 2 1 1 1 0 0 0.7071067811865476 0.7071067811865476", 6);
  ASSERT_TRUE(g);
  EXPECT_EQ(g->kind, LogRecord::Kind::GroundTruth);
  EXPECT_NEAR(g->ground_truth.pose.rotation().yaw(), M_PI / 2, 1e-12);
}

TEST(ParseLogLine, ErrorsCarryTheLineNumber) {
  const std::vector<std::string> bad{
      "RANGE 0.5 3 4.25",                // too few fields
      "RANGE 0.5 x 4.25 0.1",            // non-integer id
      "RANGE 0.5 3 nan 0.1",             // non-finite
      "RANGE 0.5 3 4 0",                 // zero sigma
      "ODOM 1 world 0 0 0 0 0 0 1",      // unknown frame mode
      "ODOM 1 abs 0 0 0 0 0 0 0.9",      // non-unit quaternion
      "ODOM 1 abs 0 0 0 0 0 0 1 1 2 3",  // partial covariance
      "IMU 1 2 3",                       // unknown tag
  };
  for (const auto& line : bad) {
    try {
      parse_log_line(line, 17);
      ADD_FAILURE() << "accepted: " << line;
    } catch (const ParseError& e) {
      EXPECT_EQ(e.line(), 17u);
      EXPECT_NE(std::string(e.what()).find("line 17"), std::string::npos) << e.what();
    }
  }
  // Within 1e-6 of unit norm is accepted.
  EXPECT_TRUE(parse_log_line("ODOM 1 abs 0 0 0 0 0 0 1.0000005", 1).has_value());
}

TEST(LogRecord, FormatParsesBack) {
  const std::vector<std::string> lines{
      "RANGE 0.058823529 1 4.123 0.1",
      "ODOM 0.005 abs 1 -2 0.5 0 0 0.382683432 0.923879533",
      "GT 0.005 1 -2 0.5 0 0 0.382683432 0.923879533",
  };
  for (const auto& l : lines) EXPECT_EQ(format_log_record(*parse_log_line(l, 1)), l);
}

TEST(LogReader, EmptyInput) {
  EXPECT_TRUE(read_all("").empty());
  EXPECT_TRUE(read_all("# nothing here\n\n").empty());
  const fs::path p = scratch("empty.log");
  spit(p, "");
  EXPECT_TRUE(read_log(p).empty());
}

TEST(LogReader, MissingFileIsIoError) {
  EXPECT_THROW(read_log("/nonexistent/raloc/x.log"), IoError);
}

TEST(LogReader, MergesInterleavedSensorsWithinWindow) {
  const std::string text =
      "ODOM 0 abs 0 0 0 0 0 0 1\n"
      "ODOM 0.01 abs 0 0 0 0 0 0 1\n"
      "ODOM 0.02 abs 0 0 0 0 0 0 1\n"
      "RANGE 0.005 1 2 0.1\n"  // arrives late
      "RANGE 0.02 2 2 0.1\n"
      "ODOM 0.03 abs 0 0 0 0 0 0 1\n";
  const auto out = read_all(text);
  ASSERT_EQ(out.size(), 6u);
  for (std::size_t i = 1; i < out.size(); ++i) EXPECT_LE(out[i - 1].stamp(), out[i].stamp());
  EXPECT_EQ(out[1].kind, LogRecord::Kind::Range);
  // Equal stamps: odometry before range.
  EXPECT_EQ(out[3].kind, LogRecord::Kind::Odometry);
  EXPECT_EQ(out[4].kind, LogRecord::Kind::Range);
}

TEST(LogReader, DisorderBeyondWindow) {
  const std::string text =
      "ODOM 0 abs 0 0 0 0 0 0 1\n"
      "ODOM 0.5 abs 0 0 0 0 0 0 1\n"
      "ODOM 0.7 abs 0 0 0 0 0 0 1\n"  // releases 0.5
      "RANGE 0.1 1 2 0.1\n"           // older than an emitted record
      "RANGE 0.8 1 2 0.1\n";
  EXPECT_THROW(read_all(text), OrderingError);

  std::istringstream in(text);
  LogReader reader(in, {0.1, DisorderPolicy::Drop});
  std::size_t n = 0;
  while (reader.next()) ++n;
  EXPECT_EQ(n, 4u);
  EXPECT_EQ(reader.dropped(), 1u);
}

TEST(LogReader, RepeatedPoseStampIsDisorder) {
  const std::string text =
      "ODOM 0 abs 0 0 0 0 0 0 1\n"
      "ODOM 0 abs 0 0 0 0 0 0 1\n";
  EXPECT_THROW(read_all(text), OrderingError);
  // Ranges may share a stamp.
  EXPECT_EQ(read_all("RANGE 1 1 2 0.1\nRANGE 1 2 2 0.1\n").size(), 2u);
}

TEST(LogFile, WriteReadIsIdentity) {
  Scenario sc = preset("utias_testbed_square");
  sc.duration = 2.0;
  const Dataset d = simulate(sc);
  const fs::path a = scratch("a.log");
  const fs::path b = scratch("b.log");
  write_log(a, dataset_records(d, true));
  write_log(b, read_log(a));
  EXPECT_EQ(slurp(a), slurp(b));

  const auto back = read_log(a);
  std::size_t ranges = 0, odom = 0, gt = 0;
  for (const auto& r : back) {
    ranges += r.kind == LogRecord::Kind::Range;
    odom += r.kind == LogRecord::Kind::Odometry;
    gt += r.kind == LogRecord::Kind::GroundTruth;
  }
  EXPECT_EQ(ranges, d.ranges.size());
  EXPECT_EQ(odom, d.odometry.size());
  EXPECT_EQ(gt, d.ground_truth.size());

  // Covariances survive exactly; values within the 9-decimal rounding.
  std::size_t k = 0;
  for (const auto& r : back) {
    if (r.kind != LogRecord::Kind::Odometry) continue;
    ASSERT_TRUE(r.has_covariance);
    EXPECT_EQ(r.odometry.pose.cov, d.odometry[k].pose.cov);
    EXPECT_LT((r.odometry.pose.mean.translation() - d.odometry[k].pose.mean.translation()).cwiseAbs().maxCoeff(),
              1e-9);
    ++k;
  }
}

TEST(LogFile, PipelineRecordsSkipGroundTruth) {
  const auto log = read_all(
      "ODOM 0 abs 0 0 0 0 0 0 1\n"
      "GT 0 0 0 0 0 0 0 1\n"
      "RANGE 0.01 1 2 0.1\n");
  const auto recs = pipeline_records(log);
  ASSERT_EQ(recs.size(), 2u);
  EXPECT_EQ(recs[0].kind, Record::Kind::Odometry);
  EXPECT_FALSE(recs[0].has_covariance);
  EXPECT_EQ(recs[1].kind, Record::Kind::Range);
}

TEST(Trajectory, IdentityPoseLine) {
  EXPECT_EQ(format_trajectory_line(0.0, Pose()), "0 0 0 0 0 0 0 1");
  EXPECT_EQ(format_trajectory_line(1.25, Pose()), "1.25 0 0 0 0 0 0 1");
}

TEST(Trajectory, RoundTripWithin1e9) {
  std::vector<StampedPose> poses;
  for (int k = 0; k < 50; ++k) {
    poses.push_back({0.01 * k, Pose(Rotation::about_z(0.1 * k), Vector3(std::sin(k), 1.0 / (k + 1), -k))});
  }
  const fs::path p = scratch("traj.txt");
  write_trajectory(p, poses);
  const auto back = read_trajectory(p);
  ASSERT_EQ(back.size(), poses.size());
  for (std::size_t k = 0; k < poses.size(); ++k) {
    EXPECT_NEAR(back[k].stamp, poses[k].stamp, 1e-9);
    EXPECT_LT((back[k].pose.translation() - poses[k].pose.translation()).cwiseAbs().maxCoeff(), 1e-9);
    EXPECT_LT(back[k].pose.rotation().quaternion().angularDistance(poses[k].pose.rotation().quaternion()), 1e-8);
  }
  const fs::path q = scratch("traj2.txt");
  write_trajectory(q, back);
  EXPECT_EQ(slurp(p), slurp(q));
}

TEST(Trajectory, RejectsBadFiles) {
  const fs::path p = scratch("bad.txt");
  spit(p, "0 0 0 0 0 0 0 1\n1 0 0 0\n");
  try {
    read_trajectory(p);
    FAIL();
  } catch (const ParseError& e) {
    EXPECT_EQ(e.line(), 2u);
  }
  spit(p, "1 0 0 0 0 0 0 1\n0.5 0 0 0 0 0 0 1\n");
  EXPECT_THROW(read_trajectory(p), OrderingError);
  spit(p, "");
  EXPECT_TRUE(read_trajectory(p).empty());
}

TEST(Json, StableFormatting) {
  const nlohmann::json j = {{"b", 0.1 + 0.2}, {"a", 1}};
  EXPECT_EQ(format_json(j), "{\n  \"a\": 1,\n  \"b\": 0.3\n}\n");
}

TEST(Json, MetricsSchema) {
  ErrorReport r;
  r.count = 3;
  r.rmse = 0.25;
  const auto j = metrics_json(r, 10, 2);
  EXPECT_EQ(j["ranges"]["accepted"], 10);
  EXPECT_EQ(j["ranges"]["rejected"], 2);
  for (const auto* key : {"count", "rmse", "rmse_x", "rmse_y", "rmse_z", "max_error", "final_error", "smoothness"}) {
    EXPECT_TRUE(j["error"].contains(key)) << key;
  }
  EXPECT_FALSE(metrics_json(std::nullopt, 1, 0).contains("error"));
}

TEST(Write, UnwritablePathIsIoError) {
  EXPECT_THROW(write_text("/nonexistent/raloc/out.txt", "x"), IoError);
  EXPECT_THROW(write_trajectory("/nonexistent/raloc/out.txt", {}), IoError);
}

TEST(LogFile, DocumentedExampleParses) {
  LogReader reader(fs::path(RALOC_DOCS_DIR) / "example.log");
  std::vector<LogRecord> out;
  while (auto r = reader.next()) out.push_back(*r);
  ASSERT_EQ(out.size(), 12u);
  for (std::size_t i = 1; i < out.size(); ++i) EXPECT_LE(out[i - 1].stamp(), out[i].stamp());
  EXPECT_TRUE(out[0].has_covariance);
  EXPECT_DOUBLE_EQ(out[0].odometry.pose.cov(3, 3), 6.25e-8);
  // The late range is merged ahead of the 0.1 s records.
  EXPECT_EQ(out[5].kind, LogRecord::Kind::Range);
  EXPECT_DOUBLE_EQ(out[5].stamp(), 0.09);
  EXPECT_FALSE(out[6].has_covariance);
}
