#pragma once

// Line-oriented measurement logs and trajectory files.
//
// Log records, one per line, tag first ('#' starts a comment):
//   RANGE <t> <anchor_id> <range> <sigma>
//   ODOM  <t> <abs|rel> <x> <y> <z> <qx> <qy> <qz> <qw> [21 covariance values]
//   GT    <t> <x> <y> <z> <qx> <qy> <qz> <qw>
// The optional ODOM covariance is the row-major upper triangle of the 6x6
// right-perturbation covariance in (translation; rotation) order.
//
// Trajectories use the "t x y z qx qy qz qw" layout. Numbers are written
// with 9 decimals, trailing zeros trimmed; covariance entries, which are
// often smaller than 1e-9, use the shortest exact representation instead.

#include <cstdint>
#include <deque>
#include <filesystem>
#include <fstream>
#include <iosfwd>
#include <optional>
#include <queue>
#include <string>
#include <vector>

#include "json.hpp"

#include "raloc/pipeline.hpp"

namespace raloc {

struct LogRecord {
  enum class Kind { Odometry, Range, GroundTruth } kind = Kind::Range;
  RangeMeasurement range;
  OdometrySample odometry;
  OdometryFrameMode frame = OdometryFrameMode::Absolute;
  bool has_covariance = false;
  StampedPose ground_truth;

  double stamp() const;
};

/// "%.9f" with trailing zeros (and a bare '.') removed; -0 prints as 0.
std::string format_number(double value);

/// Parses one log line; nullopt for blank and comment lines. Throws
/// ParseError carrying `line_number`.
std::optional<LogRecord> parse_log_line(const std::string& line, std::size_t line_number);
std::string format_log_record(const LogRecord& record);

enum class DisorderPolicy { Fail, Drop };

struct LogReadOptions {
  /// Records may arrive up to this much later [s] than newer records of
  /// another sensor and are still merged in order.
  double reorder_window = 0.1;
  DisorderPolicy on_disorder = DisorderPolicy::Fail;
};

/// Streaming reader: holds at most the records inside the reorder window.
/// Emits a stamp-ordered stream; on equal stamps odometry comes first, then
/// ranges, then ground truth, then file order.
class LogReader {
 public:
  /// Throws IoError if the file cannot be opened.
  explicit LogReader(const std::filesystem::path& path, LogReadOptions options = {});
  LogReader(std::istream& in, LogReadOptions options = {});

  /// Throws ParseError on malformed lines and OrderingError on stamps out
  /// of order under DisorderPolicy::Fail.
  std::optional<LogRecord> next();
  std::size_t dropped() const { return dropped_; }

 private:
  struct Entry {
    LogRecord record;
    std::size_t line = 0;
  };
  struct Later {
    bool operator()(const Entry& a, const Entry& b) const;
  };

  bool read_more();
  void reject(const LogRecord& record, std::size_t line, const std::string& why);

  std::ifstream file_;
  std::istream* in_;
  LogReadOptions options_;
  std::priority_queue<Entry, std::vector<Entry>, Later> heap_;
  std::size_t line_ = 0;
  bool eof_ = false;
  double newest_ = -1e300;
  double emitted_ = -1e300;
  double last_stamp_[3] = {-1e300, -1e300, -1e300};
  std::size_t dropped_ = 0;
};

std::vector<LogRecord> read_log(const std::filesystem::path& path, LogReadOptions options = {});
/// Throws IoError on an unwritable path.
void write_log(const std::filesystem::path& path, const std::vector<LogRecord>& records);

/// Log records for a simulated dataset, merged in stream order.
std::vector<LogRecord> dataset_records(const Dataset& dataset, bool with_ground_truth);
/// Pipeline input from a log (ground-truth records are skipped).
std::vector<Record> pipeline_records(const std::vector<LogRecord>& log);

std::string format_trajectory_line(double stamp, const Pose& pose);
void write_trajectory(const std::filesystem::path& path, const std::vector<StampedPose>& poses);
/// Throws ParseError on malformed lines, OrderingError on non-monotone stamps.
std::vector<StampedPose> read_trajectory(const std::filesystem::path& path);

/// JSON with sorted keys, two-space indent and a trailing newline; doubles
/// are rounded to 9 decimals first.
std::string format_json(const nlohmann::json& value);
void write_json(const std::filesystem::path& path, const nlohmann::json& value);
void write_text(const std::filesystem::path& path, const std::string& text);

nlohmann::json error_report_json(const ErrorReport& report);
/// Metrics of a run: error report (if ground truth is known) and range
/// rejection counts.
nlohmann::json metrics_json(const std::optional<ErrorReport>& report, std::int64_t accepted,
                            std::int64_t rejected);

}  // namespace raloc
