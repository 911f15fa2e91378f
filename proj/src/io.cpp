#include "raloc/io.hpp"

#include <charconv>
#include <cmath>
#include <sstream>

#include <fmt/format.h>
#include <spdlog/spdlog.h>

#include "raloc/errors.hpp"

namespace raloc {
namespace {

constexpr double kQuaternionTolerance = 1e-6;

int kind_rank(LogRecord::Kind kind) { return static_cast<int>(kind); }

std::vector<std::string_view> split(std::string_view line) {
  std::vector<std::string_view> out;
  std::size_t i = 0;
  while (i < line.size()) {
    while (i < line.size() && std::isspace(static_cast<unsigned char>(line[i]))) ++i;
    const std::size_t start = i;
    while (i < line.size() && !std::isspace(static_cast<unsigned char>(line[i]))) ++i;
    if (i > start) out.push_back(line.substr(start, i - start));
  }
  return out;
}

double parse_double(std::string_view token, std::size_t line, const char* field) {
  double v = 0.0;
  const char* first = token.data();
  if (!token.empty() && token.front() == '+') ++first;
  const auto [ptr, ec] = std::from_chars(first, token.data() + token.size(), v);
  if (ec != std::errc() || ptr != token.data() + token.size() || !std::isfinite(v)) {
    throw ParseError(fmt::format("line {}: {}: not a finite number '{}'", line, field, token), line);
  }
  return v;
}

int parse_int(std::string_view token, std::size_t line, const char* field) {
  int v = 0;
  const auto [ptr, ec] = std::from_chars(token.data(), token.data() + token.size(), v);
  if (ec != std::errc() || ptr != token.data() + token.size()) {
    throw ParseError(fmt::format("line {}: {}: not an integer '{}'", line, field, token), line);
  }
  return v;
}

Pose parse_pose(const std::vector<std::string_view>& t, std::size_t at, std::size_t line) {
  const Vector3 p(parse_double(t[at], line, "x"), parse_double(t[at + 1], line, "y"),
                  parse_double(t[at + 2], line, "z"));
  const Eigen::Quaterniond q(parse_double(t[at + 6], line, "qw"), parse_double(t[at + 3], line, "qx"),
                             parse_double(t[at + 4], line, "qy"), parse_double(t[at + 5], line, "qz"));
  if (std::abs(q.norm() - 1.0) > kQuaternionTolerance) {
    throw ParseError(fmt::format("line {}: quaternion norm {:.9f} is not 1", line, q.norm()), line);
  }
  return Pose(Rotation(q), p);
}

double round9(double v) { return std::round(v * 1e9) / 1e9; }

Eigen::Vector4d round9(const Eigen::Vector4d& v) {
  return v.unaryExpr([](double x) { return round9(x); });
}

// Readers normalize quaternions, which can move the 9th decimal. Pick the
// rounded coefficients that normalize back onto themselves so that a file
// re-written after reading is unchanged.
Eigen::Vector4d stable_quaternion(const Eigen::Quaterniond& quaternion) {
  Eigen::Vector4d r = round9(Eigen::Vector4d(quaternion.coeffs()));
  for (int i = 0; i < 8; ++i) {
    const Eigen::Vector4d next = round9(Eigen::Vector4d(r / r.norm()));
    if (next == r) break;
    r = next;
  }
  return r;
}

std::string format_pose(const Pose& pose) {
  const Vector3& p = pose.translation();
  const Eigen::Vector4d q = stable_quaternion(pose.rotation().quaternion());  // x y z w
  return fmt::format("{} {} {} {} {} {} {}", format_number(p.x()), format_number(p.y()),
                     format_number(p.z()), format_number(q[0]), format_number(q[1]),
                     format_number(q[2]), format_number(q[3]));
}

std::ofstream open_for_writing(const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError(fmt::format("cannot write '{}'", path.string()));
  return out;
}

void check_written(std::ofstream& out, const std::filesystem::path& path) {
  out.flush();
  if (!out) throw IoError(fmt::format("write to '{}' failed", path.string()));
}

nlohmann::json rounded(const nlohmann::json& v) {
  if (v.is_number_float()) {
    const double x = std::round(v.get<double>() * 1e9) / 1e9;
    return x == 0.0 ? 0.0 : x;
  }
  if (v.is_array() || v.is_object()) {
    nlohmann::json out = v;
    for (auto& item : out) item = rounded(item);
    return out;
  }
  return v;
}

// Shortest representation that reads back to the same double: covariance
// entries are often far below the 1e-9 resolution of format_number.
std::string format_covariance(double value) { return value == 0.0 ? "0" : fmt::format("{}", value); }

}  // namespace

double LogRecord::stamp() const {
  switch (kind) {
    case Kind::Odometry: return odometry.stamp;
    case Kind::Range: return range.stamp;
    case Kind::GroundTruth: return ground_truth.stamp;
  }
  return 0.0;
}

std::string format_number(double value) {
  std::string s = fmt::format("{:.9f}", value);
  const auto dot = s.find('.');
  if (dot != std::string::npos) {
    const auto last = s.find_last_not_of('0');
    s.erase(last == dot ? dot : last + 1);
  }
  if (s == "-0") s = "0";
  return s;
}

std::optional<LogRecord> parse_log_line(const std::string& raw, std::size_t line) {
  std::string_view view(raw);
  if (const auto hash = view.find('#'); hash != std::string_view::npos) view = view.substr(0, hash);
  const auto t = split(view);
  if (t.empty()) return std::nullopt;

  LogRecord r;
  const auto expect = [&](bool ok, const char* what) {
    if (!ok) throw ParseError(fmt::format("line {}: {}: wrong number of fields ({})", line, what, t.size()), line);
  };
  if (t[0] == "RANGE") {
    expect(t.size() == 5, "RANGE");
    r.kind = LogRecord::Kind::Range;
    r.range.stamp = parse_double(t[1], line, "stamp");
    r.range.anchor_id = parse_int(t[2], line, "anchor_id");
    r.range.range = parse_double(t[3], line, "range");
    r.range.sigma = parse_double(t[4], line, "sigma");
    if (!(r.range.sigma > 0.0)) throw ParseError(fmt::format("line {}: sigma must be positive", line), line);
  } else if (t[0] == "ODOM") {
    expect(t.size() == 10 || t.size() == 31, "ODOM");
    r.kind = LogRecord::Kind::Odometry;
    r.odometry.stamp = parse_double(t[1], line, "stamp");
    if (t[2] == "abs") {
      r.frame = OdometryFrameMode::Absolute;
    } else if (t[2] == "rel") {
      r.frame = OdometryFrameMode::Relative;
    } else {
      throw ParseError(fmt::format("line {}: frame mode must be abs or rel, got '{}'", line, t[2]), line);
    }
    r.odometry.pose.mean = parse_pose(t, 3, line);
    r.has_covariance = t.size() == 31;
    if (r.has_covariance) {
      std::size_t k = 10;
      for (int i = 0; i < 6; ++i) {
        for (int j = i; j < 6; ++j) {
          const double v = parse_double(t[k++], line, "covariance");
          r.odometry.pose.cov(i, j) = v;
          r.odometry.pose.cov(j, i) = v;
        }
      }
    }
  } else if (t[0] == "GT") {
    expect(t.size() == 9, "GT");
    r.kind = LogRecord::Kind::GroundTruth;
    r.ground_truth.stamp = parse_double(t[1], line, "stamp");
    r.ground_truth.pose = parse_pose(t, 2, line);
  } else {
    throw ParseError(fmt::format("line {}: unknown record tag '{}'", line, t[0]), line);
  }
  return r;
}

std::string format_log_record(const LogRecord& r) {
  switch (r.kind) {
    case LogRecord::Kind::Range:
      return fmt::format("RANGE {} {} {} {}", format_number(r.range.stamp), r.range.anchor_id,
                         format_number(r.range.range), format_number(r.range.sigma));
    case LogRecord::Kind::Odometry: {
      std::string s = fmt::format("ODOM {} {} {}", format_number(r.odometry.stamp),
                                  r.frame == OdometryFrameMode::Absolute ? "abs" : "rel",
                                  format_pose(r.odometry.pose.mean));
      if (r.has_covariance) {
        for (int i = 0; i < 6; ++i) {
          for (int j = i; j < 6; ++j) s += ' ' + format_covariance(r.odometry.pose.cov(i, j));
        }
      }
      return s;
    }
    case LogRecord::Kind::GroundTruth:
      return fmt::format("GT {} {}", format_number(r.ground_truth.stamp), format_pose(r.ground_truth.pose));
  }
  return {};
}

bool LogReader::Later::operator()(const Entry& a, const Entry& b) const {
  const double ta = a.record.stamp(), tb = b.record.stamp();
  if (ta != tb) return ta > tb;
  if (a.record.kind != b.record.kind) return kind_rank(a.record.kind) > kind_rank(b.record.kind);
  return a.line > b.line;
}

LogReader::LogReader(const std::filesystem::path& path, LogReadOptions options)
    : file_(path), in_(&file_), options_(options) {
  if (!file_) throw IoError(fmt::format("cannot open '{}'", path.string()));
}

LogReader::LogReader(std::istream& in, LogReadOptions options) : in_(&in), options_(options) {}

void LogReader::reject(const LogRecord& record, std::size_t line, const std::string& why) {
  const std::string msg = fmt::format("line {}: stamp {} {}", line, format_number(record.stamp()), why);
  if (options_.on_disorder == DisorderPolicy::Fail) throw OrderingError(msg);
  spdlog::warn("log: {}, dropped", msg);
  ++dropped_;
}

bool LogReader::read_more() {
  std::string text;
  while (std::getline(*in_, text)) {
    ++line_;
    auto record = parse_log_line(text, line_);
    if (!record) continue;
    const double t = record->stamp();
    double& last = last_stamp_[kind_rank(record->kind)];
    // Ranges may share a stamp (several anchors per epoch); poses may not.
    const bool regress = record->kind == LogRecord::Kind::Range ? t < last : t <= last;
    if (regress) {
      reject(*record, line_, "does not increase within its sensor stream");
      continue;
    }
    if (t < emitted_) {
      reject(*record, line_, "arrives after newer records were emitted (outside the reorder window)");
      continue;
    }
    last = t;
    newest_ = std::max(newest_, t);
    heap_.push({std::move(*record), line_});
    return true;
  }
  if (in_->bad()) throw IoError(fmt::format("read error after line {}", line_));
  eof_ = true;
  return false;
}

std::optional<LogRecord> LogReader::next() {
  while (!eof_ && (heap_.empty() || heap_.top().record.stamp() > newest_ - options_.reorder_window)) {
    read_more();
  }
  if (heap_.empty()) return std::nullopt;
  LogRecord out = heap_.top().record;
  heap_.pop();
  emitted_ = out.stamp();
  return out;
}

std::vector<LogRecord> read_log(const std::filesystem::path& path, LogReadOptions options) {
  LogReader reader(path, options);
  std::vector<LogRecord> out;
  while (auto r = reader.next()) out.push_back(std::move(*r));
  return out;
}

void write_log(const std::filesystem::path& path, const std::vector<LogRecord>& records) {
  auto out = open_for_writing(path);
  for (const auto& r : records) out << format_log_record(r) << '\n';
  check_written(out, path);
}

std::vector<LogRecord> dataset_records(const Dataset& d, bool with_ground_truth) {
  std::vector<LogRecord> out;
  out.reserve(d.ranges.size() + d.odometry.size() * (with_ground_truth ? 2 : 1));
  for (const auto& s : d.odometry) {
    LogRecord r;
    r.kind = LogRecord::Kind::Odometry;
    r.odometry = s;
    r.has_covariance = true;
    out.push_back(r);
  }
  for (const auto& z : d.ranges) {
    LogRecord r;
    r.kind = LogRecord::Kind::Range;
    r.range = z.z;
    out.push_back(r);
  }
  if (with_ground_truth) {
    for (const auto& g : d.ground_truth) {
      LogRecord r;
      r.kind = LogRecord::Kind::GroundTruth;
      r.ground_truth = g;
      out.push_back(r);
    }
  }
  std::stable_sort(out.begin(), out.end(), [](const LogRecord& a, const LogRecord& b) {
    if (a.stamp() != b.stamp()) return a.stamp() < b.stamp();
    return kind_rank(a.kind) < kind_rank(b.kind);
  });
  return out;
}

std::vector<Record> pipeline_records(const std::vector<LogRecord>& log) {
  std::vector<Record> out;
  out.reserve(log.size());
  for (const auto& l : log) {
    if (l.kind == LogRecord::Kind::GroundTruth) continue;
    Record r;
    if (l.kind == LogRecord::Kind::Range) {
      r.kind = Record::Kind::Range;
      r.range = l.range;
    } else {
      r.kind = Record::Kind::Odometry;
      r.odometry = l.odometry;
      r.frame = l.frame;
      r.has_covariance = l.has_covariance;
    }
    out.push_back(r);
  }
  return out;
}

std::string format_trajectory_line(double stamp, const Pose& pose) {
  return format_number(stamp) + ' ' + format_pose(pose);
}

void write_trajectory(const std::filesystem::path& path, const std::vector<StampedPose>& poses) {
  auto out = open_for_writing(path);
  for (const auto& p : poses) out << format_trajectory_line(p.stamp, p.pose) << '\n';
  check_written(out, path);
}

std::vector<StampedPose> read_trajectory(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError(fmt::format("cannot open '{}'", path.string()));
  std::vector<StampedPose> out;
  std::string text;
  std::size_t line = 0;
  while (std::getline(in, text)) {
    ++line;
    std::string_view view(text);
    if (const auto hash = view.find('#'); hash != std::string_view::npos) view = view.substr(0, hash);
    const auto t = split(view);
    if (t.empty()) continue;
    if (t.size() != 8) {
      throw ParseError(fmt::format("line {}: expected 8 fields, got {}", line, t.size()), line);
    }
    StampedPose p;
    p.stamp = parse_double(t[0], line, "stamp");
    p.pose = parse_pose(t, 1, line);
    if (!out.empty() && !(p.stamp > out.back().stamp)) {
      throw OrderingError(fmt::format("{}: line {}: stamps not increasing", path.string(), line));
    }
    out.push_back(p);
  }
  return out;
}

std::string format_json(const nlohmann::json& value) { return rounded(value).dump(2) + '\n'; }

void write_json(const std::filesystem::path& path, const nlohmann::json& value) {
  write_text(path, format_json(value));
}

void write_text(const std::filesystem::path& path, const std::string& text) {
  auto out = open_for_writing(path);
  out << text;
  check_written(out, path);
}

nlohmann::json error_report_json(const ErrorReport& r) {
  return {{"count", r.count},
          {"rmse", r.rmse},
          {"rmse_x", r.axis_rmse.x()},
          {"rmse_y", r.axis_rmse.y()},
          {"rmse_z", r.axis_rmse.z()},
          {"max_error", r.max_error},
          {"final_error", r.final_error},
          {"smoothness", r.smoothness}};
}

nlohmann::json metrics_json(const std::optional<ErrorReport>& report, std::int64_t accepted,
                            std::int64_t rejected) {
  nlohmann::json j;
  j["ranges"] = {{"accepted", accepted}, {"rejected", rejected}};
  if (report) j["error"] = error_report_json(*report);
  return j;
}

}  // namespace raloc
