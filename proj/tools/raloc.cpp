// raloc: simulate datasets, run the two-stage estimator or the batch
// baseline on them, and score trajectories.
//
// Exit codes: 0 success, 1 usage or configuration error, 2 estimator
// divergence, 3 I/O error.

#include <cstdio>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>
#include <fmt/format.h>
#include <spdlog/sinks/stdout_color_sinks.h>
#include <spdlog/spdlog.h>

#include "raloc/config.hpp"
#include "raloc/errors.hpp"
#include "raloc/io.hpp"
#include "raloc/metrics.hpp"
#include "raloc/pipeline.hpp"
#include "raloc/sim.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace raloc;

namespace {

enum Exit { kOk = 0, kUsage = 1, kDiverged = 2, kIo = 3 };

std::string strip_suffix(const std::string& s, const std::string& suffix) {
  if (s.size() >= suffix.size() && s.compare(s.size() - suffix.size(), suffix.size(), suffix) == 0) {
    return s.substr(0, s.size() - suffix.size());
  }
  return s;
}

void ensure_parent(const std::string& prefix) {
  const fs::path parent = fs::path(prefix).parent_path();
  if (!parent.empty()) {
    std::error_code ec;
    fs::create_directories(parent, ec);
    if (ec) throw IoError(fmt::format("cannot create '{}': {}", parent.string(), ec.message()));
  }
}

// Scenario from a preset name or a JSON file, then environment overrides.
Scenario load_scenario(const std::string& source, std::optional<std::uint64_t> seed) {
  json j;
  const auto names = preset_names();
  if (std::find(names.begin(), names.end(), source) != names.end()) {
    j = {{"preset", source}};
  } else if (fs::exists(source)) {
    j = load_json_file(source);
  } else {
    throw ConfigError(fmt::format("scenario: '{}' is neither a preset nor a file", source));
  }
  apply_env_overrides(j, kScenarioEnvPrefix);
  if (seed) j["seed"] = *seed;
  return parse_scenario(j);
}

EstimatorConfig load_estimator_config(const std::string& path) {
  json j = load_json_file(path);
  apply_env_overrides(j, kEstimatorEnvPrefix);
  return parse_estimator_config(j);
}

// Estimator config matching a simulated dataset: its anchors and lever arm,
// default tuning, and the take-off heading (the initial position is left to
// the bootstrap).
EstimatorConfig config_for(const Scenario& sc, const Dataset& d) {
  EstimatorConfig c;
  c.anchors = sc.anchors;
  c.pipeline.ufls.lever_arm = sc.lever_arm;
  c.pipeline.ufls.range_sigma = sc.range_sigma > 0.0 ? sc.range_sigma : c.pipeline.ufls.range_sigma;
  c.pipeline.init.yaw = d.offset_truth.front().pose.rotation().yaw();
  return c;
}

struct SimulateArgs {
  std::string scenario;
  std::string out;
  std::optional<std::uint64_t> seed;
};

int cmd_simulate(const SimulateArgs& a) {
  const Scenario sc = load_scenario(a.scenario, a.seed);
  const Dataset d = simulate(sc);
  ensure_parent(a.out);
  write_log(a.out + ".log", dataset_records(d, true));
  write_trajectory(a.out + ".gt.txt", d.ground_truth);
  write_trajectory(a.out + ".offset_gt.txt", d.offset_truth);

  json spikes = json::array();
  std::size_t nlos = 0;
  for (const auto& r : d.ranges) {
    if (!r.nlos) continue;
    ++nlos;
    spikes.push_back({r.z.stamp, r.z.anchor_id});
  }
  json biases = json::object();
  for (const auto& [id, b] : d.biases) biases[std::to_string(id)] = b;
  write_json(a.out + ".truth.json", {{"seed", sc.seed}, {"biases", biases}, {"nlos", spikes}});
  write_json(a.out + ".scenario.json", to_json(sc));
  write_json(a.out + ".config.json", to_json(config_for(sc, d)));

  fmt::print("simulated {:.3f} s: {} ranges ({} NLOS), {} odometry samples, {} anchors -> {}.log\n",
             sc.duration, d.ranges.size(), nlos, d.odometry.size(), sc.anchors.size(), a.out);
  return kOk;
}

struct EstimateArgs {
  std::string dataset;
  std::string config;
  std::string out;
  std::string mode = "full";
  std::string gt;
};

std::string default_config(const std::string& dataset) { return strip_suffix(dataset, ".log") + ".config.json"; }

std::vector<StampedPose> ground_truth_from(const std::string& gt, const std::vector<LogRecord>& log) {
  if (!gt.empty()) return read_trajectory(gt);
  std::vector<StampedPose> out;
  for (const auto& r : log) {
    if (r.kind == LogRecord::Kind::GroundTruth) out.push_back(r.ground_truth);
  }
  return out;
}

int cmd_estimate(const EstimateArgs& a) {
  const Mode mode = parse_mode(a.mode);
  const EstimatorConfig cfg = load_estimator_config(a.config.empty() ? default_config(a.dataset) : a.config);
  const auto log = read_log(a.dataset);
  const auto records = pipeline_records(log);
  const auto gt = ground_truth_from(a.gt, log);
  ensure_parent(a.out);

  Pipeline pipeline(mode, cfg.pipeline, cfg.anchors);
  try {
    for (const auto& r : records) pipeline.feed(r);
    if (!records.empty()) pipeline.advance_to(records.back().stamp());
  } catch (const DivergenceError& e) {
    write_text(a.out + "_divergence.txt", e.dump());
    fmt::print(stderr, "error: {}\nwindow dump written to {}_divergence.txt\n", e.what(), a.out);
    return kDiverged;
  }
  const PipelineResult& res = pipeline.result();

  write_trajectory(a.out + "_corrected.txt", res.corrected);
  write_trajectory(a.out + "_ufls.txt", res.ufls);
  std::string offsets;
  for (const auto& o : res.offsets) offsets += format_trajectory_line(o.stamp, Pose(o.rotation, o.position)) + '\n';
  write_text(a.out + "_offset.txt", offsets);
  std::string raw;
  for (const auto& o : res.raw_offsets) raw += format_trajectory_line(o.stamp, Pose(o.rotation, o.position)) + '\n';
  write_text(a.out + "_offset_raw.txt", raw);
  std::string bias = "# t anchor_id mean sigma\n";
  for (const auto& b : res.biases) {
    for (const auto& [id, e] : b.biases) {
      bias += fmt::format("{} {} {} {}\n", format_number(b.stamp), id, format_number(e.mean), format_number(e.sigma));
    }
  }
  write_text(a.out + "_bias.txt", bias);

  std::optional<ErrorReport> report;
  json metrics;
  if (!gt.empty() && !res.corrected.empty()) {
    EvaluateOptions opts;
    if (mode == Mode::VioOnly) opts.align = Alignment::FirstPose;
    report = evaluate(res.corrected, gt, opts);
  }
  metrics = metrics_json(report, res.accepted, res.rejected);
  metrics["mode"] = to_string(mode);
  metrics["samples"] = {{"corrected", res.corrected.size()}, {"ufls", res.ufls.size()}};
  if (!gt.empty() && !res.ufls.empty()) metrics["ufls_error"] = error_report_json(evaluate(res.ufls, gt));
  if (!res.biases.empty()) {
    json last = json::object();
    for (const auto& [id, e] : res.biases.back().biases) last[std::to_string(id)] = {{"mean", e.mean}, {"sigma", e.sigma}};
    metrics["final_biases"] = last;
  }
  write_json(a.out + "_metrics.json", metrics);

  fmt::print("{}: {} corrected poses, {} ufls estimates, ranges accepted {} rejected {}", to_string(mode),
             res.corrected.size(), res.ufls.size(), res.accepted, res.rejected);
  if (report) fmt::print(", position RMSE {} m", format_number(report->rmse));
  fmt::print("\n");
  return kOk;
}

struct BatchArgs {
  std::string dataset;
  std::string config;
  std::string out;
  std::string bias = "const";
  std::string gt;
};

int cmd_batch(const BatchArgs& a) {
  BatchBias mode;
  if (a.bias == "const") {
    mode = BatchBias::Constant;
  } else if (a.bias == "none") {
    mode = BatchBias::None;
  } else {
    throw ConfigError(fmt::format("bias: unknown value '{}'", a.bias));
  }
  const EstimatorConfig cfg = load_estimator_config(a.config.empty() ? default_config(a.dataset) : a.config);
  const auto log = read_log(a.dataset);
  std::vector<RangeMeasurement> ranges;
  std::vector<OdometrySample> odometry;
  std::optional<Pose> last;
  for (const auto& r : log) {
    if (r.kind == LogRecord::Kind::Range) ranges.push_back(r.range);
    if (r.kind != LogRecord::Kind::Odometry) continue;
    OdometrySample s = r.odometry;
    if (r.frame == OdometryFrameMode::Relative && last) s.pose.mean = (*last) * s.pose.mean;
    if (!r.has_covariance) {
      const double dt = odometry.empty() ? 1e-3 : std::max(s.stamp - odometry.back().stamp, 1e-6);
      s.pose.cov = 0.5 * default_odometry_covariance(dt, cfg.pipeline.odom_translation_density,
                                                     cfg.pipeline.odom_rotation_density);
    }
    last = s.pose.mean;
    odometry.push_back(s);
  }
  const auto gt = ground_truth_from(a.gt, log);
  ensure_parent(a.out);

  BatchOptions opts;
  opts.config = cfg.pipeline.ufls;
  opts.init = cfg.pipeline.init;
  const BatchResult res = batch_oracle(ranges, odometry, cfg.anchors, mode, opts);
  write_trajectory(a.out + "_batch.txt", res.trajectory);

  json metrics;
  std::optional<ErrorReport> report;
  if (!gt.empty()) report = evaluate(res.trajectory, gt);
  metrics = metrics_json(report, static_cast<std::int64_t>(res.ranges_used),
                         static_cast<std::int64_t>(ranges.size() - res.ranges_used));
  metrics["bias"] = a.bias;
  metrics["converged"] = res.summary.converged;
  metrics["iterations"] = res.summary.iterations;
  metrics["final_cost"] = res.summary.final_cost;
  json biases = json::object();
  for (const auto& [id, e] : res.biases) biases[std::to_string(id)] = {{"mean", e.mean}, {"sigma", e.sigma}};
  metrics["biases"] = biases;
  write_json(a.out + "_metrics.json", metrics);

  if (!res.summary.converged) {
    fmt::print(stderr, "warning: batch did not converge after {} iterations (final cost {})\n",
               res.summary.iterations, format_number(res.summary.final_cost));
  }
  fmt::print("batch ({}): {} poses, {} ranges used", a.bias, res.trajectory.size(), res.ranges_used);
  if (report) fmt::print(", position RMSE {} m", format_number(report->rmse));
  fmt::print("\n");
  return kOk;
}

struct EvaluateArgs {
  std::string estimate;
  std::string gt;
  std::string align = "none";
  std::string out;
  double from = -1e300;
};

int cmd_evaluate(const EvaluateArgs& a) {
  EvaluateOptions opts;
  if (a.align == "none") {
    opts.align = Alignment::None;
  } else if (a.align == "first-pose") {
    opts.align = Alignment::FirstPose;
  } else {
    throw ConfigError(fmt::format("align: unknown value '{}'", a.align));
  }
  opts.from = a.from;
  const auto report = evaluate(read_trajectory(a.estimate), read_trajectory(a.gt), opts);
  const std::string text = format_json(error_report_json(report));
  if (!a.out.empty()) {
    ensure_parent(a.out);
    write_text(a.out, text);
  }
  fmt::print("{}", text);
  return kOk;
}

struct AblateArgs {
  std::string scenario;
  std::string out;
  std::optional<std::uint64_t> seed;
};

// Every estimator variant on one simulated dataset.
int cmd_ablate(const AblateArgs& a) {
  const Scenario sc = load_scenario(a.scenario, a.seed);
  const Dataset d = simulate(sc);
  const EstimatorConfig cfg = config_for(sc, d);
  ensure_parent(a.out);

  std::vector<RangeMeasurement> ranges;
  for (const auto& r : d.ranges) ranges.push_back(r.z);
  const auto records = merge_records(ranges, d.odometry);

  json rows = json::array();
  std::string table = fmt::format("{:<12} {:>10} {:>10} {:>10}\n", "variant", "rmse[m]", "max[m]", "smooth[m]");
  const auto add = [&](const std::string& name, const ErrorReport& r) {
    rows.push_back({{"variant", name}, {"error", error_report_json(r)}});
    table += fmt::format("{:<12} {:>10} {:>10} {:>10}\n", name, format_number(r.rmse), format_number(r.max_error),
                         format_number(r.smoothness));
  };
  for (const Mode mode : {Mode::Full, Mode::NoBias, Mode::NoWnoa, Mode::UflsOnly, Mode::VioOnly}) {
    const auto res = run_pipeline(mode, cfg.pipeline, cfg.anchors, records);
    write_trajectory(a.out + "_" + to_string(mode) + ".txt", res.corrected);
    EvaluateOptions opts;
    if (mode == Mode::VioOnly) opts.align = Alignment::FirstPose;
    add(to_string(mode), evaluate(res.corrected, d.ground_truth, opts));
  }
  for (const auto& [name, bias] : {std::pair{"batch-const", BatchBias::Constant}, std::pair{"batch-none", BatchBias::None}}) {
    BatchOptions opts;
    opts.config = cfg.pipeline.ufls;
    opts.init = cfg.pipeline.init;
    const auto res = batch_oracle(ranges, d.odometry, cfg.anchors, bias, opts);
    write_trajectory(a.out + "_" + name + ".txt", res.trajectory);
    add(name, evaluate(res.trajectory, d.ground_truth));
  }
  write_json(a.out + "_ablation.json", {{"scenario", to_json(sc)}, {"variants", rows}});
  fmt::print("{}", table);
  return kOk;
}

int run(int argc, char** argv) {
  CLI::App app{"Range-aided localization: simulator, fixed-lag estimator and evaluation tools"};
  app.require_subcommand(1);
  bool verbose = false;
  app.add_flag("-v,--verbose", verbose, "Log estimator progress to stderr");

  SimulateArgs sim;
  auto* simulate_cmd = app.add_subcommand("simulate", "Generate a dataset from a scenario file or preset");
  simulate_cmd->add_option("scenario", sim.scenario, "Scenario JSON file or preset name")->required();
  simulate_cmd->add_option("--out", sim.out, "Output prefix")->required();
  simulate_cmd->add_option("--seed", sim.seed, "Override the scenario seed");

  EstimateArgs est;
  auto* estimate_cmd = app.add_subcommand("estimate", "Replay a log through the fixed-lag estimator");
  estimate_cmd->add_option("dataset", est.dataset, "Measurement log")->required()->check(CLI::ExistingFile);
  estimate_cmd->add_option("--config", est.config, "Estimator config (default: <dataset>.config.json)");
  estimate_cmd->add_option("--out", est.out, "Output prefix")->required();
  estimate_cmd->add_option("--mode", est.mode, "full | no-bias | no-wnoa | ufls-only | vio-only");
  estimate_cmd->add_option("--gt", est.gt, "Ground-truth trajectory (default: GT records of the log)");

  BatchArgs batch;
  auto* batch_cmd = app.add_subcommand("batch", "Solve the whole log as one graph (baseline)");
  batch_cmd->add_option("dataset", batch.dataset, "Measurement log")->required()->check(CLI::ExistingFile);
  batch_cmd->add_option("--config", batch.config, "Estimator config (default: <dataset>.config.json)");
  batch_cmd->add_option("--out", batch.out, "Output prefix")->required();
  batch_cmd->add_option("--bias", batch.bias, "const | none");
  batch_cmd->add_option("--gt", batch.gt, "Ground-truth trajectory (default: GT records of the log)");

  EvaluateArgs ev;
  auto* evaluate_cmd = app.add_subcommand("evaluate", "Score a trajectory against ground truth");
  evaluate_cmd->add_option("estimate", ev.estimate, "Estimated trajectory")->required()->check(CLI::ExistingFile);
  evaluate_cmd->add_option("gt", ev.gt, "Ground-truth trajectory")->required()->check(CLI::ExistingFile);
  evaluate_cmd->add_option("--align", ev.align, "none | first-pose");
  evaluate_cmd->add_option("--from", ev.from, "Ignore estimates before this stamp");
  evaluate_cmd->add_option("--out", ev.out, "Also write the report to this file");

  AblateArgs ab;
  auto* ablate_cmd = app.add_subcommand("ablate", "Simulate once and run every estimator variant");
  ablate_cmd->add_option("scenario", ab.scenario, "Scenario JSON file or preset name")->required();
  ablate_cmd->add_option("--out", ab.out, "Output prefix")->required();
  ablate_cmd->add_option("--seed", ab.seed, "Override the scenario seed");

  auto* presets_cmd = app.add_subcommand("presets", "List scenario presets");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kUsage;
  }

  auto logger = spdlog::stderr_color_mt("raloc");
  logger->set_pattern("[%l] %v");
  spdlog::set_default_logger(logger);
  spdlog::set_level(verbose ? spdlog::level::info : spdlog::level::warn);

  if (*simulate_cmd) return cmd_simulate(sim);
  if (*estimate_cmd) return cmd_estimate(est);
  if (*batch_cmd) return cmd_batch(batch);
  if (*evaluate_cmd) return cmd_evaluate(ev);
  if (*ablate_cmd) return cmd_ablate(ab);
  if (*presets_cmd) {
    for (const auto& n : preset_names()) fmt::print("{}\n", n);
    return kOk;
  }
  return kUsage;
}

}  // namespace

int main(int argc, char** argv) {
  try {
    return run(argc, argv);
  } catch (const ConfigError& e) {
    fmt::print(stderr, "config error: {}\n", e.what());
    return kUsage;
  } catch (const IoError& e) {
    fmt::print(stderr, "i/o error: {}\n", e.what());
    return kIo;
  } catch (const OrderingError& e) {
    fmt::print(stderr, "i/o error: {}\n", e.what());
    return kIo;
  } catch (const DivergenceError& e) {
    fmt::print(stderr, "error: {}\n", e.what());
    return kDiverged;
  } catch (const Error& e) {
    fmt::print(stderr, "error: {}\n", e.what());
    return kUsage;
  }
}
