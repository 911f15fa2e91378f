#include "raloc/sim.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <random>

#include <Eigen/Dense>
#include <fmt/format.h>
#include <spdlog/spdlog.h>

#include "raloc/errors.hpp"

namespace raloc {
namespace {

// 5-point Gauss-Legendre on [-1, 1].
constexpr std::array<double, 5> kGlNodes{0.0, -0.5384693101056831, 0.5384693101056831,
                                         -0.9061798459386640, 0.9061798459386640};
constexpr std::array<double, 5> kGlWeights{0.5688888888888889, 0.4786286704993665,
                                           0.4786286704993665, 0.2369268850561891,
                                           0.2369268850561891};
constexpr int kArcPieces = 16;

Pose pose_on_path(const SplinePath& path, double s, double& yaw) {
  const Vector3 t = path.tangent(s);
  if (t.head<2>().norm() > 1e-6) yaw = std::atan2(t.y(), t.x());
  return Pose(Rotation::about_z(yaw), path.position(s));
}

double path_arc(const SplinePath& path, double speed, double t) {
  const double s = speed * t;
  return path.closed() ? s : std::min(s, path.length());
}

}  // namespace

void Scenario::validate() const {
  if (anchors.empty()) throw ConfigError("anchors: at least one anchor is required");
  if (waypoints.size() < 2) throw ConfigError("waypoints: at least two are required");
  if (!(speed > 0.0)) throw ConfigError("speed: must be positive");
  if (!(duration > 0.0)) throw ConfigError("duration: must be positive");
  if (!(range_rate > 0.0)) throw ConfigError("range_rate: must be positive");
  if (!(odom_rate > 0.0)) throw ConfigError("odom_rate: must be positive");
  if (!(range_sigma >= 0.0)) throw ConfigError("range_sigma: must be non-negative");
  if (!(odom_noise.translation_density >= 0.0) || !(odom_noise.rotation_density >= 0.0) ||
      !(odom_noise.floor_density > 0.0)) {
    throw ConfigError("odom_noise: densities must be non-negative, floor positive");
  }
  if (!(nlos.fraction >= 0.0 && nlos.fraction <= 1.0)) {
    throw ConfigError("nlos.fraction: must lie in [0, 1]");
  }
  for (const auto& [id, b] : bias_map) {
    if (std::none_of(anchors.begin(), anchors.end(), [&](const Anchor& a) { return a.id == id; })) {
      throw ConfigError(fmt::format("bias_map.{}: unknown anchor", id));
    }
  }
}

SplinePath::SplinePath(const std::vector<Vector3>& waypoints, bool closed) : closed_(closed) {
  if (waypoints.size() < 2) throw InvalidArgument("spline: need at least two waypoints");
  std::vector<Vector3> pts = waypoints;
  if (closed) pts.push_back(waypoints.front());
  const int n = static_cast<int>(pts.size()) - 1;  // segments
  std::vector<double> h(n);
  for (int i = 0; i < n; ++i) {
    h[i] = (pts[i + 1] - pts[i]).norm();
    if (h[i] < 1e-9) throw InvalidArgument(fmt::format("spline: waypoint {} repeats its predecessor", i + 1));
  }

  // Second derivatives at the knots.
  Eigen::MatrixXd m = Eigen::MatrixXd::Zero(n + 1, 3);
  if (closed && n >= 2) {
    Eigen::MatrixXd a = Eigen::MatrixXd::Zero(n, n);
    Eigen::MatrixXd rhs(n, 3);
    for (int i = 0; i < n; ++i) {
      const int prev = (i + n - 1) % n;
      const int next = (i + 1) % n;
      a(i, prev) += h[prev];
      a(i, i) += 2.0 * (h[prev] + h[i]);
      a(i, next) += h[i];
      // pts[n] == pts[0], so the backward difference wraps.
      const Vector3 back = pts[i] - pts[i == 0 ? n - 1 : i - 1];
      rhs.row(i) = (6.0 * ((pts[i + 1] - pts[i]) / h[i] - back / h[prev])).transpose();
    }
    const Eigen::MatrixXd sol = a.partialPivLu().solve(rhs);
    m.topRows(n) = sol;
    m.row(n) = sol.row(0);
  } else if (n >= 2) {
    // Natural end conditions.
    Eigen::MatrixXd a = Eigen::MatrixXd::Zero(n - 1, n - 1);
    Eigen::MatrixXd rhs(n - 1, 3);
    for (int i = 1; i < n; ++i) {
      const int r = i - 1;
      if (r > 0) a(r, r - 1) = h[i - 1];
      a(r, r) = 2.0 * (h[i - 1] + h[i]);
      if (r + 1 < n - 1) a(r, r + 1) = h[i];
      rhs.row(r) = (6.0 * ((pts[i + 1] - pts[i]) / h[i] - (pts[i] - pts[i - 1]) / h[i - 1])).transpose();
    }
    m.block(1, 0, n - 1, 3) = a.partialPivLu().solve(rhs);
  }

  cumulative_.push_back(0.0);
  for (int i = 0; i < n; ++i) {
    Segment seg;
    const Vector3 mi = m.row(i).transpose();
    const Vector3 mj = m.row(i + 1).transpose();
    seg.h = h[i];
    seg.a = pts[i];
    seg.b = (pts[i + 1] - pts[i]) / h[i] - h[i] * (2.0 * mi + mj) / 6.0;
    seg.c = 0.5 * mi;
    seg.d = (mj - mi) / (6.0 * h[i]);
    seg.length = arc(seg, seg.h);
    segments_.push_back(seg);
    total_ += seg.length;
    cumulative_.push_back(total_);
  }
}

double SplinePath::speed_at(const Segment& seg, double u) const {
  return (seg.b + 2.0 * seg.c * u + 3.0 * seg.d * u * u).norm();
}

double SplinePath::arc(const Segment& seg, double u) const {
  double sum = 0.0;
  const double w = u / kArcPieces;
  for (int k = 0; k < kArcPieces; ++k) {
    const double mid = (k + 0.5) * w;
    for (std::size_t q = 0; q < kGlNodes.size(); ++q) {
      sum += kGlWeights[q] * speed_at(seg, mid + 0.5 * w * kGlNodes[q]);
    }
  }
  return 0.5 * w * sum;
}

std::pair<const SplinePath::Segment*, double> SplinePath::locate(double s) const {
  if (closed_) {
    s = std::fmod(s, total_);
    if (s < 0.0) s += total_;
  } else {
    s = std::clamp(s, 0.0, total_);
  }
  auto it = std::upper_bound(cumulative_.begin(), cumulative_.end(), s);
  std::size_t i = it == cumulative_.begin() ? 0 : static_cast<std::size_t>(it - cumulative_.begin()) - 1;
  i = std::min(i, segments_.size() - 1);
  const Segment& seg = segments_[i];
  const double target = s - cumulative_[i];
  double lo = 0.0, hi = seg.h;
  double u = seg.h * target / seg.length;
  for (int it2 = 0; it2 < 50; ++it2) {
    const double f = arc(seg, u) - target;
    if (std::abs(f) < 1e-12) break;
    if (f > 0.0) hi = u; else lo = u;
    double next = u - f / std::max(speed_at(seg, u), 1e-12);
    if (!(next > lo && next < hi)) next = 0.5 * (lo + hi);
    u = next;
  }
  return {&seg, u};
}

Vector3 SplinePath::position(double s) const {
  const auto [seg, u] = locate(s);
  return seg->a + u * (seg->b + u * (seg->c + u * seg->d));
}

Vector3 SplinePath::tangent(double s) const {
  const auto [seg, u] = locate(s);
  return (seg->b + 2.0 * seg->c * u + 3.0 * seg->d * u * u).normalized();
}

std::vector<StampedPose> generate_trajectory(const std::vector<Vector3>& waypoints, double speed,
                                             bool closed, double duration, double rate) {
  if (!(speed > 0.0) || !(duration > 0.0) || !(rate > 0.0)) {
    throw InvalidArgument("generate_trajectory: speed, duration and rate must be positive");
  }
  const SplinePath path(waypoints, closed);
  const auto n = static_cast<std::int64_t>(std::llround(duration * rate));
  std::vector<StampedPose> out;
  out.reserve(static_cast<std::size_t>(n + 1));
  double yaw = 0.0;
  pose_on_path(path, 0.0, yaw);
  for (std::int64_t k = 0; k <= n; ++k) {
    const double t = static_cast<double>(k) / rate;
    out.push_back({t, pose_on_path(path, path_arc(path, speed, t), yaw)});
  }
  return out;
}

Dataset simulate(const Scenario& sc) {
  sc.validate();
  std::mt19937_64 rng(sc.seed);
  std::normal_distribution<double> gauss(0.0, 1.0);
  std::uniform_real_distribution<double> uniform(0.0, 1.0);

  Dataset out;
  out.anchors = sc.anchors;
  out.lever_arm = sc.lever_arm;
  for (const auto& a : sc.anchors) {
    const auto it = sc.bias_map.find(a.id);
    out.biases[a.id] = it == sc.bias_map.end() ? 0.0 : it->second;
  }

  const SplinePath path(sc.waypoints, sc.closed);
  const double dt = 1.0 / sc.odom_rate;
  const auto n = static_cast<std::int64_t>(std::llround(sc.duration * sc.odom_rate));
  double yaw = 0.0;
  pose_on_path(path, 0.0, yaw);
  const Pose origin_inv = pose_on_path(path, 0.0, yaw).inverse();

  const double st = sc.odom_noise.translation_density;
  const double sr = sc.odom_noise.rotation_density;
  const double rep_t = std::max(st, sc.odom_noise.floor_density);
  const double rep_r = std::max(sr, sc.odom_noise.floor_density);
  Matrix6 reported = Matrix6::Zero();
  reported.diagonal() << Vector3::Constant(0.5 * rep_t * rep_t * dt), Vector3::Constant(0.5 * rep_r * rep_r * dt);

  // Noise enters each increment, so the reported covariance describes the
  // stream exactly; a walk applied to the absolute pose instead acts as a
  // growing body-frame misalignment that no increment covariance captures.
  Pose clean_prev;
  Pose noisy;
  double yaw_walk = 0.0;
  for (std::int64_t k = 0; k <= n; ++k) {
    const double t = static_cast<double>(k) * dt;
    if (k > 0) {
      Twist w;
      for (int i = 0; i < 3; ++i) w(i) = st * std::sqrt(dt) * gauss(rng);
      for (int i = 3; i < 6; ++i) w(i) = sr * std::sqrt(dt) * gauss(rng);
      noisy = noisy * lie::exp(w);
      yaw_walk += sc.drift.yaw_walk * std::sqrt(dt) * gauss(rng);
    }
    const Pose truth = pose_on_path(path, path_arc(path, sc.speed, t), yaw);
    const Pose clean = origin_inv * truth;
    if (k > 0) noisy = noisy * (clean_prev.inverse() * clean);
    clean_prev = clean;
    const Pose drift(Rotation::about_z(sc.drift.yaw_rate * t + yaw_walk), sc.drift.velocity * t);
    const Pose odom = drift * noisy;
    out.ground_truth.push_back({t, truth});
    out.odometry.push_back({t, {odom, reported}});
    out.offset_truth.push_back({t, truth * odom.inverse()});
  }

  // Ranges: anchors polled round robin.
  const double reported_sigma = sc.range_sigma > 0.0 ? sc.range_sigma : 0.1;
  double ryaw = 0.0;
  pose_on_path(path, 0.0, ryaw);
  const auto m = static_cast<std::int64_t>(std::floor(sc.duration * sc.range_rate + 1e-9));
  for (std::int64_t j = 1; j <= m; ++j) {
    const double t = static_cast<double>(j) / sc.range_rate;
    const Anchor& a = sc.anchors[static_cast<std::size_t>(j - 1) % sc.anchors.size()];
    const Pose truth = pose_on_path(path, path_arc(path, sc.speed, t), ryaw);
    const double noise = gauss(rng);
    const double draw = uniform(rng);
    LabeledRange r;
    r.z.stamp = t;
    r.z.anchor_id = a.id;
    r.z.sigma = reported_sigma;
    r.z.range = predicted_range(truth, out.biases[a.id], a, sc.lever_arm) + sc.range_sigma * noise;
    if (draw < sc.nlos.fraction) {
      r.z.range += sc.nlos.magnitude;
      r.nlos = true;
    }
    out.ranges.push_back(r);
  }
  return out;
}

namespace {

struct Room {
  std::vector<Anchor> anchors;
  Vector3 center;
  double half;  // half side of the square path
};

Room utias_room() {
  Room r;
  int id = 1;
  for (double z : {0.0, 3.5}) {
    for (const auto& [x, y] : std::vector<std::pair<double, double>>{{0, 0}, {7, 0}, {7, 8}, {0, 8}}) {
      r.anchors.push_back({id++, Vector3(x, y, z)});
    }
  }
  r.center = Vector3(3.5, 4.0, 1.5);
  r.half = 1.5;
  return r;
}

Room cafeteria_room() {
  Room r;
  const std::vector<Vector3> pts{{1.0, 1.0, 5.0}, {9.0, 1.5, 5.0}, {8.5, 9.0, 5.0}, {1.5, 8.5, 5.0},
                                 {5.0, 0.5, 0.2}, {9.5, 5.0, 0.2}, {5.0, 9.5, 0.2}, {0.5, 5.0, 0.2}};
  int id = 1;
  for (const auto& p : pts) r.anchors.push_back({id++, p});
  r.center = Vector3(5.0, 5.0, 1.5);
  r.half = 2.0;
  return r;
}

std::vector<Vector3> square_path(const Room& room) {
  const double h = room.half;
  std::vector<Vector3> out;
  for (const auto& [x, y] : std::vector<std::pair<double, double>>{
           {-h, -h}, {0, -h}, {h, -h}, {h, 0}, {h, h}, {0, h}, {-h, h}, {-h, 0}}) {
    out.push_back(room.center + Vector3(x, y, 0.0));
  }
  return out;
}

std::vector<Vector3> slalom_path(const Room& room) {
  const double h = room.half;
  // Weave through gates along +y, then return along a straight lane.
  return {room.center + Vector3(-0.2 * h, -1.3 * h, -0.2), room.center + Vector3(-0.8 * h, -0.6 * h, 0.0),
          room.center + Vector3(0.4 * h, 0.0, 0.2),        room.center + Vector3(-0.8 * h, 0.6 * h, 0.0),
          room.center + Vector3(-0.2 * h, 1.3 * h, -0.2),  room.center + Vector3(1.2 * h, 0.8 * h, 0.0),
          room.center + Vector3(1.3 * h, -0.8 * h, 0.0)};
}

}  // namespace

std::vector<std::string> preset_names() {
  return {"utias_testbed_square", "utias_testbed_slalom", "cafeteria_square", "cafeteria_slalom"};
}

Scenario preset(const std::string& name) {
  Room room;
  std::string path;
  if (name.rfind("utias_testbed_", 0) == 0) {
    room = utias_room();
    path = name.substr(14);
  } else if (name.rfind("cafeteria_", 0) == 0) {
    room = cafeteria_room();
    path = name.substr(10);
  } else {
    throw ConfigError(fmt::format("preset: unknown name '{}'", name));
  }
  Scenario sc;
  sc.anchors = room.anchors;
  if (path == "square") {
    sc.waypoints = square_path(room);
    sc.speed = 1.0;
  } else if (path == "slalom") {
    sc.waypoints = slalom_path(room);
    sc.speed = 2.0;
  } else {
    throw ConfigError(fmt::format("preset: unknown path in '{}'", name));
  }
  sc.closed = true;
  sc.duration = 60.0;
  sc.range_sigma = 0.1;
  sc.odom_noise.translation_density = 0.02;
  sc.odom_noise.rotation_density = 0.005;
  sc.drift.velocity = Vector3(0.01, -0.008, 0.002);
  sc.drift.yaw_rate = 0.002;
  sc.drift.yaw_walk = 0.001;
  return sc;
}

BatchResult batch_oracle(const std::vector<RangeMeasurement>& all_ranges,
                         const std::vector<OdometrySample>& odometry,
                         const std::vector<Anchor>& anchor_list, BatchBias mode,
                         const BatchOptions& options) {
  UflsConfig config = options.config;
  config.bias_estimation = mode == BatchBias::Constant;
  config.validate();
  std::map<int, Anchor> anchors;
  for (const auto& a : anchor_list) anchors[a.id] = a;

  OdometryBuffer buffer(config.odometry);
  for (const auto& s : odometry) buffer.push(s);
  if (buffer.empty()) throw NoEstimateError("batch: no odometry");

  std::vector<RangeMeasurement> ranges;
  for (const auto& z : options.ranges ? *options.ranges : all_ranges) {
    if (anchors.count(z.anchor_id) && buffer.covers(z.stamp)) ranges.push_back(z);
  }

  const Rotation yaw = Rotation::about_z(options.init.yaw);
  Pose offset;
  if (options.init.position) {
    offset = Pose(yaw, *options.init.position);
  } else {
    std::vector<RangeMeasurement> early;
    for (const auto& z : ranges) {
      if (z.stamp <= ranges.front().stamp + 2.0) early.push_back(z);
    }
    const auto t = multilaterate_offset(early, anchors, buffer, yaw, config.lever_arm);
    if (!t) throw NoEstimateError("batch: could not bootstrap the initial offset");
    offset = Pose(yaw, *t);
  }

  std::vector<std::vector<RangeMeasurement>> clusters = cluster_ranges(ranges, config.cluster_tolerance);
  BatchResult result;
  std::vector<bool> active(ranges.size(), true);

  for (int pass = 0; pass <= options.gating_passes; ++pass) {
    FactorGraph graph;
    std::vector<VariableKey> states;
    std::map<std::size_t, VariableKey> range_keys;
    std::size_t idx = 0;
    for (const auto& cluster : clusters) {
      const double t = cluster.front().stamp;
      const VariableKey key = pose_key(static_cast<std::int64_t>(states.size()), t);
      if (states.empty()) {
        const Pose value = offset * (*buffer.pose_at(t));
        graph.add_variable(key, value);
        graph.add_factor(make_prior_factor(key, value, initial_pose_covariance(options.init)));
      } else {
        const VariableKey& prev = states.back();
        PreintegratedOdometry m = buffer.preintegrate(prev.stamp, t);
        graph.add_variable(key, graph.values().pose(prev) * m.delta);
        graph.add_factor(std::make_shared<OdometryFactor>(prev, key, std::move(m)));
      }
      states.push_back(key);
      for (const auto& z : cluster) {
        const std::size_t i = idx++;
        if (!active[i]) continue;
        if (config.bias_estimation && !graph.contains(bias_key(z.anchor_id))) {
          const Anchor& a = anchors.at(z.anchor_id);
          graph.add_variable(bias_key(z.anchor_id), a.bias_prior_mean);
          graph.add_factor(make_prior_factor(
              bias_key(z.anchor_id), a.bias_prior_mean,
              Eigen::MatrixXd::Constant(1, 1, a.bias_prior_sigma * a.bias_prior_sigma)));
        }
        graph.add_factor(make_range_factor(key, z, anchors.at(z.anchor_id), config));
        range_keys.emplace(i, key);
      }
    }
    // Warm start from the previous pass.
    if (pass > 0) {
      for (std::size_t k = 0; k < states.size() && k < result.trajectory.size(); ++k) {
        graph.values().update(states[k], result.trajectory[k].pose);
      }
      for (const auto& [id, b] : result.biases) {
        if (graph.contains(bias_key(id))) graph.values().update(bias_key(id), b.mean);
      }
    }
    result.summary = optimize(graph, options.solver);
    if (!result.summary.converged) {
      spdlog::warn("batch: not converged after {} iterations, cost {:.6g}", result.summary.iterations,
                   result.summary.final_cost);
    }
    result.trajectory.clear();
    for (const auto& k : states) result.trajectory.push_back({k.stamp, graph.values().pose(k)});
    result.biases.clear();
    std::vector<VariableKey> bias_keys;
    for (const auto& [id, a] : anchors) {
      if (graph.contains(bias_key(id))) bias_keys.push_back(bias_key(id));
    }
    if (!bias_keys.empty()) {
      const auto covs = marginal_covariances(graph, bias_keys);
      for (std::size_t i = 0; i < bias_keys.size(); ++i) {
        result.biases[static_cast<int>(bias_keys[i].id)] = {graph.values().scalar(bias_keys[i]),
                                                            std::sqrt(covs[i](0, 0))};
      }
    }
    result.ranges_used = range_keys.size();

    if (pass == options.gating_passes) break;
    bool changed = false;
    std::size_t flat = 0;
    for (const auto& cluster : clusters) {
      for (const auto& z : cluster) {
        const std::size_t i = flat++;
        if (!active[i]) continue;
        const auto it = range_keys.find(i);
        const Anchor& a = anchors.at(z.anchor_id);
        const double b = config.bias_estimation ? graph.values().scalar(bias_key(z.anchor_id)) : 0.0;
        const double pred = predicted_range(graph.values().pose(it->second), b, a, config.lever_arm);
        if (std::abs(z.range - pred) > config.gate) {
          active[i] = false;
          changed = true;
        }
      }
    }
    if (!changed) break;
  }
  return result;
}

}  // namespace raloc
