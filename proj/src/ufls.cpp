#include "raloc/ufls.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <limits>
#include <set>

#include <Eigen/Dense>
#include <fmt/format.h>
#include <spdlog/spdlog.h>

#include "raloc/errors.hpp"

namespace raloc {
namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();
// Enough ranges that the motion between them breaks mirror ambiguities.
constexpr std::size_t kMinBootstrapRanges = 10;

}  // namespace

FactorPtr make_prior_factor(const VariableKey& key, const Value& mean, const Eigen::MatrixXd& cov) {
  MarginalPrior p;
  p.keys = {key};
  p.linearization_point.insert(key, mean);
  p.information = cov.inverse();
  p.gradient = Eigen::VectorXd::Zero(cov.rows());
  return std::make_shared<DensePriorFactor>(std::move(p));
}

void UflsConfig::validate() const {
  if (!(window > 0.0)) throw ConfigError("ufls.window: must be positive");
  if (!(update_rate > 0.0)) throw ConfigError("ufls.update_rate: must be positive");
  if (!(range_sigma > 0.0)) throw ConfigError("ufls.range_sigma: must be positive");
  if (!(gate > 3.0 * range_sigma)) throw ConfigError("ufls.gate: must exceed 3 * range_sigma");
  if (!(bias_walk_sigma >= 0.0)) throw ConfigError("ufls.bias_walk_sigma: must be non-negative");
  if (!(cluster_tolerance > 0.0)) throw ConfigError("ufls.cluster_tolerance: must be positive");
  if (!(startup_gate_factor >= 1.0)) throw ConfigError("ufls.startup_gate_factor: must be >= 1");
  if (!(huber >= 0.0)) throw ConfigError("ufls.huber: must be non-negative");
  if (!lever_arm.offset.allFinite()) throw ConfigError("ufls.lever_arm: must be finite");
}

PoseWithCovariance frame_offset(const UflsEstimate& estimate) {
  PoseWithCovariance out;
  out.mean = estimate.pose.mean * estimate.matched_odometry.inverse();
  out.cov = lie::transport_covariance(estimate.pose.cov, estimate.matched_odometry);
  return out;
}

Matrix3 offset_position_covariance(const PoseWithCovariance& offset) {
  const Matrix3 r = offset.mean.rotation().matrix();
  return lie::symmetrize(Matrix3(r * offset.cov.topLeftCorner<3, 3>() * r.transpose()));
}

std::vector<std::vector<RangeMeasurement>> cluster_ranges(std::vector<RangeMeasurement> ranges,
                                                          double tolerance) {
  std::stable_sort(ranges.begin(), ranges.end(),
                   [](const auto& a, const auto& b) { return a.stamp < b.stamp; });
  std::vector<std::vector<RangeMeasurement>> out;
  for (const auto& z : ranges) {
    if (out.empty() || z.stamp - out.back().front().stamp > tolerance) out.emplace_back();
    out.back().push_back(z);
  }
  return out;
}

FactorPtr make_range_factor(const VariableKey& pose, const RangeMeasurement& z,
                            const Anchor& anchor, const UflsConfig& config) {
  RangeMeasurement m = z;
  if (!(m.sigma > 0.0)) m.sigma = config.range_sigma;
  std::shared_ptr<RangeFactor> f;
  if (config.bias_estimation) {
    f = std::make_shared<RangeFactor>(pose, bias_key(anchor.id), m, anchor, config.lever_arm);
  } else {
    f = std::make_shared<RangeFactor>(pose, std::nullopt, m, anchor, config.lever_arm, 0.0);
  }
  if (config.huber > 0.0) f->set_huber(config.huber);
  return f;
}

Matrix6 initial_pose_covariance(const InitialOffset& init) {
  Matrix6 cov = Matrix6::Zero();
  cov.diagonal().head<3>().setConstant(init.sigma_position * init.sigma_position);
  cov.diagonal().tail<3>().setConstant(init.sigma_rotation * init.sigma_rotation);
  return cov;
}

namespace {

struct MultilaterationObs {
  Vector3 anchor;
  Vector3 q;  // antenna position relative to the offset translation
  double z;
  int id;
};

// Gauss-Newton from `t`; returns the sum of squared residuals or nullopt.
std::optional<double> gauss_newton_offset(const std::vector<MultilaterationObs>& obs, Vector3& t) {
  for (int it = 0; it < 50; ++it) {
    Matrix3 h = Matrix3::Zero();
    Vector3 g = Vector3::Zero();
    for (const auto& o : obs) {
      const Vector3 d = o.anchor - t - o.q;
      const double n = d.norm();
      if (n < 1e-9) continue;
      const Eigen::RowVector3d j = -d.transpose() / n;
      h += j.transpose() * j;
      g += j.transpose() * (n - o.z);
    }
    if (std::abs(h.determinant()) < 1e-12) return std::nullopt;
    const Vector3 step = -h.ldlt().solve(g);
    t += step;
    if (!t.allFinite()) return std::nullopt;
    if (step.norm() < 1e-10) {
      double cost = 0.0;
      for (const auto& o : obs) cost += std::pow((o.anchor - t - o.q).norm() - o.z, 2);
      return cost;
    }
  }
  return std::nullopt;
}

}  // namespace

std::optional<Vector3> multilaterate_offset(const std::vector<RangeMeasurement>& ranges,
                                            const std::map<int, Anchor>& anchors,
                                            const OdometryBuffer& odometry,
                                            const Rotation& offset_rotation,
                                            const LeverArm& arm) {
  std::vector<MultilaterationObs> obs;
  for (const auto& r : ranges) {
    const auto a = anchors.find(r.anchor_id);
    const auto pose = odometry.pose_at(r.stamp);
    if (a == anchors.end() || !pose) continue;
    obs.push_back({a->second.position, offset_rotation * ((*pose) * arm.offset),
                   r.range - a->second.bias_prior_mean, r.anchor_id});
  }
  while (true) {
    std::set<int> ids;
    for (const auto& o : obs) ids.insert(o.id);
    if (ids.size() < 5 || obs.size() < kMinBootstrapRanges) return std::nullopt;

    Vector3 centroid = Vector3::Zero();
    for (const auto& o : obs) centroid += o.anchor - o.q;
    centroid /= static_cast<double>(obs.size());
    std::vector<std::pair<double, Vector3>> solutions;
    for (int k = 0; k < 7; ++k) {
      Vector3 t = centroid;
      if (k > 0) t((k - 1) / 2) += (k % 2 ? 2.0 : -2.0);
      if (const auto cost = gauss_newton_offset(obs, t)) solutions.emplace_back(*cost, t);
    }
    if (solutions.empty()) return std::nullopt;
    std::sort(solutions.begin(), solutions.end(),
              [](const auto& a, const auto& b) { return a.first < b.first; });
    const auto& [best_cost, t] = solutions.front();
    for (const auto& [cost, other] : solutions) {
      if ((other - t).norm() > 0.5 && cost < 2.0 * best_cost + 0.05 * static_cast<double>(obs.size())) {
        return std::nullopt;  // ambiguous; wait for more geometry
      }
    }

    std::size_t worst = 0;
    double worst_err = 0.0;
    for (std::size_t i = 0; i < obs.size(); ++i) {
      const double e = std::abs((obs[i].anchor - t - obs[i].q).norm() - obs[i].z);
      if (e > worst_err) {
        worst_err = e;
        worst = i;
      }
    }
    if (worst_err <= 1.0) return t;
    obs.erase(obs.begin() + static_cast<long>(worst));
  }
}

Ufls::Ufls(UflsConfig config, const std::vector<Anchor>& anchors, InitialOffset init)
    : config_(std::move(config)), init_(init), odometry_(config_.odometry) {
  config_.validate();
  for (const auto& a : anchors) {
    if (!(a.bias_prior_sigma > 0.0)) {
      throw ConfigError(fmt::format("anchors[{}].bias_prior_sigma: must be positive", a.id));
    }
    if (!anchors_.emplace(a.id, a).second) {
      throw ConfigError(fmt::format("anchors: duplicate id {}", a.id));
    }
  }
  if (init_.position) {
    snapshot_.valid = true;
    snapshot_.offset = Pose(Rotation::about_z(init_.yaw), *init_.position);
    for (const auto& [id, a] : anchors_) snapshot_.bias[id] = a.bias_prior_mean;
  }
  snapshot_.initialized_at = std::numeric_limits<double>::infinity();
}

void Ufls::subscribe(Callback cb) { subscribers_.push_back(std::move(cb)); }

std::int64_t Ufls::rejected_count() const {
  std::lock_guard lock(mutex_);
  return rejected_;
}

std::int64_t Ufls::accepted_count() const {
  std::lock_guard lock(mutex_);
  return accepted_;
}

double Ufls::gate_for(double stamp) const {
  const bool startup = stamp < snapshot_.initialized_at + config_.window;
  return startup ? config_.gate * config_.startup_gate_factor : config_.gate;
}

bool Ufls::gate_check(const RangeMeasurement& z, double& predicted) const {
  predicted = kNaN;
  if (!snapshot_.valid || !latest_odometry_) return true;
  const Anchor& a = anchors_.at(z.anchor_id);
  double b = 0.0;
  if (config_.bias_estimation) {
    const auto it = snapshot_.bias.find(z.anchor_id);
    b = it != snapshot_.bias.end() ? it->second : a.bias_prior_mean;
  }
  predicted = predicted_range(snapshot_.offset * (*latest_odometry_), b, a, config_.lever_arm);
  return std::abs(z.range - predicted) <= gate_for(z.stamp);
}

RangeIngestResult Ufls::ingest_range(const RangeMeasurement& z) {
  RangeIngestResult result;
  if (!anchors_.count(z.anchor_id)) {
    spdlog::warn("ufls: range from unknown anchor {} dropped", z.anchor_id);
    result.predicted = kNaN;
    return result;
  }
  std::lock_guard lock(mutex_);
  result.accepted = gate_check(z, result.predicted);
  if (result.accepted) {
    pending_ranges_.push_back(z);
    ++accepted_;
  } else {
    ++rejected_;
  }
  return result;
}

bool Ufls::ingest_odometry(const OdometrySample& s, OdometryFrameMode mode) {
  std::lock_guard lock(mutex_);
  if (!(s.stamp > latest_odometry_stamp_)) {
    spdlog::warn("ufls: odometry stamp {:.9f} not increasing, dropped", s.stamp);
    return false;
  }
  if (mode == OdometryFrameMode::Relative && latest_odometry_) {
    latest_odometry_ = (*latest_odometry_) * s.pose.mean;
  } else {
    latest_odometry_ = s.pose.mean;
  }
  latest_odometry_stamp_ = s.stamp;
  pending_odometry_.emplace_back(s, mode);
  return true;
}

void Ufls::ensure_bias(int anchor_id) {
  if (!config_.bias_estimation) return;
  const VariableKey key = bias_key(anchor_id);
  if (graph_.contains(key)) return;
  const Anchor& a = anchors_.at(anchor_id);
  graph_.add_variable(key, a.bias_prior_mean);
  graph_.add_factor(make_prior_factor(key, a.bias_prior_mean,
                                Eigen::MatrixXd::Constant(1, 1, a.bias_prior_sigma * a.bias_prior_sigma)));
}

void Ufls::add_state(double stamp, const std::vector<RangeMeasurement>& ranges) {
  const VariableKey key = pose_key(next_index_++, stamp);
  if (states_.empty()) {
    const Pose value = offset_estimate_ * (*odometry_.pose_at(stamp));
    graph_.add_variable(key, value);
    graph_.add_factor(make_prior_factor(key, value, initial_pose_covariance(init_)));
    last_frontier_ = stamp;
    std::lock_guard lock(mutex_);
    snapshot_.initialized_at = stamp;
  } else {
    const VariableKey& prev = graph_.values().key(states_.back());
    PreintegratedOdometry m = odometry_.preintegrate(prev.stamp, stamp);
    if (m.gap_bridged) spdlog::warn("ufls: odometry gap bridged before {:.3f}", stamp);
    graph_.add_variable(key, graph_.values().pose(prev) * m.delta);
    graph_.add_factor(std::make_shared<OdometryFactor>(prev, key, std::move(m)));
  }
  states_.push_back(key);
  for (const auto& z : ranges) {
    ensure_bias(z.anchor_id);
    graph_.add_factor(make_range_factor(key, z, anchors_.at(z.anchor_id), config_));
  }
}

bool Ufls::try_initialize(std::vector<RangeMeasurement>& ranges) {
  if (odometry_.empty()) {
    return false;
  }
  if (init_.position) {
    offset_estimate_ = Pose(Rotation::about_z(init_.yaw), *init_.position);
    initialized_ = true;
    return true;
  }
  // Bootstrap: collect ungated ranges until four anchors are heard.
  for (const auto& z : ranges) {
    if (odometry_.covers(z.stamp)) {
      bootstrap_.push_back(z);
    } else if (z.stamp > odometry_.latest_stamp()) {
      deferred_.push_back(z);
    }
  }
  ranges.clear();
  const Rotation yaw = Rotation::about_z(init_.yaw);
  const auto t = multilaterate_offset(bootstrap_, anchors_, odometry_, yaw, config_.lever_arm);
  if (!t) {
    const double horizon = bootstrap_.empty() ? 0.0 : bootstrap_.back().stamp - 5.0;
    std::erase_if(bootstrap_, [&](const RangeMeasurement& z) { return z.stamp < horizon; });
    return false;
  }
  offset_estimate_ = Pose(yaw, *t);
  initialized_ = true;
  spdlog::info("ufls: bootstrapped offset ({:.3f}, {:.3f}, {:.3f}) from {} ranges", t->x(), t->y(),
               t->z(), bootstrap_.size());
  std::lock_guard lock(mutex_);
  snapshot_.valid = true;
  snapshot_.offset = offset_estimate_;
  for (const auto& [id, a] : anchors_) snapshot_.bias[id] = a.bias_prior_mean;
  for (const auto& z : bootstrap_) {
    const Anchor& a = anchors_.at(z.anchor_id);
    const Pose pose = offset_estimate_ * (*odometry_.pose_at(z.stamp));
    const double b = config_.bias_estimation ? a.bias_prior_mean : 0.0;
    const double pred = predicted_range(pose, b, a, config_.lever_arm);
    if (std::abs(z.range - pred) <= config_.gate * config_.startup_gate_factor) {
      ranges.push_back(z);
    } else {
      // Counted as accepted at ingest, before any prediction existed.
      --accepted_;
      ++rejected_;
    }
  }
  bootstrap_.clear();
  return true;
}

void Ufls::marginalize_before(double cutoff) {
  std::vector<VariableKey> drop;
  while (states_.size() > 1 && graph_.values().key(states_.front()).stamp < cutoff) {
    const VariableKey& k = graph_.values().key(states_.front());
    retired_.emplace_back(k.stamp, graph_.values().pose(k));
    drop.push_back(states_.front());
    states_.erase(states_.begin());
  }
  if (drop.empty()) return;
  const double frontier = graph_.values().key(states_.front()).stamp;
  MarginalizeOptions opts;
  if (config_.bias_estimation && config_.bias_walk_sigma > 0.0) {
    const double variance =
        config_.bias_walk_sigma * config_.bias_walk_sigma * (frontier - last_frontier_) / config_.window;
    for (const auto& [id, a] : anchors_) {
      if (graph_.contains(bias_key(id))) opts.process_noise[bias_key(id)] = variance;
    }
  }
  last_frontier_ = frontier;
  marginalize(graph_, drop, opts);
}

std::string Ufls::dump_window() const {
  std::string out;
  for (const auto& [key, value] : graph_.values()) {
    out += to_string(key) + ": ";
    if (const auto* p = std::get_if<Pose>(&value)) {
      const Vector3 t = p->translation();
      out += fmt::format("p=({:.4f}, {:.4f}, {:.4f})", t.x(), t.y(), t.z());
    } else if (const auto* b = std::get_if<double>(&value)) {
      out += fmt::format("b={:.4f}", *b);
    }
    out += "\n";
  }
  for (const auto& f : graph_.factors()) {
    out += fmt::format("{} [{}] cost={:.6g}\n", f->name(), f->keys().size(),
                       0.5 * f->evaluate(graph_.values()).whitened_value().squaredNorm());
  }
  return out;
}

std::optional<UflsEstimate> Ufls::update(double now) {
  std::vector<RangeMeasurement> ranges;
  std::vector<std::pair<OdometrySample, OdometryFrameMode>> odometry;
  {
    std::lock_guard lock(mutex_);
    ranges.swap(pending_ranges_);
    odometry.swap(pending_odometry_);
  }
  for (const auto& [s, mode] : odometry) odometry_.push(s, mode);
  ranges.insert(ranges.begin(), deferred_.begin(), deferred_.end());
  deferred_.clear();

  if (!initialized_ && !try_initialize(ranges)) {
    deferred_.insert(deferred_.end(), ranges.begin(), ranges.end());
    return std::nullopt;
  }

  // Ranges newer than the odometry wait; ranges before it are unusable.
  std::vector<RangeMeasurement> ready;
  const double odom_end = odometry_.latest_stamp();
  for (const auto& z : ranges) {
    if (z.stamp > odom_end + kStampTolerance) {
      deferred_.push_back(z);
    } else if (odometry_.covers(z.stamp)) {
      ready.push_back(z);
    }
  }

  bool created = false;
  const auto last_stamp = [&] { return graph_.values().key(states_.back()).stamp; };
  const auto attach = [&](const VariableKey& key, const RangeMeasurement& z) {
    ensure_bias(z.anchor_id);
    graph_.add_factor(make_range_factor(key, z, anchors_.at(z.anchor_id), config_));
  };
  const auto nearest_state = [&](double stamp) -> std::optional<VariableKey> {
    std::optional<VariableKey> best;
    double best_dt = std::numeric_limits<double>::infinity();
    for (const auto& k : states_) {
      const double dt = std::abs(graph_.values().key(k).stamp - stamp);
      if (dt < best_dt) {
        best_dt = dt;
        best = k;
      }
    }
    return best;
  };

  if (config_.state_policy == StatePolicy::PerRange) {
    for (const auto& cluster : cluster_ranges(ready, config_.cluster_tolerance)) {
      const double t = cluster.front().stamp;
      if (states_.empty() || t > last_stamp() + config_.cluster_tolerance) {
        add_state(t, cluster);
        created = true;
      } else {
        // Late or coincident cluster: attach to the closest state if it is
        // close enough, otherwise it no longer fits the window.
        const auto k = nearest_state(t);
        if (k && std::abs(graph_.values().key(*k).stamp - t) <= config_.cluster_tolerance) {
          for (const auto& z : cluster) attach(*k, z);
        }
      }
    }
  } else {
    const double t = std::min(now, odom_end);
    if (!ready.empty() || states_.empty()) {
      if (states_.empty() || t > last_stamp() + config_.cluster_tolerance) {
        add_state(t, {});
        created = true;
      }
      for (const auto& z : ready) attach(*nearest_state(z.stamp), z);
    }
  }

  if (states_.empty()) return std::nullopt;
  bool dead_reckoning = false;
  if (!created && odom_end - last_stamp() >= 1.0 / config_.update_rate - 1e-9) {
    add_state(odom_end, {});
    dead_reckoning = true;
  }

  marginalize_before(now - config_.window);

  const auto t0 = std::chrono::steady_clock::now();
  const OptimizeSummary summary = optimize(graph_, config_.solver);
  solve_times_.push_back(std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count());
  if (!std::isfinite(summary.final_cost) || summary.final_cost > config_.divergence_cost) {
    throw DivergenceError(
        fmt::format("ufls diverged at t={:.3f}: cost {:.6g}", now, summary.final_cost), dump_window());
  }

  const VariableKey newest = graph_.values().key(states_.back());
  UflsEstimate est;
  est.stamp = newest.stamp;
  est.pose.mean = graph_.values().pose(newest);
  est.matched_odometry = *odometry_.pose_at(newest.stamp);
  est.dead_reckoning = dead_reckoning;
  std::vector<VariableKey> cov_keys{newest};
  for (const auto& [id, a] : anchors_) {
    if (graph_.contains(bias_key(id))) cov_keys.push_back(bias_key(id));
  }
  const auto covs = marginal_covariances(graph_, cov_keys);
  est.pose.cov = covs[0];
  for (std::size_t i = 1; i < cov_keys.size(); ++i) {
    est.biases[static_cast<int>(cov_keys[i].id)] = {graph_.values().scalar(cov_keys[i]),
                                                    std::sqrt(covs[i](0, 0))};
  }
  if (!dead_reckoning) {
    dead_reckoning = std::none_of(graph_.factors().begin(), graph_.factors().end(), [&](const FactorPtr& f) {
      return dynamic_cast<const RangeFactor*>(f.get()) && f->keys().front() == newest;
    });
    est.dead_reckoning = dead_reckoning;
  }

  {
    std::lock_guard lock(mutex_);
    est.rejected_count = rejected_;
    snapshot_.valid = true;
    snapshot_.offset = est.pose.mean * est.matched_odometry.inverse();
    for (const auto& [id, b] : est.biases) snapshot_.bias[id] = b.mean;
  }
  offset_estimate_ = est.pose.mean * est.matched_odometry.inverse();
  odometry_.prune_before(graph_.values().key(states_.front()).stamp);

  for (const auto& cb : subscribers_) cb(est);
  return est;
}

std::vector<std::pair<double, Pose>> Ufls::window_states() const {
  std::vector<std::pair<double, Pose>> out;
  for (const auto& k : states_) {
    out.emplace_back(graph_.values().key(k).stamp, graph_.values().pose(k));
  }
  return out;
}

std::vector<std::pair<double, Pose>> Ufls::lagged_trajectory() const {
  auto out = retired_;
  for (const auto& s : window_states()) out.push_back(s);
  return out;
}

std::map<int, double> Ufls::bias_means() const {
  std::map<int, double> out;
  for (const auto& [id, a] : anchors_) {
    if (graph_.contains(bias_key(id))) out[id] = graph_.values().scalar(bias_key(id));
  }
  return out;
}

OptimizeSummary Ufls::reoptimize(const OptimizerOptions& options) {
  return optimize(graph_, options);
}

}  // namespace raloc
