#include "raloc/wfls.hpp"

#include <algorithm>
#include <cmath>

#include <Eigen/Dense>
#include <fmt/format.h>
#include <spdlog/spdlog.h>

#include "raloc/errors.hpp"

namespace raloc {
namespace {

Eigen::Matrix2d phi2(double dt) {
  Eigen::Matrix2d m;
  m << 1.0, dt, 0.0, 1.0;
  return m;
}

Eigen::Matrix2d q2(double dt) {
  Eigen::Matrix2d m;
  m << dt * dt * dt / 3.0, dt * dt / 2.0, dt * dt / 2.0, dt;
  return m;
}

// Applies a per-axis 2x2 (position, velocity) map to a state.
Vector6 apply_axiswise(const Eigen::Matrix2d& m, const OffsetState& x) {
  Vector6 out;
  out.head<3>() = m(0, 0) * x.position + m(0, 1) * x.velocity;
  out.tail<3>() = m(1, 0) * x.position + m(1, 1) * x.velocity;
  return out;
}

}  // namespace

void WflsConfig::validate() const {
  if (!(window > 0.0)) throw ConfigError("wfls.window: must be positive");
  if (!(update_rate > 0.0)) throw ConfigError("wfls.update_rate: must be positive");
  const Eigen::SelfAdjointEigenSolver<Matrix3> eig(lie::symmetrize(qw));
  if (!qw.allFinite() || eig.eigenvalues().minCoeff() <= 0.0) {
    throw ConfigError("wfls.qw: must be symmetric positive definite");
  }
  if (!(initial_position_sigma > 0.0) || !(initial_velocity_sigma > 0.0)) {
    throw ConfigError("wfls.initial_position_sigma: prior sigmas must be positive");
  }
}

OffsetState gp_interpolate(const OffsetState& a, const OffsetState& b, double t) {
  const double dt = b.stamp - a.stamp;
  if (!(dt > 0.0)) throw OrderingError("gp_interpolate: knots not increasing");
  const double tau = t - a.stamp;
  const Eigen::Matrix2d psi = q2(tau) * phi2(dt - tau).transpose() * q2(dt).inverse();
  const Eigen::Matrix2d lambda = phi2(tau) - psi * phi2(dt);
  return OffsetState::from_vector(t, apply_axiswise(lambda, a) + apply_axiswise(psi, b));
}

OffsetState gp_extrapolate(const OffsetState& x, double t) {
  return OffsetState::from_vector(t, apply_axiswise(phi2(t - x.stamp), x));
}

Wfls::Wfls(WflsConfig config) : config_(std::move(config)) { config_.validate(); }

bool Wfls::has_output() const {
  std::lock_guard lock(mutex_);
  return snapshot_ != nullptr;
}

bool Wfls::ingest_offset(const Vector3& y, const Matrix3& cov, const Rotation& rotation,
                         double stamp) {
  std::lock_guard lock(mutex_);
  if (!(stamp > last_ingested_ + kStampTolerance)) {
    spdlog::warn("wfls: offset stamp {:.9f} not increasing, dropped", stamp);
    return false;
  }
  last_ingested_ = stamp;
  pending_.push_back({y, cov, rotation, stamp});
  return true;
}

WflsOutput Wfls::update(double now) {
  std::vector<Pending> batch;
  {
    std::lock_guard lock(mutex_);
    batch.swap(pending_);
  }
  for (const auto& m : batch) {
    const VariableKey key = offset_key(next_index_++, m.stamp);
    if (states_.empty()) {
      Vector6 x0;
      x0 << m.y, Vector3::Zero();
      graph_.add_variable(key, x0);
      Matrix6 p0 = Matrix6::Zero();
      p0.diagonal().head<3>().setConstant(config_.initial_position_sigma * config_.initial_position_sigma);
      p0.diagonal().tail<3>().setConstant(config_.initial_velocity_sigma * config_.initial_velocity_sigma);
      graph_.add_factor(std::make_shared<OffsetPriorFactor>(key, x0, p0));
    } else {
      const VariableKey& prev = graph_.values().key(states_.back());
      const double dt = m.stamp - prev.stamp;
      graph_.add_variable(key, Vector6(wnoa_transition(dt) * graph_.values().vector(prev)));
      graph_.add_factor(std::make_shared<WnoaFactor>(prev, key, dt, config_.qw));
    }
    graph_.add_factor(std::make_shared<OffsetMeasurementFactor>(key, m.y, m.cov));
    states_.push_back(key);
    latest_rotation_ = m.rotation;
  }
  if (states_.empty()) throw NoEstimateError("wfls: no offset received yet");

  std::vector<VariableKey> drop;
  while (states_.size() > 1 && graph_.values().key(states_.front()).stamp < now - config_.window) {
    drop.push_back(states_.front());
    states_.erase(states_.begin());
  }
  if (!drop.empty()) marginalize(graph_, drop);
  optimize(graph_, config_.solver);

  const VariableKey& newest = graph_.values().key(states_.back());
  WflsOutput out{OffsetState::from_vector(newest.stamp, graph_.values().vector(newest)),
                 latest_rotation_};
  auto snap = std::make_shared<const Snapshot>(Snapshot{out.offset, out.rotation});
  {
    std::lock_guard lock(mutex_);
    snapshot_ = std::move(snap);
  }
  return out;
}

CorrectedPose Wfls::correct(const OdometrySample& odom) const {
  std::shared_ptr<const Snapshot> snap;
  {
    std::lock_guard lock(mutex_);
    snap = snapshot_;
  }
  CorrectedPose out;
  out.stamp = odom.stamp;
  if (!snap) {
    out.pose = odom.pose.mean;
    out.aligned = false;
  } else {
    const OffsetState x = gp_extrapolate(snap->offset, odom.stamp);
    out.offset_position = x.position;
    out.offset_rotation = snap->rotation;
    out.pose = Pose(snap->rotation, x.position) * odom.pose.mean;
    out.aligned = true;
  }
  for (const auto& cb : subscribers_) cb(out);
  return out;
}

std::vector<OffsetState> Wfls::window_states() const {
  std::vector<OffsetState> out;
  for (const auto& k : states_) {
    out.push_back(OffsetState::from_vector(graph_.values().key(k).stamp, graph_.values().vector(k)));
  }
  return out;
}

OffsetState Wfls::query(double t) const {
  const auto states = window_states();
  if (states.empty()) throw NoEstimateError("wfls: no states to query");
  if (t <= states.front().stamp) return gp_extrapolate(states.front(), t);
  for (std::size_t i = 0; i + 1 < states.size(); ++i) {
    if (t <= states[i + 1].stamp) return gp_interpolate(states[i], states[i + 1], t);
  }
  return gp_extrapolate(states.back(), t);
}

}  // namespace raloc
