#pragma once

// Variables, values and the factor interface shared by the factor
// definitions and the least-squares engine.

#include <compare>
#include <cstdint>
#include <map>
#include <memory>
#include <string>
#include <variant>
#include <vector>

#include <Eigen/Core>

#include "raloc/lie.hpp"

namespace raloc {

enum class VariableKind : std::uint8_t { RobotPose, AnchorBias, OffsetState };

/// Identity is (kind, id). `stamp` is informational.
struct VariableKey {
  VariableKind kind = VariableKind::RobotPose;
  std::int64_t id = 0;
  double stamp = 0.0;

  friend bool operator==(const VariableKey& a, const VariableKey& b) {
    return a.kind == b.kind && a.id == b.id;
  }
  friend std::strong_ordering operator<=>(const VariableKey& a, const VariableKey& b) {
    if (auto c = a.kind <=> b.kind; c != 0) return c;
    return a.id <=> b.id;
  }
};

std::string to_string(const VariableKey& key);

inline VariableKey pose_key(std::int64_t index, double stamp = 0.0) {
  return {VariableKind::RobotPose, index, stamp};
}
inline VariableKey bias_key(std::int64_t anchor_id) {
  return {VariableKind::AnchorBias, anchor_id, 0.0};
}
inline VariableKey offset_key(std::int64_t index, double stamp = 0.0) {
  return {VariableKind::OffsetState, index, stamp};
}

/// Pose (6-dof, on-manifold), scalar bias, or (position; velocity).
using Value = std::variant<Pose, double, Vector6>;

int tangent_dim(const Value& value);

/// x (+) delta: right perturbation for poses, addition otherwise.
Value retract(const Value& value, const Eigen::Ref<const Eigen::VectorXd>& delta);

/// x (-) x0 such that retract(x0, local(x0, x)) == x.
Eigen::VectorXd local(const Value& x0, const Value& x);

/// d local(x0, x) / d delta where x <- x (+) delta, evaluated at delta = 0.
Eigen::MatrixXd local_jacobian(const Value& x0, const Value& x);

class Values {
 public:
  void insert(const VariableKey& key, Value value);
  void update(const VariableKey& key, Value value);
  void erase(const VariableKey& key) { values_.erase(key); }
  bool contains(const VariableKey& key) const { return values_.count(key) != 0; }
  std::size_t size() const { return values_.size(); }

  const Value& at(const VariableKey& key) const;
  const Pose& pose(const VariableKey& key) const;
  double scalar(const VariableKey& key) const;
  const Vector6& vector(const VariableKey& key) const;

  /// Stored key (carries the stamp given at insertion).
  const VariableKey& key(const VariableKey& key) const;

  auto begin() const { return values_.begin(); }
  auto end() const { return values_.end(); }

 private:
  std::map<VariableKey, Value> values_;
};

/// Linearized factor error. `value` and `jacobians` are unwhitened;
/// `weight` is the square-root information W with W^T W = cov^-1.
struct Residual {
  Eigen::VectorXd value;
  std::vector<Eigen::MatrixXd> jacobians;
  Eigen::MatrixXd weight;

  Eigen::VectorXd whitened_value() const { return weight * value; }
  Eigen::MatrixXd whitened_jacobian(std::size_t i) const { return weight * jacobians[i]; }
};

class Factor {
 public:
  explicit Factor(std::vector<VariableKey> keys) : keys_(std::move(keys)) {}
  virtual ~Factor() = default;

  const std::vector<VariableKey>& keys() const { return keys_; }
  virtual Residual evaluate(const Values& values) const = 0;
  virtual std::string name() const = 0;

  /// Huber threshold on the whitened residual norm; 0 disables it.
  double huber() const { return huber_; }
  void set_huber(double threshold) { huber_ = threshold; }

 private:
  std::vector<VariableKey> keys_;
  double huber_ = 0.0;
};

using FactorPtr = std::shared_ptr<const Factor>;

}  // namespace raloc
