#include "raloc/graph.hpp"

#include <fmt/format.h>

#include "raloc/errors.hpp"

namespace raloc {

std::string to_string(const VariableKey& key) {
  switch (key.kind) {
    case VariableKind::RobotPose:
      return fmt::format("T{}@{:.3f}", key.id, key.stamp);
    case VariableKind::AnchorBias:
      return fmt::format("b{}", key.id);
    case VariableKind::OffsetState:
      return fmt::format("x{}@{:.3f}", key.id, key.stamp);
  }
  return "?";
}

int tangent_dim(const Value& value) {
  return std::visit(
      [](const auto& v) -> int {
        using T = std::decay_t<decltype(v)>;
        if constexpr (std::is_same_v<T, double>) {
          return 1;
        } else {
          return 6;
        }
      },
      value);
}

Value retract(const Value& value, const Eigen::Ref<const Eigen::VectorXd>& delta) {
  return std::visit(
      [&](const auto& v) -> Value {
        using T = std::decay_t<decltype(v)>;
        if constexpr (std::is_same_v<T, Pose>) {
          return v * lie::exp(delta.head<6>());
        } else if constexpr (std::is_same_v<T, double>) {
          return v + delta[0];
        } else {
          return Vector6(v + delta.head<6>());
        }
      },
      value);
}

Eigen::VectorXd local(const Value& x0, const Value& x) {
  if (x0.index() != x.index()) throw InvalidArgument("local: value kinds differ");
  return std::visit(
      [&](const auto& a) -> Eigen::VectorXd {
        using T = std::decay_t<decltype(a)>;
        const auto& b = std::get<T>(x);
        if constexpr (std::is_same_v<T, Pose>) {
          return lie::log(a.inverse() * b);
        } else if constexpr (std::is_same_v<T, double>) {
          return Eigen::VectorXd::Constant(1, b - a);
        } else {
          return b - a;
        }
      },
      x0);
}

Eigen::MatrixXd local_jacobian(const Value& x0, const Value& x) {
  if (std::holds_alternative<Pose>(x0)) {
    return lie::right_jacobian_inverse(local(x0, x));
  }
  const int n = tangent_dim(x0);
  return Eigen::MatrixXd::Identity(n, n);
}

void Values::insert(const VariableKey& key, Value value) {
  if (!values_.emplace(key, std::move(value)).second) {
    throw InvalidArgument("Values: duplicate key " + to_string(key));
  }
}

void Values::update(const VariableKey& key, Value value) {
  auto it = values_.find(key);
  if (it == values_.end()) throw InvalidArgument("Values: unknown key " + to_string(key));
  if (it->second.index() != value.index()) {
    throw InvalidArgument("Values: kind change for " + to_string(key));
  }
  it->second = std::move(value);
}

const Value& Values::at(const VariableKey& key) const {
  auto it = values_.find(key);
  if (it == values_.end()) throw InvalidArgument("Values: unknown key " + to_string(key));
  return it->second;
}

const VariableKey& Values::key(const VariableKey& key) const {
  auto it = values_.find(key);
  if (it == values_.end()) throw InvalidArgument("Values: unknown key " + to_string(key));
  return it->first;
}

const Pose& Values::pose(const VariableKey& key) const { return std::get<Pose>(at(key)); }
double Values::scalar(const VariableKey& key) const { return std::get<double>(at(key)); }
const Vector6& Values::vector(const VariableKey& key) const { return std::get<Vector6>(at(key)); }

}  // namespace raloc
