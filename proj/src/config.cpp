#include "raloc/config.hpp"

#include <algorithm>
#include <cctype>
#include <cstdlib>
#include <fstream>
#include <set>

#include <fmt/format.h>

#include "raloc/errors.hpp"

extern char** environ;

namespace raloc {
namespace {

using nlohmann::json;

std::string join(const std::string& path, const std::string& key) {
  return path.empty() ? key : path + "." + key;
}

// One JSON object being parsed: rejects unknown keys up front and reports
// type errors with the full field path.
class Section {
 public:
  Section(const json& j, std::string path, std::initializer_list<const char*> allowed)
      : j_(j), path_(std::move(path)) {
    if (!j.is_object()) throw ConfigError(fmt::format("{}: expected an object", name()));
    const std::set<std::string> keys(allowed.begin(), allowed.end());
    for (const auto& [k, v] : j.items()) {
      if (!keys.count(k)) throw ConfigError(fmt::format("{}: unknown key", join(path_, k)));
    }
  }

  bool has(const char* key) const { return j_.contains(key) && !j_.at(key).is_null(); }
  const json& at(const char* key) const { return j_.at(key); }
  std::string path(const char* key) const { return join(path_, key); }

  void number(const char* key, double& out) const {
    if (!has(key)) return;
    if (!at(key).is_number()) throw ConfigError(fmt::format("{}: expected a number", path(key)));
    out = at(key).get<double>();
  }
  void integer(const char* key, int& out) const {
    if (!has(key)) return;
    if (!at(key).is_number_integer()) throw ConfigError(fmt::format("{}: expected an integer", path(key)));
    out = at(key).get<int>();
  }
  void boolean(const char* key, bool& out) const {
    if (!has(key)) return;
    if (!at(key).is_boolean()) throw ConfigError(fmt::format("{}: expected true or false", path(key)));
    out = at(key).get<bool>();
  }
  void vector3(const char* key, Vector3& out) const {
    if (has(key)) out = parse_vector3(at(key), path(key));
  }

  static Vector3 parse_vector3(const json& v, const std::string& path) {
    if (!v.is_array() || v.size() != 3 ||
        !std::all_of(v.begin(), v.end(), [](const json& x) { return x.is_number(); })) {
      throw ConfigError(fmt::format("{}: expected an array of three numbers", path));
    }
    return Vector3(v[0].get<double>(), v[1].get<double>(), v[2].get<double>());
  }

 private:
  std::string name() const { return path_.empty() ? "config" : path_; }

  const json& j_;
  std::string path_;
};

json vec(const Vector3& v) { return json::array({v.x(), v.y(), v.z()}); }

std::vector<Anchor> parse_anchors(const json& j, const std::string& path) {
  if (!j.is_array() || j.empty()) throw ConfigError(fmt::format("{}: expected a non-empty array", path));
  std::vector<Anchor> out;
  std::set<int> ids;
  for (std::size_t i = 0; i < j.size(); ++i) {
    const std::string p = fmt::format("{}[{}]", path, i);
    const Section s(j[i], p, {"id", "position", "bias_prior_mean", "bias_prior_sigma"});
    if (!s.has("id")) throw ConfigError(fmt::format("{}.id: required", p));
    if (!s.has("position")) throw ConfigError(fmt::format("{}.position: required", p));
    Anchor a;
    s.integer("id", a.id);
    s.vector3("position", a.position);
    s.number("bias_prior_mean", a.bias_prior_mean);
    s.number("bias_prior_sigma", a.bias_prior_sigma);
    if (!(a.bias_prior_sigma > 0.0)) throw ConfigError(fmt::format("{}.bias_prior_sigma: must be positive", p));
    if (!ids.insert(a.id).second) throw ConfigError(fmt::format("{}.id: duplicate id {}", p, a.id));
    out.push_back(a);
  }
  return out;
}

json anchors_json(const std::vector<Anchor>& anchors) {
  json out = json::array();
  for (const auto& a : anchors) {
    out.push_back({{"id", a.id},
                   {"position", vec(a.position)},
                   {"bias_prior_mean", a.bias_prior_mean},
                   {"bias_prior_sigma", a.bias_prior_sigma}});
  }
  return out;
}

Matrix3 parse_qw(const json& v, const std::string& path) {
  if (v.is_number()) return Matrix3::Identity() * v.get<double>();
  if (v.is_array() && v.size() == 3 && v[0].is_number()) return Section::parse_vector3(v, path).asDiagonal();
  if (v.is_array() && v.size() == 3) {
    Matrix3 m;
    for (int r = 0; r < 3; ++r) m.row(r) = Section::parse_vector3(v[r], fmt::format("{}[{}]", path, r));
    return m;
  }
  throw ConfigError(fmt::format("{}: expected a number, a diagonal [3] or a 3x3 matrix", path));
}

std::string state_policy_name(StatePolicy p) { return p == StatePolicy::PerRange ? "per-range" : "per-tick"; }

void set_path(json& root, const std::vector<std::string>& segments, const json& value,
              const std::string& name) {
  json* node = &root;
  for (std::size_t i = 0; i < segments.size(); ++i) {
    const std::string& seg = segments[i];
    const bool last = i + 1 == segments.size();
    const bool index = !seg.empty() && std::all_of(seg.begin(), seg.end(), ::isdigit);
    if (index && node->is_array()) {
      const auto k = std::stoul(seg);
      if (k >= node->size()) throw ConfigError(fmt::format("{}: index {} out of range", name, k));
      node = &(*node)[k];
    } else {
      if (node->is_null()) *node = json::object();
      if (!node->is_object()) throw ConfigError(fmt::format("{}: '{}' is not an object", name, seg));
      node = &(*node)[seg];
    }
    if (last) *node = value;
  }
}

}  // namespace

json load_json_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError(fmt::format("cannot open '{}'", path.string()));
  try {
    return json::parse(in, nullptr, true, /*ignore_comments=*/true);
  } catch (const json::parse_error& e) {
    throw ConfigError(fmt::format("{}: {}", path.string(), e.what()));
  }
}

void apply_overrides(json& config, const std::string& prefix,
                     const std::vector<std::pair<std::string, std::string>>& variables) {
  auto sorted = variables;
  std::sort(sorted.begin(), sorted.end());
  for (const auto& [name, raw] : sorted) {
    if (name.rfind(prefix, 0) != 0 || name.size() == prefix.size()) continue;
    std::vector<std::string> segments;
    std::string rest = name.substr(prefix.size());
    std::size_t pos = 0;
    while (true) {
      const auto next = rest.find("__", pos);
      std::string seg = rest.substr(pos, next == std::string::npos ? std::string::npos : next - pos);
      std::transform(seg.begin(), seg.end(), seg.begin(), [](unsigned char c) { return std::tolower(c); });
      if (seg.empty()) throw ConfigError(fmt::format("{}: empty path segment", name));
      segments.push_back(seg);
      if (next == std::string::npos) break;
      pos = next + 2;
    }
    json value;
    try {
      value = json::parse(raw);
    } catch (const json::parse_error&) {
      value = raw;
    }
    set_path(config, segments, value, name);
  }
}

void apply_env_overrides(json& config, const std::string& prefix) {
  std::vector<std::pair<std::string, std::string>> vars;
  for (char** e = environ; e && *e; ++e) {
    const std::string entry(*e);
    const auto eq = entry.find('=');
    if (eq == std::string::npos) continue;
    vars.emplace_back(entry.substr(0, eq), entry.substr(eq + 1));
  }
  apply_overrides(config, prefix, vars);
}

EstimatorConfig parse_estimator_config(const json& j) {
  const Section root(j, "", {"anchors", "lever_arm", "ufls", "wfls", "init", "odometry"});
  EstimatorConfig c;
  if (!root.has("anchors")) throw ConfigError("anchors: required");
  c.anchors = parse_anchors(root.at("anchors"), "anchors");
  auto& p = c.pipeline;
  root.vector3("lever_arm", p.ufls.lever_arm.offset);

  if (root.has("ufls")) {
    const Section s(root.at("ufls"), "ufls",
                    {"window", "update_rate", "gate", "range_sigma", "bias_walk_sigma", "bias_estimation",
                     "state_policy", "cluster_tolerance", "startup_gate_factor", "huber", "divergence_cost",
                     "max_iterations"});
    s.number("window", p.ufls.window);
    s.number("update_rate", p.ufls.update_rate);
    s.number("gate", p.ufls.gate);
    s.number("range_sigma", p.ufls.range_sigma);
    s.number("bias_walk_sigma", p.ufls.bias_walk_sigma);
    s.boolean("bias_estimation", p.ufls.bias_estimation);
    if (s.has("state_policy")) {
      const json& v = s.at("state_policy");
      if (v == "per-range") {
        p.ufls.state_policy = StatePolicy::PerRange;
      } else if (v == "per-tick") {
        p.ufls.state_policy = StatePolicy::PerTick;
      } else {
        throw ConfigError("ufls.state_policy: expected \"per-range\" or \"per-tick\"");
      }
    }
    s.number("cluster_tolerance", p.ufls.cluster_tolerance);
    s.number("startup_gate_factor", p.ufls.startup_gate_factor);
    s.number("huber", p.ufls.huber);
    s.number("divergence_cost", p.ufls.divergence_cost);
    s.integer("max_iterations", p.ufls.solver.max_iters);
  }
  if (root.has("wfls")) {
    const Section s(root.at("wfls"), "wfls",
                    {"window", "update_rate", "qw", "initial_position_sigma", "initial_velocity_sigma",
                     "max_iterations"});
    s.number("window", p.wfls.window);
    s.number("update_rate", p.wfls.update_rate);
    if (s.has("qw")) p.wfls.qw = parse_qw(s.at("qw"), "wfls.qw");
    s.number("initial_position_sigma", p.wfls.initial_position_sigma);
    s.number("initial_velocity_sigma", p.wfls.initial_velocity_sigma);
    s.integer("max_iterations", p.wfls.solver.max_iters);
  }
  if (root.has("init")) {
    const Section s(root.at("init"), "init", {"position", "yaw", "sigma_position", "sigma_rotation"});
    if (s.has("position")) p.init.position = Section::parse_vector3(s.at("position"), "init.position");
    s.number("yaw", p.init.yaw);
    s.number("sigma_position", p.init.sigma_position);
    s.number("sigma_rotation", p.init.sigma_rotation);
    if (!(p.init.sigma_position > 0.0) || !(p.init.sigma_rotation > 0.0)) {
      throw ConfigError("init.sigma_position: prior sigmas must be positive");
    }
  }
  if (root.has("odometry")) {
    const Section s(root.at("odometry"), "odometry",
                    {"translation_density", "rotation_density", "max_gap"});
    s.number("translation_density", p.odom_translation_density);
    s.number("rotation_density", p.odom_rotation_density);
    s.number("max_gap", p.ufls.odometry.max_gap);
    if (!(p.odom_translation_density > 0.0) || !(p.odom_rotation_density > 0.0)) {
      throw ConfigError("odometry.translation_density: densities must be positive");
    }
  }
  p.ufls.validate();
  p.wfls.validate();
  return c;
}

json to_json(const EstimatorConfig& c) {
  const auto& p = c.pipeline;
  json qw = json::array();
  for (int r = 0; r < 3; ++r) qw.push_back(vec(p.wfls.qw.row(r).transpose()));
  json init = {{"yaw", p.init.yaw},
               {"sigma_position", p.init.sigma_position},
               {"sigma_rotation", p.init.sigma_rotation}};
  if (p.init.position) init["position"] = vec(*p.init.position);
  return {
      {"anchors", anchors_json(c.anchors)},
      {"lever_arm", vec(p.ufls.lever_arm.offset)},
      {"ufls",
       {{"window", p.ufls.window},
        {"update_rate", p.ufls.update_rate},
        {"gate", p.ufls.gate},
        {"range_sigma", p.ufls.range_sigma},
        {"bias_walk_sigma", p.ufls.bias_walk_sigma},
        {"bias_estimation", p.ufls.bias_estimation},
        {"state_policy", state_policy_name(p.ufls.state_policy)},
        {"cluster_tolerance", p.ufls.cluster_tolerance},
        {"startup_gate_factor", p.ufls.startup_gate_factor},
        {"huber", p.ufls.huber},
        {"divergence_cost", p.ufls.divergence_cost},
        {"max_iterations", p.ufls.solver.max_iters}}},
      {"wfls",
       {{"window", p.wfls.window},
        {"update_rate", p.wfls.update_rate},
        {"qw", qw},
        {"initial_position_sigma", p.wfls.initial_position_sigma},
        {"initial_velocity_sigma", p.wfls.initial_velocity_sigma},
        {"max_iterations", p.wfls.solver.max_iters}}},
      {"init", init},
      {"odometry",
       {{"translation_density", p.odom_translation_density},
        {"rotation_density", p.odom_rotation_density},
        {"max_gap", p.ufls.odometry.max_gap}}},
  };
}

Scenario parse_scenario(const json& j) {
  const Section root(j, "", {"preset", "seed", "anchors", "waypoints", "speed", "closed", "duration",
                             "range_rate", "odom_rate", "range_sigma", "odom_noise", "drift", "bias_map",
                             "nlos", "lever_arm"});
  Scenario sc;
  if (root.has("preset")) {
    if (!root.at("preset").is_string()) throw ConfigError("preset: expected a string");
    sc = preset(root.at("preset").get<std::string>());
  } else {
    if (!root.has("anchors")) throw ConfigError("anchors: required (or give a preset)");
    if (!root.has("waypoints")) throw ConfigError("waypoints: required (or give a preset)");
  }
  if (root.has("seed")) {
    if (!root.at("seed").is_number_unsigned()) throw ConfigError("seed: expected a non-negative integer");
    sc.seed = root.at("seed").get<std::uint64_t>();
  }
  if (root.has("anchors")) sc.anchors = parse_anchors(root.at("anchors"), "anchors");
  if (root.has("waypoints")) {
    const json& w = root.at("waypoints");
    if (!w.is_array()) throw ConfigError("waypoints: expected an array");
    sc.waypoints.clear();
    for (std::size_t i = 0; i < w.size(); ++i) {
      sc.waypoints.push_back(Section::parse_vector3(w[i], fmt::format("waypoints[{}]", i)));
    }
  }
  root.number("speed", sc.speed);
  root.boolean("closed", sc.closed);
  root.number("duration", sc.duration);
  root.number("range_rate", sc.range_rate);
  root.number("odom_rate", sc.odom_rate);
  root.number("range_sigma", sc.range_sigma);
  root.vector3("lever_arm", sc.lever_arm.offset);
  if (root.has("odom_noise")) {
    const Section s(root.at("odom_noise"), "odom_noise",
                    {"translation_density", "rotation_density", "floor_density"});
    s.number("translation_density", sc.odom_noise.translation_density);
    s.number("rotation_density", sc.odom_noise.rotation_density);
    s.number("floor_density", sc.odom_noise.floor_density);
  }
  if (root.has("drift")) {
    const Section s(root.at("drift"), "drift", {"velocity", "yaw_rate", "yaw_walk"});
    s.vector3("velocity", sc.drift.velocity);
    s.number("yaw_rate", sc.drift.yaw_rate);
    s.number("yaw_walk", sc.drift.yaw_walk);
  }
  if (root.has("bias_map")) {
    const json& b = root.at("bias_map");
    if (!b.is_object()) throw ConfigError("bias_map: expected an object of anchor id -> meters");
    sc.bias_map.clear();
    for (const auto& [k, v] : b.items()) {
      int id = 0;
      try {
        std::size_t used = 0;
        id = std::stoi(k, &used);
        if (used != k.size()) throw std::invalid_argument(k);
      } catch (const std::exception&) {
        throw ConfigError(fmt::format("bias_map.{}: key must be an anchor id", k));
      }
      if (!v.is_number()) throw ConfigError(fmt::format("bias_map.{}: expected a number", k));
      sc.bias_map[id] = v.get<double>();
    }
  }
  if (root.has("nlos")) {
    const Section s(root.at("nlos"), "nlos", {"fraction", "magnitude"});
    s.number("fraction", sc.nlos.fraction);
    s.number("magnitude", sc.nlos.magnitude);
  }
  sc.validate();
  return sc;
}

json to_json(const Scenario& sc) {
  json waypoints = json::array();
  for (const auto& w : sc.waypoints) waypoints.push_back(vec(w));
  json biases = json::object();
  for (const auto& [id, b] : sc.bias_map) biases[std::to_string(id)] = b;
  return {
      {"seed", sc.seed},
      {"anchors", anchors_json(sc.anchors)},
      {"waypoints", waypoints},
      {"speed", sc.speed},
      {"closed", sc.closed},
      {"duration", sc.duration},
      {"range_rate", sc.range_rate},
      {"odom_rate", sc.odom_rate},
      {"range_sigma", sc.range_sigma},
      {"odom_noise",
       {{"translation_density", sc.odom_noise.translation_density},
        {"rotation_density", sc.odom_noise.rotation_density},
        {"floor_density", sc.odom_noise.floor_density}}},
      {"drift", {{"velocity", vec(sc.drift.velocity)}, {"yaw_rate", sc.drift.yaw_rate}, {"yaw_walk", sc.drift.yaw_walk}}},
      {"bias_map", biases},
      {"nlos", {{"fraction", sc.nlos.fraction}, {"magnitude", sc.nlos.magnitude}}},
      {"lever_arm", vec(sc.lever_arm.offset)},
  };
}

}  // namespace raloc
