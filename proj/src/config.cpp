#include "cablempc/config.hpp"

#include "cablempc/errors.hpp"

#include <yaml-cpp/yaml.h>

#include <cmath>
#include <fstream>
#include <set>
#include <sstream>

namespace cablempc {

namespace {

/// Walks one YAML mapping, remembers which keys were consumed and rejects
/// the rest.
class MapReader {
 public:
  MapReader(const YAML::Node& node, std::string path, const std::string& source)
      : node_(node), path_(std::move(path)), source_(source) {
    if (!node_.IsMap()) fail(node_, "expected a mapping");
  }

  bool has(const std::string& key) const { return static_cast<bool>(node_[key]); }

  template <class T>
  bool get(const std::string& key, T& out) {
    const YAML::Node n = node_[key];
    used_.insert(key);
    if (!n) return false;
    out = convert<T>(n, key);
    return true;
  }

  std::optional<MapReader> child(const std::string& key) {
    used_.insert(key);
    const YAML::Node n = node_[key];
    if (!n) return std::nullopt;
    return MapReader(n, join(key), source_);
  }

  YAML::Node raw(const std::string& key) {
    used_.insert(key);
    return node_[key];
  }

  void finish() const {
    for (const auto& kv : node_) {
      const std::string key = kv.first.as<std::string>();
      if (!used_.count(key)) fail(kv.first, "unknown key '" + join(key) + "'");
    }
  }

  [[noreturn]] void fail(const YAML::Node& n, const std::string& what) const {
    std::ostringstream os;
    os << source_;
    const YAML::Mark m = n.Mark();
    if (m.is_null()) {
      os << " (override)";
    } else {
      os << ':' << m.line + 1 << ':' << m.column + 1;
    }
    os << ": " << (path_.empty() ? "" : path_ + ": ") << what;
    throw Error(ErrorCode::config, os.str());
  }

  std::string join(const std::string& key) const {
    return path_.empty() ? key : path_ + "." + key;
  }

  template <class T>
  T convert(const YAML::Node& n, const std::string& key) const {
    try {
      if constexpr (std::is_same_v<T, Vec3>) {
        const auto v = n.as<std::vector<double>>();
        if (v.size() != 3) fail(n, "'" + key + "' needs 3 numbers");
        return Vec3(v[0], v[1], v[2]);
      } else {
        return n.as<T>();
      }
    } catch (const YAML::Exception&) {
      fail(n, "'" + key + "' has the wrong type");
    }
  }

 private:
  YAML::Node node_;
  std::string path_;
  const std::string& source_;
  std::set<std::string> used_;
};

/// Reads a fixed-size vector; a scalar fills every entry.
template <int N>
bool get_vector(MapReader& r, const std::string& key, Eigen::Matrix<double, N, 1>& out) {
  const YAML::Node n = r.raw(key);
  if (!n) return false;
  if (n.IsScalar()) {
    out.setConstant(r.convert<double>(n, key));
    return true;
  }
  const auto v = r.convert<std::vector<double>>(n, key);
  if (static_cast<int>(v.size()) != N) {
    r.fail(n, "'" + key + "' needs " + std::to_string(N) + " numbers");
  }
  for (int i = 0; i < N; ++i) out(i) = v[i];
  return true;
}

TrajectorySpec read_trajectory(MapReader r) {
  TrajectorySpec spec;
  std::string type = "circle";
  r.get("type", type);
  r.get("yaw", spec.yaw);
  if (type == "circle") {
    CircleTrajectory c;
    r.get("radius", c.radius);
    r.get("period", c.period);
    r.get("height", c.height);
    spec.shape = c;
  } else if (type == "hover") {
    HoverTrajectory h;
    r.get("position", h.position);
    spec.shape = h;
  } else if (type == "polynomial") {
    std::vector<std::vector<double>> waypoints;
    std::vector<double> durations;
    const YAML::Node wn = r.raw("waypoints");
    if (!r.get("waypoints", waypoints) || !r.get("durations", durations)) {
      r.fail(wn, "polynomial trajectories need 'waypoints' and 'durations'");
    }
    std::vector<Vec3> pts;
    for (const auto& w : waypoints) {
      if (w.size() != 3) r.fail(wn, "every waypoint needs 3 numbers");
      pts.emplace_back(w[0], w[1], w[2]);
    }
    const double yaw = spec.yaw;
    try {
      spec = fit_polynomial_segments(pts, durations);
    } catch (const Error& e) {
      r.fail(wn, e.what());
    }
    spec.yaw = yaw;
  } else {
    r.fail(r.raw("type"), "unknown trajectory type '" + type + "'");
  }
  r.finish();
  return spec;
}

void read_params(MapReader r, SystemParams& p) {
  r.get("robot_mass", p.robot_mass);
  r.get("payload_mass", p.payload_mass);
  r.get("cable_length", p.cable_length);
  r.get("gravity", p.gravity);
  r.get("thrust_coefficient", p.thrust_coefficient);
  Vec3 inertia;
  if (get_vector<3>(r, "inertia", inertia)) p.inertia = inertia.asDiagonal();
  r.finish();
}

void read_fov(MapReader r, FovCone& fov) {
  r.get("height", fov.height);
  r.get("radius", fov.radius);
  r.get("camera_position", fov.camera_pos_body);
  const YAML::Node rn = r.raw("camera_rotation");
  if (rn) {
    const auto v = r.convert<std::vector<double>>(rn, "camera_rotation");
    if (v.size() != 9) r.fail(rn, "'camera_rotation' needs 9 numbers (row major)");
    for (int i = 0; i < 9; ++i) fov.camera_rot_body(i / 3, i % 3) = v[i];
  }
  r.finish();
}

void read_ocp(MapReader r, OcpConfig& o) {
  r.get("horizon", o.horizon);
  r.get("step", o.step);
  r.get("substeps", o.substeps);
  get_vector<kStateDim>(r, "state_weights", o.state_weights);
  get_vector<kInputDim>(r, "input_weights", o.input_weights);
  r.get("thrust_min", o.thrust_min);
  r.get("thrust_max", o.thrust_max);
  get_vector<3>(r, "rate_min", o.rate_min);
  get_vector<3>(r, "rate_max", o.rate_max);
  get_vector<3>(r, "accel_min", o.accel_min);
  get_vector<3>(r, "accel_max", o.accel_max);
  r.get("tension_min", o.tension_min);
  r.get("front_margin", o.front_margin);
  r.get("fov_margin", o.fov_margin);
  r.get("fov_lookahead", o.fov_lookahead);
  r.get("fov_constraint", o.fov_constraint);
  r.get("accel_constraint", o.accel_constraint);
  r.get("taut_constraint", o.taut_constraint);
  r.get("soft_penalty", o.soft_penalty);
  r.get("slack_regularization", o.slack_regularization);
  r.get("regularization", o.regularization);
  r.get("qp_max_iterations", o.qp_max_iterations);
  std::string form;
  if (r.get("formulation", form)) {
    if (form == "condensed") {
      o.formulation = OcpFormulation::condensed;
    } else if (form == "sparse") {
      o.formulation = OcpFormulation::sparse;
    } else {
      r.fail(r.raw("formulation"), "formulation must be 'condensed' or 'sparse'");
    }
  }
  r.finish();
}

void read_camera(MapReader r, Mat3& k) {
  r.get("fx", k(0, 0));
  r.get("fy", k(1, 1));
  r.get("cx", k(0, 2));
  r.get("cy", k(1, 2));
  r.finish();
}

void read_noise(MapReader r, NoiseConfig& n) {
  r.get("enabled", n.enabled);
  r.get("pixel_sigma", n.pixel_sigma);
  r.get("position_sigma", n.position_sigma);
  r.get("attitude_sigma", n.attitude_sigma);
  r.get("velocity_sigma", n.velocity_sigma);
  r.get("gyro_sigma", n.gyro_sigma);
  r.get("accel_sigma", n.accel_sigma);
  r.get("motor_sigma", n.motor_sigma);
  Vec6 d;
  if (get_vector<6>(r, "process_cov", d)) n.process_cov = d.asDiagonal();
  if (get_vector<6>(r, "measurement_cov", d)) n.measurement_cov = d.asDiagonal();
  r.finish();
}

SysState read_state(MapReader r) {
  SysState s;
  r.get("payload_pos", s.payload_pos);
  r.get("payload_vel", s.payload_vel);
  r.get("cable_dir", s.cable_dir);
  r.get("cable_rate", s.cable_rate);
  Vec4 q;
  if (get_vector<4>(r, "attitude", q)) s.attitude = quat_from_coeffs(q);
  r.finish();
  return s;
}

void apply_override(YAML::Node& root, const std::string& spec) {
  const auto eq = spec.find('=');
  if (eq == std::string::npos || eq == 0) {
    throw Error(ErrorCode::config, "override '" + spec + "' is not of the form key=value");
  }
  const std::string path = spec.substr(0, eq);
  YAML::Node value;
  try {
    value = YAML::Load(spec.substr(eq + 1));
  } catch (const YAML::Exception& e) {
    throw Error(ErrorCode::config, "override '" + spec + "': " + e.what());
  }
  YAML::Node cur = root;
  std::size_t begin = 0;
  while (true) {
    const auto dot = path.find('.', begin);
    const std::string key = path.substr(begin, dot == std::string::npos ? dot : dot - begin);
    if (key.empty()) throw Error(ErrorCode::config, "override '" + spec + "': empty key");
    if (dot == std::string::npos) {
      cur[key] = value;
      return;
    }
    if (cur[key] && !cur[key].IsMap()) {
      throw Error(ErrorCode::config, "override '" + spec + "': '" + key + "' is not a section");
    }
    YAML::Node next = cur[key];
    cur.reset(next);
    begin = dot + 1;
  }
}

}  // namespace

double RunConfig::effective_transient_skip() const {
  if (transient_skip) return *transient_skip;
  const double period = sim.trajectory.nominal_period();
  return period > 0.0 ? period : 1.0;
}

RunConfig parse_run_config(const std::string& text, const std::vector<std::string>& overrides,
                           const std::string& source) {
  YAML::Node root;
  try {
    root = YAML::Load(text);
  } catch (const YAML::ParserException& e) {
    throw Error(ErrorCode::config, source + ":" + std::to_string(e.mark.line + 1) + ":" +
                                       std::to_string(e.mark.column + 1) + ": " + e.msg);
  }
  if (root.IsNull()) root = YAML::Node(YAML::NodeType::Map);
  for (const auto& o : overrides) apply_override(root, o);

  RunConfig rc;
  SimConfig& sim = rc.sim;
  MapReader r(root, "", source);
  r.get("seed", sim.seed);
  r.get("plant_dt", sim.plant_dt);
  r.get("control_rate", sim.control_rate);
  r.get("camera_rate", sim.camera_rate);
  r.get("rate_loop_tau", sim.rate_loop_tau);
  r.get("velocity_cutoff", sim.velocity_cutoff);
  r.get("innovation_gate", sim.innovation_gate);
  r.get("taut_margin", sim.taut_margin);
  r.get("pose_latency_ticks", sim.pose_latency_ticks);
  r.get("accel_range", sim.accel_range);
  r.get("gyro_range", sim.gyro_range);
  r.get("divergence_limit", sim.divergence_limit);

  if (auto c = r.child("trajectory")) sim.trajectory = read_trajectory(*c);
  if (auto c = r.child("params")) read_params(*c, sim.params);
  if (auto c = r.child("ocp")) read_ocp(*c, sim.ocp);
  if (auto c = r.child("fov")) read_fov(*c, sim.ocp.fov);
  if (auto c = r.child("camera")) read_camera(*c, sim.camera_intrinsics);
  if (auto c = r.child("noise")) read_noise(*c, sim.noise);
  if (auto c = r.child("initial_state")) sim.initial_state = read_state(*c);
  if (auto c = r.child("output")) {
    c->get("dir", rc.out_dir);
    double skip = 0.0;
    if (c->get("transient_skip", skip)) rc.transient_skip = skip;
    c->finish();
  }

  const bool has_duration = r.has("duration");
  const bool has_periods = r.has("periods");
  if (has_duration && has_periods) r.fail(r.raw("periods"), "give either 'duration' or 'periods'");
  if (has_periods) {
    double periods = 0.0;
    r.get("periods", periods);
    const double period = sim.trajectory.nominal_period();
    if (!(period > 0.0)) r.fail(r.raw("periods"), "'periods' needs a periodic trajectory");
    sim.duration = periods * period;
  } else {
    r.get("duration", sim.duration);
  }
  r.finish();

  try {
    sim.validate();
  } catch (const Error& e) {
    throw Error(ErrorCode::config, source + ": " + e.what());
  }
  return rc;
}

RunConfig load_run_config(const std::string& path, const std::vector<std::string>& overrides) {
  std::ifstream f(path);
  if (!f) throw Error(ErrorCode::io, "cannot open config " + path);
  std::stringstream ss;
  ss << f.rdbuf();
  return parse_run_config(ss.str(), overrides, path);
}

}  // namespace cablempc
