#include "cablempc/simulator.hpp"

#include "cablempc/dynamics.hpp"
#include "cablempc/errors.hpp"

#include <array>
#include <charconv>
#include <chrono>
#include <cmath>
#include <deque>
#include <fstream>
#include <numbers>
#include <sstream>

namespace cablempc {

namespace {

void require(bool ok, const std::string& what) {
  if (!ok) throw Error(ErrorCode::invalid_argument, what);
}

/// Small rotation exp(delta) applied on the right.
Quat perturb(const Quat& q, const Vec3& delta) {
  const double angle = delta.norm();
  if (angle == 0.0) return q;
  return (q * Quat(Eigen::AngleAxisd(angle, delta / angle))).normalized();
}

SysState initial_hover(const SimConfig& cfg) {
  SysState s;
  s.payload_pos = sample_flat(cfg.trajectory, 0.0).position();
  s.attitude = Quat(Eigen::AngleAxisd(cfg.trajectory.yaw, Vec3::UnitZ()));
  return s;
}

}  // namespace

CameraModel SimConfig::camera() const {
  CameraModel cam;
  cam.intrinsics = camera_intrinsics;
  cam.cone = ocp.fov;
  cam.rate = camera_rate;
  return cam;
}

int SimConfig::control_divider() const {
  return static_cast<int>(std::lround(1.0 / (control_rate * plant_dt)));
}

void SimConfig::validate() const {
  require(duration > 0.0 && std::isfinite(duration), "sim: duration must be positive");
  require(plant_dt > 0.0, "sim: plant_dt must be positive");
  require(control_rate > 0.0, "sim: control_rate must be positive");
  const double ratio = 1.0 / (control_rate * plant_dt);
  require(ratio >= 1.0 - 1e-9 && std::abs(ratio - std::round(ratio)) < 1e-9,
          "sim: control period must be a whole number of plant steps");
  require(camera_rate > 0.0 && camera_rate <= control_rate,
          "sim: camera_rate must be positive and not exceed control_rate");
  require(rate_loop_tau >= 0.0, "sim: rate_loop_tau must be non-negative");
  require(velocity_cutoff > 0.0, "sim: velocity_cutoff must be positive");
  require(pose_latency_ticks >= 0, "sim: pose_latency_ticks must be non-negative");
  require(accel_range > 0.0 && gyro_range > 0.0, "sim: sensor ranges must be positive");
  require(divergence_limit > 0.0, "sim: divergence_limit must be positive");
  params.validate();
  ocp.validate();
  noise.validate();
  trajectory.validate();
  camera().validate();
}

std::optional<TagMeasurement> render_tag(const SysState& truth, const SystemParams& p,
                                         const CameraModel& cam, CounterRng& rng,
                                         double pixel_sigma, double t) {
  if (!(fov_residual(truth, p, cam.cone) <= 0.0)) return std::nullopt;
  const Mat3 rot = quat_to_rotation(truth.attitude);
  const Vec3 body = rot.transpose() * (p.cable_length * truth.cable_dir);
  const Vec3 pc = cam.rotation_body().transpose() * (body - cam.position_body());
  if (pc.z() <= 0.0) return std::nullopt;
  const Eigen::Vector2d px = project(pc, cam);
  TagMeasurement m;
  m.u = px.x() + (pixel_sigma > 0.0 ? rng.gaussian(pixel_sigma) : 0.0);
  m.v = px.y() + (pixel_sigma > 0.0 ? rng.gaussian(pixel_sigma) : 0.0);
  m.t = t;
  return m;
}

ImuSample simulate_imu(const SysState& truth, const ControlInput& applied, const SystemParams& p,
                       CounterRng& accel_rng, CounterRng& gyro_rng, double accel_sigma,
                       double gyro_sigma, double accel_range, double gyro_range) {
  const Vec3 acc = robot_acceleration(truth.to_vector(), applied.to_vector(), p);
  const Mat3 rot = quat_to_rotation(truth.attitude);
  Vec3 specific = rot.transpose() * (acc + p.gravity * Vec3::UnitZ());
  Vec3 gyro = applied.body_rate;

  ImuSample s;
  for (int i = 0; i < 3; ++i) {
    if (std::abs(specific(i)) > accel_range || std::abs(gyro(i)) > gyro_range) s.clipped = true;
    specific(i) = std::clamp(specific(i), -accel_range, accel_range);
    gyro(i) = std::clamp(gyro(i), -gyro_range, gyro_range);
  }
  for (int i = 0; i < 3; ++i) {
    s.accel(i) = specific(i) + accel_rng.gaussian(accel_sigma);
    s.gyro(i) = gyro(i) + gyro_rng.gaussian(gyro_sigma);
  }
  return s;
}

Vec3 step_rate_loop(const Vec3& commanded, const Vec3& actual, double tau, double dt) {
  if (tau <= 0.0) return commanded;
  const double alpha = 1.0 - std::exp(-dt / tau);
  return actual + alpha * (commanded - actual);
}

SimLog run_closed_loop(const SimConfig& cfg) {
  cfg.validate();
  const SystemParams& p = cfg.params;
  const NoiseConfig& nc = cfg.noise;
  const CameraModel cam = cfg.camera();
  const int divider = cfg.control_divider();
  const double control_dt = divider * cfg.plant_dt;
  const auto ticks = static_cast<long>(std::llround(cfg.duration / cfg.plant_dt));
  const double frame_period = 1.0 / cfg.camera_rate;

  auto sigma = [&](double s) { return nc.enabled ? s : 0.0; };

  CounterRng pixel_rng(cfg.seed, NoiseStream::pixel);
  CounterRng pose_rng(cfg.seed, NoiseStream::pose);
  CounterRng gyro_rng(cfg.seed, NoiseStream::gyro);
  CounterRng accel_rng(cfg.seed, NoiseStream::accel);
  CounterRng motor_rng(cfg.seed, NoiseStream::motor);

  SimLog log;
  log.control_period = control_dt;
  log.trajectory_period = cfg.trajectory.nominal_period();
  log.seed = cfg.seed;
  if (const auto* c = std::get_if<CircleTrajectory>(&cfg.trajectory.shape)) {
    log.nominal_speed = 2.0 * std::numbers::pi * c->radius / c->period;
  }

  SysState truth = cfg.initial_state ? *cfg.initial_state : initial_hover(cfg);
  {
    StateVector x = truth.to_vector();
    project_to_manifold(x);
    truth = SysState::from_vector(x);
  }

  PcmpcController controller(cfg.ocp, p);
  AttachPointTracker tracker(cfg.velocity_cutoff);
  CableBelief belief;
  belief.cable_dir = truth.cable_dir;
  belief.cable_rate = truth.cable_rate;
  belief.covariance = Mat6::Identity() * 1e-3;

  ControlInput command{p.hover_thrust(), Vec3::Zero()};
  Vec3 applied_rate = Vec3::Zero();
  std::deque<SysState> pose_history;
  double next_frame = 0.0;
  bool first_tick = true;

  for (long tick = 0; tick < ticks; ++tick) {
    const double t = tick * cfg.plant_dt;
    const ControlInput applied{command.thrust, applied_rate};

    if (tick % divider == 0) {
      LogRow row;
      row.t = t;
      row.truth = truth;

      // Pose surrogate, optionally delayed.
      pose_history.push_back(truth);
      while (static_cast<int>(pose_history.size()) > cfg.pose_latency_ticks + 1) {
        pose_history.pop_front();
      }
      const SysState& seen = pose_history.front();
      Vec3 robot_pos = quadrotor_position(seen, p);
      Vec3 robot_vel = quadrotor_velocity(seen, p);
      for (int i = 0; i < 3; ++i) robot_pos(i) += pose_rng.gaussian(sigma(nc.position_sigma));
      for (int i = 0; i < 3; ++i) robot_vel(i) += pose_rng.gaussian(sigma(nc.velocity_sigma));
      Vec3 delta;
      for (int i = 0; i < 3; ++i) delta(i) = pose_rng.gaussian(sigma(nc.attitude_sigma));
      const Quat attitude = perturb(seen.attitude, delta);
      const Mat3 rot = quat_to_rotation(attitude);

      const ImuSample imu =
          simulate_imu(truth, applied, p, accel_rng, gyro_rng, sigma(nc.accel_sigma),
                       sigma(nc.gyro_sigma), cfg.accel_range, cfg.gyro_range);
      row.imu_clipped = imu.clipped;

      // Motor speeds of four identical rotors sharing the applied thrust.
      std::array<double, 4> motors{};
      const double nominal = std::sqrt(std::max(applied.thrust, 0.0) / (4.0 * p.thrust_coefficient));
      for (double& w : motors) w = nominal * (1.0 + motor_rng.gaussian(sigma(nc.motor_sigma)));

      if (!first_tick) {
        belief = ekf_predict(belief, thrust_input(motors, attitude, p), control_dt, p, nc);
      }

      if (t + 1e-9 >= next_frame) {
        next_frame += frame_period;
        row.frame = true;
        if (auto meas = render_tag(truth, p, cam, pixel_rng, sigma(nc.pixel_sigma), t)) {
          row.detected = true;
          row.tag_u = meas->u;
          row.tag_v = meas->v;
          try {
            const Vec3 bearing = backproject(*meas, cam);
            const double depth = solve_depth(bearing, cam, p.cable_length);
            const auto sample = tracker.update(attach_point_body(bearing, depth, cam), t);
            const UpdateResult up = ekf_update(belief, sample.position, sample.velocity, rot,
                                               imu.gyro, p, nc, cfg.innovation_gate);
            belief = up.belief;
            row.ekf_accepted = up.accepted;
          } catch (const Error& e) {
            if (e.code() != ErrorCode::geometry_inconsistent) throw;
          }
        }
      }
      row.tag_visible = fov_residual(truth, p, cam.cone) <= 0.0;

      const PayloadEstimate payload = payload_state(robot_pos, robot_vel, belief, p);
      SysState est;
      est.payload_pos = payload.position;
      est.payload_vel = payload.velocity;
      est.cable_dir = belief.cable_dir;
      est.cable_rate = belief.cable_rate;
      est.attitude = attitude;
      row.estimate = est;

      const ReferenceWindow ref = make_reference_window(cfg.trajectory, t, cfg.ocp, p,
                                                        cfg.taut_margin);
      row.reference = ref.states.front();
      const auto start = std::chrono::steady_clock::now();
      try {
        const OcpSolution& sol = controller.update(est, ref, control_dt);
        command = sol.inputs.front();
        row.qp_iterations = sol.qp_iterations;
        row.kkt_residual = sol.kkt_residual;
        row.max_slack = sol.max_slack;
      } catch (const SolverFailure& e) {
        row.solver_ok = false;
        ++log.solver_failures;
      }
      log.solve_times.push_back(
          std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count());
      row.command = command;
      log.rows.push_back(row);
      first_tick = false;
    }

    applied_rate = step_rate_loop(command.body_rate, applied_rate, cfg.rate_loop_tau, cfg.plant_dt);
    try {
      truth = integrate_step(truth, {command.thrust, applied_rate}, p, cfg.plant_dt);
    } catch (const Error& e) {
      log.aborted = true;
      log.diagnostic = std::string("plant integration failed at t=") + std::to_string(t) + ": " +
                       e.what();
      break;
    }
    if (!(truth.payload_pos.norm() <= cfg.divergence_limit)) {
      log.aborted = true;
      log.diagnostic = "payload left the " + std::to_string(cfg.divergence_limit) +
                       " m ball at t=" + std::to_string(t + cfg.plant_dt);
      break;
    }
  }
  return log;
}

double pendulum_energy(const Vec3& xi, const Vec3& xi_dot, const SystemParams& p) {
  const double l = p.cable_length;
  return 0.5 * p.payload_mass * l * l * xi_dot.squaredNorm() +
         p.payload_mass * p.gravity * l * xi.z();
}

PendulumTrace run_pendulum(const Vec3& xi0, const Vec3& xi_dot0, const SystemParams& p,
                           double duration, double dt) {
  require(dt > 0.0 && duration > 0.0, "pendulum: dt and duration must be positive");
  using Vec6d = Eigen::Matrix<double, 6, 1>;
  const double g_over_l = p.gravity / p.cable_length;
  auto f = [&](const Vec6d& x) {
    const Vec3 xi = x.head<3>();
    const Vec3 xd = x.tail<3>();
    Vec6d d;
    d.head<3>() = xd;
    d.tail<3>() = -g_over_l * (Vec3::UnitZ() - xi * xi.z()) - xd.squaredNorm() * xi;
    return d;
  };
  Vec6d x;
  x << xi0.normalized(), xi_dot0;
  x.tail<3>() -= x.head<3>() * x.head<3>().dot(x.tail<3>());

  PendulumTrace tr;
  const auto steps = static_cast<long>(std::llround(duration / dt));
  for (long k = 0; k <= steps; ++k) {
    tr.t.push_back(k * dt);
    tr.energy.push_back(pendulum_energy(x.head<3>(), x.tail<3>(), p));
    tr.cable_dir.push_back(x.head<3>());
    if (k == steps) break;
    const Vec6d k1 = f(x);
    const Vec6d k2 = f(x + 0.5 * dt * k1);
    const Vec6d k3 = f(x + 0.5 * dt * k2);
    const Vec6d k4 = f(x + dt * k3);
    x += dt / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
    x.head<3>().normalize();
    x.tail<3>() -= x.head<3>() * x.head<3>().dot(x.tail<3>());
  }
  return tr;
}

// ---- CSV log -------------------------------------------------------------

namespace {

constexpr std::array<const char*, 16> kStateCols = {
    "px", "py", "pz", "vx", "vy", "vz", "xix", "xiy", "xiz",
    "xidx", "xidy", "xidz", "qw", "qx", "qy", "qz"};
constexpr std::array<const char*, 15> kTailCols = {
    "cmd_f", "cmd_wx", "cmd_wy", "cmd_wz", "tag_visible", "frame", "detected", "tag_u",
    "tag_v", "ekf_accepted", "solver_ok", "qp_iterations", "kkt_residual", "max_slack",
    "imu_clipped"};
constexpr int kColumns = 1 + 3 * 16 + 15;

std::string header_row() {
  std::string h = "t";
  for (const char* prefix : {"true_", "est_", "ref_"}) {
    for (const char* c : kStateCols) h += std::string(",") + prefix + c;
  }
  for (const char* c : kTailCols) h += std::string(",") + c;
  return h;
}

/// Shortest representation that parses back to the same double.
void put(std::string& out, double v) {
  char buf[32];
  const auto res = std::to_chars(buf, buf + sizeof(buf), v);
  out.append(buf, res.ptr);
}

}  // namespace

void write_log_csv(const SimLog& log, std::ostream& os, double transient_skip) {
  os << "# cablempc log schema=" << kLogSchemaVersion << '\n';
  std::string meta;
  meta += "# control_period=";
  put(meta, log.control_period);
  meta += "\n# trajectory_period=";
  put(meta, log.trajectory_period);
  if (log.nominal_speed) {
    meta += "\n# nominal_speed=";
    put(meta, *log.nominal_speed);
  }
  meta += "\n# transient_skip=";
  put(meta, transient_skip);
  meta += "\n# seed=" + std::to_string(log.seed);
  meta += "\n# aborted=" + std::to_string(log.aborted ? 1 : 0);
  meta += "\n# diagnostic=" + log.diagnostic + "\n";
  os << meta << header_row() << '\n';

  std::string line;
  for (const LogRow& r : log.rows) {
    line.clear();
    put(line, r.t);
    for (const SysState* s : {&r.truth, &r.estimate, &r.reference}) {
      const StateVector x = s->to_vector();
      for (int i = 0; i < kStateDim; ++i) {
        line += ',';
        put(line, x(i));
      }
    }
    const InputVector u = r.command.to_vector();
    for (int i = 0; i < kInputDim; ++i) {
      line += ',';
      put(line, u(i));
    }
    for (double v : {double(r.tag_visible), double(r.frame), double(r.detected), r.tag_u, r.tag_v,
                     double(r.ekf_accepted), double(r.solver_ok), double(r.qp_iterations),
                     r.kkt_residual, r.max_slack, double(r.imu_clipped)}) {
      line += ',';
      put(line, v);
    }
    os << line << '\n';
  }
}

void write_log_csv(const SimLog& log, const std::string& path, double transient_skip) {
  std::ofstream f(path);
  if (!f) throw Error(ErrorCode::io, "cannot open " + path + " for writing");
  write_log_csv(log, f, transient_skip);
  if (!f) throw Error(ErrorCode::io, "failed writing " + path);
}

ParsedLog read_log_csv(std::istream& is) {
  ParsedLog out;
  SimLog& log = out.log;
  std::string line;
  long line_no = 0;
  bool schema_seen = false;
  bool header_seen = false;

  auto parse_error = [&](const std::string& what) {
    return Error(ErrorCode::parse, "log line " + std::to_string(line_no) + ": " + what);
  };
  auto to_double = [&](std::string_view s) {
    double v = 0.0;
    const auto res = std::from_chars(s.data(), s.data() + s.size(), v);
    if (res.ec != std::errc() || res.ptr != s.data() + s.size()) {
      throw parse_error("bad number '" + std::string(s) + "'");
    }
    return v;
  };

  while (std::getline(is, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    if (line[0] == '#') {
      const std::string body = line.substr(1);
      const auto eq = body.find('=');
      if (eq == std::string::npos) continue;
      std::string key = body.substr(0, eq);
      const std::string value = body.substr(eq + 1);
      key.erase(0, key.find_first_not_of(' '));
      if (key == "cablempc log schema") {
        if (value != std::to_string(kLogSchemaVersion)) {
          throw parse_error("unsupported schema version " + value);
        }
        schema_seen = true;
      } else if (key == "control_period") {
        log.control_period = to_double(value);
      } else if (key == "trajectory_period") {
        log.trajectory_period = to_double(value);
      } else if (key == "nominal_speed") {
        log.nominal_speed = to_double(value);
      } else if (key == "transient_skip") {
        out.transient_skip = to_double(value);
      } else if (key == "seed") {
        log.seed = std::stoull(value);
      } else if (key == "aborted") {
        log.aborted = value == "1";
      } else if (key == "diagnostic") {
        log.diagnostic = value;
      }
      continue;
    }
    if (!header_seen) {
      if (!schema_seen) throw parse_error("missing schema line");
      if (line != header_row()) throw parse_error("column header does not match schema");
      header_seen = true;
      continue;
    }

    std::array<double, kColumns> v{};
    std::string_view rest(line);
    int n = 0;
    while (true) {
      const auto comma = rest.find(',');
      if (n >= kColumns) throw parse_error("too many columns");
      v[n++] = to_double(rest.substr(0, comma));
      if (comma == std::string_view::npos) break;
      rest.remove_prefix(comma + 1);
    }
    if (n != kColumns) {
      throw parse_error("expected " + std::to_string(kColumns) + " columns, got " +
                        std::to_string(n));
    }

    LogRow r;
    int c = 0;
    r.t = v[c++];
    for (SysState* s : {&r.truth, &r.estimate, &r.reference}) {
      StateVector x;
      for (int i = 0; i < kStateDim; ++i) x(i) = v[c++];
      *s = SysState::from_vector(x);
    }
    InputVector u;
    for (int i = 0; i < kInputDim; ++i) u(i) = v[c++];
    r.command = ControlInput::from_vector(u);
    r.tag_visible = v[c++] != 0.0;
    r.frame = v[c++] != 0.0;
    r.detected = v[c++] != 0.0;
    r.tag_u = v[c++];
    r.tag_v = v[c++];
    r.ekf_accepted = v[c++] != 0.0;
    r.solver_ok = v[c++] != 0.0;
    r.qp_iterations = static_cast<int>(v[c++]);
    r.kkt_residual = v[c++];
    r.max_slack = v[c++];
    r.imu_clipped = v[c++] != 0.0;
    if (!r.solver_ok) ++log.solver_failures;
    log.rows.push_back(r);
  }
  if (!header_seen) throw parse_error("log has no header");
  return out;
}

ParsedLog read_log_csv(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw Error(ErrorCode::io, "cannot open " + path);
  return read_log_csv(f);
}

}  // namespace cablempc
