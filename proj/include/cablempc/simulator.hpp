#pragma once

#include "cablempc/estimation.hpp"
#include "cablempc/flatness.hpp"
#include "cablempc/pcmpc.hpp"
#include "cablempc/rng.hpp"
#include "cablempc/types.hpp"

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

namespace cablempc {

struct SimConfig {
  std::uint64_t seed = 1;
  double duration = 18.0;
  double plant_dt = 0.001;
  double control_rate = 500.0;
  /// Camera frames are scheduled by accumulating 1 / rate, so the rate does
  /// not have to divide the plant rate.
  double camera_rate = 30.0;
  /// First-order body-rate lag; 0 applies the command directly.
  double rate_loop_tau = 0.02;
  NoiseConfig noise;
  /// Defaults to hovering at rest at the trajectory start.
  std::optional<SysState> initial_state;
  TrajectorySpec trajectory;
  OcpConfig ocp;
  SystemParams params;
  Mat3 camera_intrinsics = CameraModel::default_intrinsics();

  /// Attach-point velocity filter cutoff.
  double velocity_cutoff = 15.0;
  bool innovation_gate = true;
  /// Tautness margin used when building references.
  double taut_margin = 1.0;
  /// Latency of the pose surrogate in control ticks.
  int pose_latency_ticks = 0;
  double accel_range = 3.0 * 9.81;  // per axis, m/s^2
  double gyro_range = 35.0;         // per axis, rad/s
  double divergence_limit = 100.0;

  /// Camera built from the FOV cone of the OCP so both share the mounting.
  CameraModel camera() const;
  int control_divider() const;
  void validate() const;
};

struct LogRow {
  double t = 0.0;
  SysState truth;
  SysState estimate;
  SysState reference;
  ControlInput command;
  /// Attach point inside the detection cone.
  bool tag_visible = false;
  /// A camera frame was due on this tick and a tag measurement was produced.
  bool frame = false;
  bool detected = false;
  double tag_u = 0.0;
  double tag_v = 0.0;
  bool ekf_accepted = false;
  bool solver_ok = true;
  int qp_iterations = 0;
  double kkt_residual = 0.0;
  double max_slack = 0.0;
  bool imu_clipped = false;
};

struct SimLog {
  std::vector<LogRow> rows;
  double control_period = 0.0;
  double trajectory_period = 0.0;
  /// 2 pi r / T_c for circles.
  std::optional<double> nominal_speed;
  std::uint64_t seed = 0;
  /// Wall-clock solve times in seconds, kept out of the rows so that logs
  /// of seeded runs stay bit-identical.
  std::vector<double> solve_times;
  int solver_failures = 0;
  bool aborted = false;
  std::string diagnostic;
};

/// Pixel measurement of the attach point, or nothing when it is outside the
/// cone. `pixel_sigma` <= 0 disables the noise.
std::optional<TagMeasurement> render_tag(const SysState& truth, const SystemParams& p,
                                         const CameraModel& cam, CounterRng& rng,
                                         double pixel_sigma, double t = 0.0);

struct ImuSample {
  Vec3 accel = Vec3::Zero();
  Vec3 gyro = Vec3::Zero();
  bool clipped = false;
};

/// Specific force R'(x_Q_ddot + g e3) and body rate, clipped to the ranges
/// and then noised.
ImuSample simulate_imu(const SysState& truth, const ControlInput& applied, const SystemParams& p,
                       CounterRng& accel_rng, CounterRng& gyro_rng, double accel_sigma,
                       double gyro_sigma, double accel_range, double gyro_range);

/// Exact discretization of the first-order lag; tau == 0 returns the command.
Vec3 step_rate_loop(const Vec3& commanded, const Vec3& actual, double tau, double dt);

SimLog run_closed_loop(const SimConfig& cfg);

/// Cable pendulum hanging from a fixed pivot.
struct PendulumTrace {
  std::vector<double> t;
  std::vector<double> energy;
  std::vector<Vec3> cable_dir;
};
double pendulum_energy(const Vec3& xi, const Vec3& xi_dot, const SystemParams& p);
PendulumTrace run_pendulum(const Vec3& xi0, const Vec3& xi_dot0, const SystemParams& p,
                           double duration, double dt);

/// CSV with one row per control tick. The first lines are `#` metadata, then
/// a header row carrying the schema version.
inline constexpr int kLogSchemaVersion = 1;
void write_log_csv(const SimLog& log, std::ostream& os, double transient_skip);
void write_log_csv(const SimLog& log, const std::string& path, double transient_skip);

struct ParsedLog {
  SimLog log;
  double transient_skip = 0.0;
};
ParsedLog read_log_csv(std::istream& is);
ParsedLog read_log_csv(const std::string& path);

}  // namespace cablempc
