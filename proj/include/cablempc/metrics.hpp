#pragma once

#include "cablempc/simulator.hpp"

#include "json.hpp"

#include <optional>
#include <string>

namespace cablempc {

/// Mean absolute error, standard deviation of the absolute error and RMSE per
/// axis.
struct AxisStats {
  Vec3 mean = Vec3::Zero();
  Vec3 std = Vec3::Zero();
  Vec3 rmse = Vec3::Zero();
};

struct ScalarStats {
  double mean = 0.0;
  double std = 0.0;
  double max = 0.0;
};

struct TimingStats {
  int count = 0;
  double mean = 0.0;
  double p99 = 0.0;
  double max = 0.0;
};

struct MetricsReport {
  double transient_skip = 0.0;
  double window_start = 0.0;
  double window_end = 0.0;
  int samples = 0;

  AxisStats tracking_position;  // payload truth vs reference
  AxisStats tracking_velocity;
  /// Max of |v_L| over the whole log, over the window, and 2 pi r / T_c.
  double max_speed = 0.0;
  double max_speed_window = 0.0;
  std::optional<double> nominal_speed;

  ScalarStats angle_error;  // e_angle
  ScalarStats rate_error;   // |xi_dot_true - xi_dot_est|
  AxisStats estimation_position;
  AxisStats estimation_velocity;

  /// Share of control ticks with the attach point inside the camera cone,
  /// over the whole run and over the window.
  double fov_inside_fraction = 0.0;
  double fov_inside_fraction_window = 0.0;
  /// Detected frames / frames, whole run.
  double frame_detection_fraction = 0.0;
  double ekf_acceptance_fraction = 0.0;

  int solver_failures = 0;
  double mean_qp_iterations = 0.0;
  int max_qp_iterations = 0;
  double max_slack = 0.0;
  int imu_clip_ticks = 0;

  bool aborted = false;
  std::string diagnostic;

  /// Wall-clock solver timing; present only when the run itself computed the
  /// report, never when recomputed from a log.
  std::optional<TimingStats> timing;
};

/// Tilt angles (phi_x, phi_y) of a cable direction.
Eigen::Vector2d cable_tilt(const Vec3& xi);
/// (|d phi_x| + |d phi_y|) / 2.
double angle_error(const Vec3& xi_true, const Vec3& xi_est);

/// Statistics over rows with t >= transient_skip. Throws
/// Error(invalid_argument) when the window holds no samples.
MetricsReport compute_metrics(const SimLog& log, double transient_skip);

TimingStats timing_stats(const std::vector<double>& seconds);

nlohmann::json to_json(const MetricsReport& r);

}  // namespace cablempc
