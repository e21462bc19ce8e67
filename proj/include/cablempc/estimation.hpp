#pragma once

#include "cablempc/pcmpc.hpp"
#include "cablempc/types.hpp"

#include <array>
#include <optional>

namespace cablempc {

/// Pinhole camera rigidly mounted on the robot. The cone holds the mounting
/// (camera position and orientation in the body frame) and the detection
/// volume shared with the controller.
struct CameraModel {
  Mat3 intrinsics = default_intrinsics();
  FovCone cone;
  double rate = 30.0;

  const Vec3& position_body() const { return cone.camera_pos_body; }
  const Mat3& rotation_body() const { return cone.camera_rot_body; }
  void validate() const;

  static Mat3 default_intrinsics();
};

struct TagMeasurement {
  double u = 0.0;
  double v = 0.0;
  double t = 0.0;
};

/// EKF belief over X = [xi; xi_dot].
struct CableBelief {
  Vec3 cable_dir = -Vec3::UnitZ();
  Vec3 cable_rate = Vec3::Zero();
  Mat6 covariance = Mat6::Identity() * 1e-2;

  Vec6 mean() const;
  static CableBelief from_mean(const Vec6& x, const Mat6& cov);
};

struct NoiseConfig {
  bool enabled = true;
  /// Continuous-time process noise density for [xi; xi_dot].
  Mat6 process_cov = default_process_cov();
  /// Measurement noise for [p_B; p_B_dot].
  Mat6 measurement_cov = default_measurement_cov();
  double pixel_sigma = 1.0;         // px
  double position_sigma = 0.005;    // m, pose surrogate
  double attitude_sigma = 0.2 * 3.14159265358979323846 / 180.0;  // rad
  double velocity_sigma = 0.02;     // m/s, pose surrogate
  double gyro_sigma = 0.005;        // rad/s
  double accel_sigma = 0.05;        // m/s^2
  double motor_sigma = 0.01;        // fraction of motor speed

  void validate() const;
  static Mat6 default_process_cov();
  static Mat6 default_measurement_cov();
};

/// Unit bearing K^-1 [u, v, 1] / |.| in the camera frame.
Vec3 backproject(const TagMeasurement& meas, const CameraModel& cam);

/// Pixel coordinates of a camera-frame point (no noise, no validity check).
Eigen::Vector2d project(const Vec3& point_camera, const CameraModel& cam);

/// Depth d > 0 along the bearing such that |x_C + d R_C n| = l. Of the
/// positive roots, the one placing the attach point lowest in the body frame
/// wins. Throws Error(geometry_inconsistent) when no such root exists.
double solve_depth(const Vec3& bearing, const CameraModel& cam, double cable_length);

/// p_B = x_C + d R_C n.
Vec3 attach_point_body(const Vec3& bearing, double depth, const CameraModel& cam);

/// Backward-difference velocity of successive attach-point samples passed
/// through a first-order low-pass filter.
class AttachPointTracker {
 public:
  explicit AttachPointTracker(double cutoff_hz = 15.0) : cutoff_hz_(cutoff_hz) {}

  struct Sample {
    Vec3 position;
    std::optional<Vec3> velocity;  // empty until two samples were seen
  };

  Sample update(const Vec3& position, double t);
  void reset() { last_.reset(); filtered_.reset(); }

 private:
  double cutoff_hz_;
  std::optional<std::pair<Vec3, double>> last_;
  std::optional<Vec3> filtered_;
};

/// (sum_j k_f w_j^2) R e3.
Vec3 thrust_input(const std::array<double, 4>& motor_speeds, const Quat& q, const SystemParams& p);

/// Continuous cable process model and its Jacobian.
Vec6 cable_process(const Vec6& x, const Vec3& thrust, const SystemParams& p);
Mat6 cable_process_jacobian(const Vec6& x, const Vec3& thrust, const SystemParams& p);

/// Measurement model [R' l xi; l (R' xi_dot - W x R' xi)] and its Jacobian.
Vec6 cable_measurement(const Vec6& x, const Mat3& rot, const Vec3& body_rate, const SystemParams& p);
Mat6 cable_measurement_jacobian(const Mat3& rot, const Vec3& body_rate, const SystemParams& p);

void project_belief(CableBelief& b);

CableBelief ekf_predict(const CableBelief& b, const Vec3& thrust, double dt, const SystemParams& p,
                        const NoiseConfig& nc);

struct UpdateResult {
  CableBelief belief;
  bool accepted = true;
  double mahalanobis = 0.0;
};

/// 99% chi-square gates for 6 and 3 degrees of freedom.
inline constexpr double kGate6 = 16.81;
inline constexpr double kGate3 = 11.34;

/// EKF correction with [p_B; p_B_dot]; without a velocity only the position
/// rows are used. Gated measurements leave the belief unchanged.
UpdateResult ekf_update(const CableBelief& b, const Vec3& position_body,
                        const std::optional<Vec3>& velocity_body, const Mat3& rot,
                        const Vec3& body_rate, const SystemParams& p, const NoiseConfig& nc,
                        bool gate = true);

struct PayloadEstimate {
  Vec3 position;
  Vec3 velocity;
};

/// x_L = x_Q + l xi, v_L = v_Q + l xi_dot.
PayloadEstimate payload_state(const Vec3& robot_pos, const Vec3& robot_vel, const CableBelief& b,
                              const SystemParams& p);

}  // namespace cablempc
