#pragma once

#include "cablempc/errors.hpp"
#include "cablempc/flatness.hpp"
#include "cablempc/qp.hpp"
#include "cablempc/types.hpp"

#include <optional>
#include <vector>

namespace cablempc {

/// Camera detection cone: apex at the camera origin, axis along the camera
/// z axis, radius `radius` at distance `height` along the axis.
struct FovCone {
  double height = 1.0;
  double radius = 0.36;
  Vec3 camera_pos_body = Vec3(0.05, 0.0, -0.02);
  /// Camera-to-body rotation; the default looks straight down the body -z axis.
  Mat3 camera_rot_body = Eigen::Vector3d(1.0, -1.0, -1.0).asDiagonal();

  double slope() const { return radius / height; }
  Vec3 axis_body() const { return camera_rot_body.col(2); }
  void validate() const;
};

enum class OcpFormulation { condensed, sparse };

struct OcpConfig {
  int horizon = 10;
  double step = 0.1;
  /// RK4 sub-steps per shooting interval.
  int substeps = 1;

  StateVector state_weights = default_state_weights();
  InputVector input_weights = default_input_weights();

  double thrust_min = 0.5;
  double thrust_max = 7.0;
  Vec3 rate_min = Vec3::Constant(-3.5);
  Vec3 rate_max = Vec3::Constant(3.5);
  Vec3 accel_min = Vec3::Constant(-3.0 * 9.81);
  Vec3 accel_max = Vec3::Constant(3.0 * 9.81);

  FovCone fov;
  /// Minimum predicted tension (N) for the soft tautness rows.
  double tension_min = 0.075;
  /// Minimum distance (m) of the attach point in front of the camera.
  double front_margin = 0.05;
  /// Fraction by which the constraint rows shrink the cone radius relative
  /// to the detection cone, absorbing violations between shooting nodes.
  double fov_margin = 0.15;
  /// Horizon (s) of an extra cone row on the first input, evaluated at
  /// x0 + lookahead * f(x0, u0); 0 disables it. Without it the cone only
  /// binds at the shooting nodes and a violation can be postponed forever.
  double fov_lookahead = 0.05;

  bool fov_constraint = true;
  bool accel_constraint = true;
  bool taut_constraint = true;

  double soft_penalty = 1e4;
  double slack_regularization = 1e-6;
  double regularization = 1e-8;
  int qp_max_iterations = 200;
  OcpFormulation formulation = OcpFormulation::condensed;

  double horizon_time() const { return horizon * step; }
  void validate() const;

  static StateVector default_state_weights();
  static InputVector default_input_weights();
};

/// Desired states x_des,0..N and inputs u_des,0..N-1.
struct ReferenceWindow {
  std::vector<SysState> states;
  std::vector<ControlInput> inputs;
};

struct OcpSolution {
  std::vector<SysState> states;
  std::vector<ControlInput> inputs;
  /// Infinity norm of the Gauss-Newton step and the shooting defects at the
  /// linearization point; zero exactly at a KKT point of the discretized OCP.
  double kkt_residual = 0.0;
  int qp_iterations = 0;
  double solve_time = 0.0;
  QpStatus qp_status = QpStatus::optimal;
  double max_slack = 0.0;
};

/// Raised when the QP cannot be solved; carries the linearization iterate.
class SolverFailure : public Error {
 public:
  SolverFailure(const std::string& what, OcpSolution last)
      : Error(ErrorCode::solver_failure, what), last_(std::move(last)) {}
  const OcpSolution& last_iterate() const { return last_; }

 private:
  OcpSolution last_;
};

/// Squared-form cone residual r_p^2 - (r/h)^2 |n_proj|^2 of the attach point
/// (<= 0 inside). Returns +infinity when the point is behind the camera.
double fov_residual(const SysState& s, const SystemParams& p, const FovCone& cone);

/// Residual and gradients with respect to (xi, q); no behind-camera sentinel.
struct FovTerms {
  double residual = 0.0;
  double front = 0.0;  // distance of the attach point along the camera axis
  Eigen::Matrix<double, 1, 3> residual_dxi;
  Eigen::Matrix<double, 1, 4> residual_dq;
  Eigen::Matrix<double, 1, 3> front_dxi;
  Eigen::Matrix<double, 1, 4> front_dq;
};
FovTerms fov_terms(const Vec3& xi, const Vec4& q, double cable_length, const FovCone& cone);

struct AccelResidual {
  Vec3 accel;   // robot acceleration
  Vec3 upper;   // accel - a_max
  Vec3 lower;   // a_min - accel
  bool satisfied() const { return upper.maxCoeff() <= 0.0 && lower.maxCoeff() <= 0.0; }
};

/// Robot acceleration implied by each flat sample and its bound residuals.
std::vector<AccelResidual> accel_residuals(const std::vector<FlatOutput>& window,
                                           const SystemParams& p, const Vec3& accel_min,
                                           const Vec3& accel_max);

double stage_cost(const SysState& s, const ControlInput& u, const SysState& s_des,
                  const ControlInput& u_des, const OcpConfig& cfg);

/// Samples the trajectory at t0 + k * step and maps every sample through the
/// flat map.
ReferenceWindow make_reference_window(const TrajectorySpec& traj, double t0,
                                      const OcpConfig& cfg, const SystemParams& p,
                                      double taut_margin = 1.0);

/// One real-time SQP iteration: multiple-shooting linearization around
/// `warm` (or the reference when absent), Gauss-Newton QP, condensing, and
/// an active-set QP solve.
OcpSolution solve(const SysState& x0, const ReferenceWindow& ref,
                  const std::optional<OcpSolution>& warm, const OcpConfig& cfg,
                  const SystemParams& p);

/// Moves the solution forward in time by `fraction` shooting intervals
/// (linear interpolation between nodes, last node held).
OcpSolution shift_solution(const OcpSolution& sol, double fraction);

/// Receding-horizon controller owning the warm start.
class PcmpcController {
 public:
  PcmpcController(OcpConfig cfg, SystemParams params);

  /// Shifts the previous solution by `elapsed` seconds and runs one SQP
  /// iteration. On SolverFailure the warm start is dropped.
  const OcpSolution& update(const SysState& x0, const ReferenceWindow& ref, double elapsed);

  const OcpConfig& config() const { return cfg_; }
  const std::optional<OcpSolution>& last_solution() const { return last_; }
  void reset() { last_.reset(); }

 private:
  OcpConfig cfg_;
  SystemParams params_;
  std::optional<OcpSolution> last_;
};

}  // namespace cablempc
