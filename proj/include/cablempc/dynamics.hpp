#pragma once

#include "cablempc/types.hpp"

namespace cablempc {

/// Time derivative of every SysState field.
struct StateDerivative {
  Vec3 payload_vel = Vec3::Zero();
  Vec3 payload_acc = Vec3::Zero();
  Vec3 cable_rate = Vec3::Zero();
  Vec3 cable_acc = Vec3::Zero();
  Vec4 attitude_rate = Vec4::Zero();  // [w, x, y, z]

  StateVector to_vector() const;
};

struct DynamicsJacobians {
  StateMatrix state;
  InputMatrix input;
};

// Quaternion kinematics use the body-rate matrix
//
//   Lambda(W) = [ 0   -Wx  -Wy  -Wz ]
//               [ Wx   0    Wz  -Wy ]
//               [ Wy  -Wz   0    Wx ]
//               [ Wz   Wy  -Wx   0  ]
//
// acting on q = [w, x, y, z], so q_dot = 1/2 Lambda(W) q.
Eigen::Matrix4d rate_matrix(const Vec3& body_rate);

/// Rotation matrix of a (renormalized) unit quaternion. Throws on a zero
/// quaternion.
Mat3 quat_to_rotation(const Quat& q);

/// R(q) e3 evaluated with the polynomial rotation formula, without
/// renormalizing q. Used inside the dynamics so that Jacobians stay exact
/// for slightly off-manifold quaternions.
Vec3 thrust_axis(const Vec4& q);
Eigen::Matrix<double, 3, 4> thrust_axis_jacobian(const Vec4& q);

/// R(q) v with the polynomial formula and its Jacobian with respect to q.
Vec3 rotate(const Vec4& q, const Vec3& v);
Eigen::Matrix<double, 3, 4> rotate_jacobian(const Vec4& q, const Vec3& v);

/// m_L * ||a_L + g e3||.
double cable_tension(const Vec3& payload_acc, const SystemParams& p);

/// x_Q = x_L - l xi.
Vec3 quadrotor_position(const SysState& s, const SystemParams& p);
Vec3 quadrotor_velocity(const SysState& s, const SystemParams& p);

/// Continuous-time coupled dynamics. Throws Error(invalid_argument) on
/// non-finite data.
StateDerivative state_derivative(const SysState& s, const ControlInput& u,
                                 const SystemParams& p);

/// Unchecked vector form used in hot loops (integration, OCP).
StateVector dynamics(const StateVector& x, const InputVector& u, const SystemParams& p);

DynamicsJacobians dynamics_jacobians(const StateVector& x, const InputVector& u,
                                     const SystemParams& p);
DynamicsJacobians dynamics_jacobians(const SysState& s, const ControlInput& u,
                                     const SystemParams& p);

/// Robot acceleration x_Q_ddot = a_L - l xi_ddot implied by the dynamics, and
/// its Jacobians. Drives the accelerometer model and constraint.
Vec3 robot_acceleration(const StateVector& x, const InputVector& u, const SystemParams& p);

/// Renormalizes xi and q, removes the radial part of xi_dot.
void project_to_manifold(StateVector& x);

/// One classical RK4 step followed by manifold projection.
SysState integrate_step(const SysState& s, const ControlInput& u, const SystemParams& p,
                        double dt);

/// Unchecked, unprojected RK4 step.
StateVector rk4_step(const StateVector& x, const InputVector& u, const SystemParams& p,
                     double dt);

}  // namespace cablempc
