#pragma once

#include <Eigen/Core>
#include <Eigen/Geometry>

namespace cablempc {

using Vec3 = Eigen::Vector3d;
using Vec4 = Eigen::Vector4d;
using Vec6 = Eigen::Matrix<double, 6, 1>;
using Mat3 = Eigen::Matrix3d;
using Mat6 = Eigen::Matrix<double, 6, 6>;
using Quat = Eigen::Quaterniond;

inline constexpr int kStateDim = 16;
inline constexpr int kInputDim = 4;

/// x = [x_L, v_L, xi, xi_dot, q_w, q_x, q_y, q_z]
using StateVector = Eigen::Matrix<double, kStateDim, 1>;
/// u = [f, Omega_x, Omega_y, Omega_z]
using InputVector = Eigen::Matrix<double, kInputDim, 1>;
using StateMatrix = Eigen::Matrix<double, kStateDim, kStateDim>;
using InputMatrix = Eigen::Matrix<double, kStateDim, kInputDim>;

// Offsets into StateVector.
inline constexpr int kPos = 0;
inline constexpr int kVel = 3;
inline constexpr int kXi = 6;
inline constexpr int kXiDot = 9;
inline constexpr int kQuat = 12;

struct SystemParams {
  double robot_mass = 0.25;    // m_Q, kg
  double payload_mass = 0.075; // m_L, kg
  double cable_length = 0.5;   // l, m
  Mat3 inertia = Eigen::Vector3d(1.2e-3, 1.2e-3, 2.2e-3).asDiagonal();
  double gravity = 9.81;
  double thrust_coefficient = 3.5e-7;  // k_f, N s^2 / rad^2

  double total_mass() const { return robot_mass + payload_mass; }
  double hover_thrust() const { return total_mass() * gravity; }

  /// Throws Error(invalid_argument) when a physical invariant is broken.
  void validate() const;
};

/// Coupled robot/payload state. The attitude is a Hamilton quaternion
/// rotating body vectors into the inertial frame.
struct SysState {
  Vec3 payload_pos = Vec3::Zero();
  Vec3 payload_vel = Vec3::Zero();
  Vec3 cable_dir = -Vec3::UnitZ();
  Vec3 cable_rate = Vec3::Zero();
  Quat attitude = Quat::Identity();

  StateVector to_vector() const;
  static SysState from_vector(const StateVector& x);
};

struct ControlInput {
  double thrust = 0.0;
  Vec3 body_rate = Vec3::Zero();

  InputVector to_vector() const;
  static ControlInput from_vector(const InputVector& u);
};

/// Scalar-first coefficients [w, x, y, z].
inline Vec4 quat_coeffs(const Quat& q) { return Vec4(q.w(), q.x(), q.y(), q.z()); }
inline Quat quat_from_coeffs(const Vec4& c) { return Quat(c(0), c(1), c(2), c(3)); }

inline Mat3 skew(const Vec3& v) {
  Mat3 m;
  m << 0.0, -v.z(), v.y(),
       v.z(), 0.0, -v.x(),
       -v.y(), v.x(), 0.0;
  return m;
}

}  // namespace cablempc
