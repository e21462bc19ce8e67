#include "cablempc/dynamics.hpp"

#include "cablempc/errors.hpp"

#include <cmath>

namespace cablempc {

StateVector StateDerivative::to_vector() const {
  StateVector d;
  d.segment<3>(kPos) = payload_vel;
  d.segment<3>(kVel) = payload_acc;
  d.segment<3>(kXi) = cable_rate;
  d.segment<3>(kXiDot) = cable_acc;
  d.segment<4>(kQuat) = attitude_rate;
  return d;
}

Eigen::Matrix4d rate_matrix(const Vec3& w) {
  Eigen::Matrix4d m;
  m << 0.0,  -w.x(), -w.y(), -w.z(),
       w.x(), 0.0,    w.z(), -w.y(),
       w.y(), -w.z(), 0.0,    w.x(),
       w.z(), w.y(), -w.x(),  0.0;
  return m;
}

namespace {

// d(q_dot)/d(Omega) * 2, i.e. q (x) [0, Omega] = quat_rate_input(q) Omega.
Eigen::Matrix<double, 4, 3> quat_rate_input(const Vec4& q) {
  Eigen::Matrix<double, 4, 3> m;
  m << -q(1), -q(2), -q(3),
        q(0), -q(3),  q(2),
        q(3),  q(0), -q(1),
       -q(2),  q(1),  q(0);
  return m;
}

}  // namespace

Mat3 quat_to_rotation(const Quat& q) {
  const double n = q.norm();
  if (!(n > 0.0) || !std::isfinite(n)) {
    throw Error(ErrorCode::invalid_argument, "quat_to_rotation: zero or non-finite quaternion");
  }
  const double w = q.w() / n, x = q.x() / n, y = q.y() / n, z = q.z() / n;
  Mat3 r;
  r << 1.0 - 2.0 * (y * y + z * z), 2.0 * (x * y - w * z), 2.0 * (w * y + x * z),
       2.0 * (w * z + x * y), 1.0 - 2.0 * (x * x + z * z), 2.0 * (y * z - w * x),
       2.0 * (x * z - w * y), 2.0 * (w * x + y * z), 1.0 - 2.0 * (x * x + y * y);
  return r;
}

Vec3 rotate(const Vec4& q, const Vec3& v) {
  const double w = q(0);
  const Vec3 qv = q.tail<3>();
  return v + 2.0 * w * qv.cross(v) + 2.0 * (qv * qv.dot(v) - qv.squaredNorm() * v);
}

Eigen::Matrix<double, 3, 4> rotate_jacobian(const Vec4& q, const Vec3& v) {
  const double w = q(0);
  const Vec3 qv = q.tail<3>();
  Eigen::Matrix<double, 3, 4> j;
  j.col(0) = 2.0 * qv.cross(v);
  j.rightCols<3>() = -2.0 * w * skew(v) +
                     2.0 * (qv.dot(v) * Mat3::Identity() + qv * v.transpose() -
                            2.0 * v * qv.transpose());
  return j;
}

Vec3 thrust_axis(const Vec4& q) {
  return Vec3(2.0 * (q(0) * q(2) + q(1) * q(3)),
              2.0 * (q(2) * q(3) - q(0) * q(1)),
              1.0 - 2.0 * (q(1) * q(1) + q(2) * q(2)));
}

Eigen::Matrix<double, 3, 4> thrust_axis_jacobian(const Vec4& q) {
  Eigen::Matrix<double, 3, 4> j;
  j << 2.0 * q(2), 2.0 * q(3), 2.0 * q(0), 2.0 * q(1),
       -2.0 * q(1), -2.0 * q(0), 2.0 * q(3), 2.0 * q(2),
       0.0, -4.0 * q(1), -4.0 * q(2), 0.0;
  return j;
}

double cable_tension(const Vec3& payload_acc, const SystemParams& p) {
  return p.payload_mass * (payload_acc + p.gravity * Vec3::UnitZ()).norm();
}

Vec3 quadrotor_position(const SysState& s, const SystemParams& p) {
  return s.payload_pos - p.cable_length * s.cable_dir;
}

Vec3 quadrotor_velocity(const SysState& s, const SystemParams& p) {
  return s.payload_vel - p.cable_length * s.cable_rate;
}

StateVector dynamics(const StateVector& x, const InputVector& u, const SystemParams& p) {
  const double mql = p.robot_mass * p.cable_length;
  const Vec3 xi = x.segment<3>(kXi);
  const Vec3 xi_dot = x.segment<3>(kXiDot);
  const Vec4 q = x.segment<4>(kQuat);

  const Vec3 force = u(0) * thrust_axis(q);
  const double along = xi.dot(force);
  const double rate_sq = xi_dot.squaredNorm();

  StateVector d;
  d.segment<3>(kPos) = x.segment<3>(kVel);
  d.segment<3>(kVel) = (along - mql * rate_sq) / p.total_mass() * xi - p.gravity * Vec3::UnitZ();
  d.segment<3>(kXi) = xi_dot;
  // xi x (xi x F) = xi (xi.F) - F |xi|^2; the unit-norm form keeps xi.xi_ddot = -|xi_dot|^2.
  d.segment<3>(kXiDot) = (xi * along - force) / mql - rate_sq * xi;
  d.segment<4>(kQuat) = 0.5 * rate_matrix(u.tail<3>()) * q;
  return d;
}

StateDerivative state_derivative(const SysState& s, const ControlInput& u,
                                 const SystemParams& p) {
  const StateVector x = s.to_vector();
  const InputVector uv = u.to_vector();
  if (!x.allFinite() || !uv.allFinite()) {
    throw Error(ErrorCode::invalid_argument, "state_derivative: non-finite state or input");
  }
  const StateVector d = dynamics(x, uv, p);
  StateDerivative out;
  out.payload_vel = d.segment<3>(kPos);
  out.payload_acc = d.segment<3>(kVel);
  out.cable_rate = d.segment<3>(kXi);
  out.cable_acc = d.segment<3>(kXiDot);
  out.attitude_rate = d.segment<4>(kQuat);
  return out;
}

DynamicsJacobians dynamics_jacobians(const StateVector& x, const InputVector& u,
                                     const SystemParams& p) {
  const double mql = p.robot_mass * p.cable_length;
  const double m = p.total_mass();
  const Vec3 xi = x.segment<3>(kXi);
  const Vec3 xi_dot = x.segment<3>(kXiDot);
  const Vec4 q = x.segment<4>(kQuat);
  const double f = u(0);

  const Vec3 b3 = thrust_axis(q);
  const Eigen::Matrix<double, 3, 4> db3 = thrust_axis_jacobian(q);
  const Vec3 force = f * b3;
  const Eigen::Matrix<double, 3, 4> dforce_dq = f * db3;
  const double along = xi.dot(force);
  const double rate_sq = xi_dot.squaredNorm();
  const double s = along - mql * rate_sq;
  const Mat3 eye = Mat3::Identity();

  DynamicsJacobians j;
  j.state.setZero();
  j.input.setZero();

  j.state.block<3, 3>(kPos, kVel) = eye;

  j.state.block<3, 3>(kVel, kXi) = (xi * force.transpose() + s * eye) / m;
  j.state.block<3, 3>(kVel, kXiDot) = -2.0 * mql / m * xi * xi_dot.transpose();
  j.state.block<3, 4>(kVel, kQuat) = xi * (xi.transpose() * dforce_dq) / m;
  j.input.block<3, 1>(kVel, 0) = xi * xi.dot(b3) / m;

  j.state.block<3, 3>(kXi, kXiDot) = eye;

  j.state.block<3, 3>(kXiDot, kXi) =
      (along * eye + xi * force.transpose()) / mql - rate_sq * eye;
  j.state.block<3, 3>(kXiDot, kXiDot) = -2.0 * xi * xi_dot.transpose();
  j.state.block<3, 4>(kXiDot, kQuat) = (xi * xi.transpose() - eye) * dforce_dq / mql;
  j.input.block<3, 1>(kXiDot, 0) = (xi * xi.dot(b3) - b3) / mql;

  j.state.block<4, 4>(kQuat, kQuat) = 0.5 * rate_matrix(u.tail<3>());
  j.input.block<4, 3>(kQuat, 1) = 0.5 * quat_rate_input(q);
  return j;
}

DynamicsJacobians dynamics_jacobians(const SysState& s, const ControlInput& u,
                                     const SystemParams& p) {
  return dynamics_jacobians(s.to_vector(), u.to_vector(), p);
}

Vec3 robot_acceleration(const StateVector& x, const InputVector& u, const SystemParams& p) {
  const StateVector d = dynamics(x, u, p);
  return d.segment<3>(kVel) - p.cable_length * d.segment<3>(kXiDot);
}

void project_to_manifold(StateVector& x) {
  Vec3 xi = x.segment<3>(kXi);
  xi.normalize();
  Vec3 xi_dot = x.segment<3>(kXiDot);
  xi_dot -= xi * xi.dot(xi_dot);
  x.segment<3>(kXi) = xi;
  x.segment<3>(kXiDot) = xi_dot;
  x.segment<4>(kQuat).normalize();
}

StateVector rk4_step(const StateVector& x, const InputVector& u, const SystemParams& p,
                     double dt) {
  const StateVector k1 = dynamics(x, u, p);
  const StateVector k2 = dynamics(x + 0.5 * dt * k1, u, p);
  const StateVector k3 = dynamics(x + 0.5 * dt * k2, u, p);
  const StateVector k4 = dynamics(x + dt * k3, u, p);
  return x + dt / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
}

SysState integrate_step(const SysState& s, const ControlInput& u, const SystemParams& p,
                        double dt) {
  if (!(dt > 0.0) || !std::isfinite(dt)) {
    throw Error(ErrorCode::invalid_argument, "integrate_step: dt must be positive");
  }
  const StateVector x = s.to_vector();
  const InputVector uv = u.to_vector();
  if (!x.allFinite() || !uv.allFinite()) {
    throw Error(ErrorCode::invalid_argument, "integrate_step: non-finite state or input");
  }
  StateVector next = rk4_step(x, uv, p, dt);
  project_to_manifold(next);
  return SysState::from_vector(next);
}

}  // namespace cablempc
