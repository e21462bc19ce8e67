#include "cablempc/errors.hpp"
#include "cablempc/types.hpp"

#include <Eigen/Eigenvalues>

#include <cmath>

namespace cablempc {

const char* to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::invalid_argument: return "invalid-argument";
    case ErrorCode::slack_cable: return "slack-cable";
    case ErrorCode::degenerate_attitude: return "degenerate-attitude";
    case ErrorCode::geometry_inconsistent: return "geometry-inconsistent";
    case ErrorCode::ill_conditioned_trajectory: return "ill-conditioned-trajectory";
    case ErrorCode::solver_failure: return "solver-failure";
    case ErrorCode::config: return "config";
    case ErrorCode::parse: return "parse";
    case ErrorCode::io: return "io";
  }
  return "unknown";
}

void SystemParams::validate() const {
  auto require = [](bool ok, const char* what) {
    if (!ok) throw Error(ErrorCode::invalid_argument, what);
  };
  require(robot_mass > 0.0 && std::isfinite(robot_mass), "robot_mass must be positive");
  require(payload_mass > 0.0 && std::isfinite(payload_mass), "payload_mass must be positive");
  require(cable_length > 0.0 && std::isfinite(cable_length), "cable_length must be positive");
  require(gravity > 0.0 && std::isfinite(gravity), "gravity must be positive");
  require(thrust_coefficient > 0.0 && std::isfinite(thrust_coefficient),
          "thrust_coefficient must be positive");
  require(inertia.allFinite() && (inertia - inertia.transpose()).cwiseAbs().maxCoeff() < 1e-12,
          "inertia must be symmetric");
  Eigen::SelfAdjointEigenSolver<Mat3> eig(inertia, Eigen::EigenvaluesOnly);
  require(eig.eigenvalues().minCoeff() > 0.0, "inertia must be positive definite");
}

StateVector SysState::to_vector() const {
  StateVector x;
  x.segment<3>(kPos) = payload_pos;
  x.segment<3>(kVel) = payload_vel;
  x.segment<3>(kXi) = cable_dir;
  x.segment<3>(kXiDot) = cable_rate;
  x.segment<4>(kQuat) = quat_coeffs(attitude);
  return x;
}

SysState SysState::from_vector(const StateVector& x) {
  SysState s;
  s.payload_pos = x.segment<3>(kPos);
  s.payload_vel = x.segment<3>(kVel);
  s.cable_dir = x.segment<3>(kXi);
  s.cable_rate = x.segment<3>(kXiDot);
  s.attitude = quat_from_coeffs(x.segment<4>(kQuat));
  return s;
}

InputVector ControlInput::to_vector() const {
  InputVector u;
  u << thrust, body_rate;
  return u;
}

ControlInput ControlInput::from_vector(const InputVector& u) {
  return ControlInput{u(0), u.tail<3>()};
}

}  // namespace cablempc
