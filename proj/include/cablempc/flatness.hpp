#pragma once

#include "cablempc/types.hpp"

#include <array>
#include <variant>
#include <vector>

namespace cablempc {

/// Payload position and its derivatives through order 5 plus heading.
struct FlatOutput {
  std::array<Vec3, 6> derivs{Vec3::Zero(), Vec3::Zero(), Vec3::Zero(),
                             Vec3::Zero(), Vec3::Zero(), Vec3::Zero()};
  double yaw = 0.0;
  double yaw_rate = 0.0;

  const Vec3& position() const { return derivs[0]; }
  const Vec3& velocity() const { return derivs[1]; }
  const Vec3& acceleration() const { return derivs[2]; }
};

struct HoverTrajectory {
  Vec3 position = Vec3(0.0, 0.0, 1.0);
};

/// x_L(t) = [r cos(2 pi t / T), r sin(2 pi t / T), h].
struct CircleTrajectory {
  double radius = 1.5;
  double period = 6.0;
  double height = 1.0;
};

/// Piecewise degree-11 polynomials in normalized segment time.
struct PolynomialTrajectory {
  static constexpr int kCoeffs = 12;
  struct Segment {
    double duration = 1.0;
    // coeffs(i, axis) multiplies tau^i with tau = t / duration in [0, 1].
    Eigen::Matrix<double, kCoeffs, 3> coeffs = Eigen::Matrix<double, kCoeffs, 3>::Zero();
  };
  std::vector<Segment> segments;

  double total_duration() const;
};

struct TrajectorySpec {
  std::variant<HoverTrajectory, CircleTrajectory, PolynomialTrajectory> shape;
  double yaw = 0.0;

  /// Circle period, total duration for polynomials, 0 for hover.
  double nominal_period() const;
  void validate() const;
};

/// Reference state and input from the flat map, plus the intermediate
/// quantities other modules reuse.
struct FlatReference {
  SysState state;
  ControlInput input;
  double tension = 0.0;
  Vec3 robot_acc = Vec3::Zero();
};

/// Samples the trajectory. Times before zero clamp to zero; polynomial
/// trajectories hold their final point after the last segment.
FlatOutput sample_flat(const TrajectorySpec& spec, double t);

/// Maps a flat output to the full state and the input that realizes it.
/// Throws Error(slack_cable) when the tautness margin is violated and
/// Error(degenerate_attitude) when the thrust vector vanishes.
FlatReference flat_to_reference(const FlatOutput& fo, const SystemParams& p,
                                double taut_margin = 1.0);

/// True iff a_L . e3 > -g + eps.
bool check_tautness(const FlatOutput& fo, const SystemParams& p, double eps = 1.0);

/// Robot acceleration x_Q_ddot from payload derivatives of orders 2..4.
Vec3 flat_robot_acceleration(const FlatOutput& fo, const SystemParams& p);

/// Rest-to-rest minimum-crackle-rate spline: degree 11 per axis per segment,
/// C5 at the junctions, derivatives 1..5 zero at both ends, minimal
/// integrated squared 6th derivative.
TrajectorySpec fit_polynomial_segments(const std::vector<Vec3>& waypoints,
                                       const std::vector<double>& durations);

/// Derivatives of u / |u| up to order 3 given u and its first three
/// derivatives.
std::array<Vec3, 4> normalized_derivatives(const std::array<Vec3, 4>& u);

}  // namespace cablempc
