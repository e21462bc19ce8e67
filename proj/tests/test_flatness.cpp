#include "cablempc/dynamics.hpp"
#include "cablempc/errors.hpp"
#include "cablempc/flatness.hpp"
#include "test_util.hpp"

#include <gtest/gtest.h>

#include <Eigen/Dense>

#include <cmath>
#include <numbers>

using namespace cablempc;
using namespace cablempc::test;

namespace {

const SystemParams kP;

TrajectorySpec circle(double period) {
  TrajectorySpec spec;
  CircleTrajectory c;
  c.period = period;
  spec.shape = c;
  return spec;
}

ErrorCode code_of(const std::function<void()>& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.code();
  }
  ADD_FAILURE() << "no error thrown";
  return ErrorCode::invalid_argument;
}

}  // namespace

TEST(SampleFlat, CircleAtStart) {
  const FlatOutput fo = sample_flat(circle(6.0), 0.0);
  const double w = 2.0 * std::numbers::pi / 6.0;
  EXPECT_NEAR(w, 1.04720, 1e-5);
  EXPECT_LT((fo.position() - Vec3(1.5, 0.0, 1.0)).norm(), 1e-15);
  EXPECT_LT((fo.velocity() - Vec3(0.0, 1.5708, 0.0)).norm(), 1e-4);
  EXPECT_LT((fo.acceleration() - Vec3(-1.64493, 0.0, 0.0)).norm(), 1e-5);
  // Higher orders against the closed form r w^k (cos, sin)(w t + k pi / 2).
  for (int k = 0; k < 6; ++k) {
    const double a = k * std::numbers::pi / 2.0;
    const Vec3 expected(1.5 * std::pow(w, k) * std::cos(a), 1.5 * std::pow(w, k) * std::sin(a),
                        k == 0 ? 1.0 : 0.0);
    EXPECT_LT((fo.derivs[k] - expected).norm(), 1e-12) << "order " << k;
  }
}

TEST(SampleFlat, CircleIsPeriodic) {
  for (double period : {9.0, 6.0, 4.0}) {
    const TrajectorySpec spec = circle(period);
    for (double t : {0.0, 0.37, 1.9}) {
      const FlatOutput a = sample_flat(spec, t);
      const FlatOutput b = sample_flat(spec, t + period);
      for (int k = 0; k < 6; ++k) EXPECT_LT((a.derivs[k] - b.derivs[k]).norm(), 1e-12);
    }
  }
}

TEST(SampleFlat, HoverHasZeroDerivatives) {
  TrajectorySpec spec;
  spec.shape = HoverTrajectory{Vec3(0.0, 0.0, 1.0)};
  const FlatOutput fo = sample_flat(spec, 3.0);
  EXPECT_EQ(fo.position(), Vec3(0.0, 0.0, 1.0));
  for (int k = 1; k < 6; ++k) EXPECT_EQ(fo.derivs[k], Vec3::Zero());
}

TEST(SampleFlat, NegativeTimeClampsToStart) {
  const TrajectorySpec spec = circle(6.0);
  EXPECT_EQ(sample_flat(spec, -1.0).position(), sample_flat(spec, 0.0).position());
}

TEST(FlatToReference, Hover) {
  FlatOutput fo;
  fo.derivs[0] = Vec3(0.0, 0.0, 1.0);
  fo.yaw = 0.4;
  fo.yaw_rate = 0.0;
  const FlatReference ref = flat_to_reference(fo, kP);
  EXPECT_LT((ref.state.cable_dir - Vec3(0.0, 0.0, -1.0)).norm(), 1e-15);
  EXPECT_NEAR(ref.input.thrust, 3.18825, 1e-12);
  EXPECT_LT(ref.input.body_rate.norm(), 1e-12);
  const Quat yaw(Eigen::AngleAxisd(0.4, Vec3::UnitZ()));
  EXPECT_NEAR(std::abs(ref.state.attitude.dot(yaw)), 1.0, 1e-12);
}

TEST(FlatToReference, HoverWithYawRate) {
  FlatOutput fo;
  fo.derivs[0] = Vec3(0.0, 0.0, 1.0);
  fo.yaw_rate = 0.3;
  const FlatReference ref = flat_to_reference(fo, kP);
  EXPECT_LT((ref.input.body_rate - Vec3(0.0, 0.0, 0.3)).norm(), 1e-12);
}

TEST(FlatToReference, CircleAtStart) {
  const FlatReference ref = flat_to_reference(sample_flat(circle(6.0), 0.0), kP);
  EXPECT_LT((ref.state.cable_dir - Vec3(0.16537, 0.0, -0.98623)).norm(), 1e-5);
  EXPECT_NEAR(ref.tension, 0.74603, 1e-5);
}

TEST(FlatToReference, TensionBalanceIsExact) {
  for (double period : {9.0, 6.0, 4.0}) {
    for (int i = 0; i < 100; ++i) {
      const FlatOutput fo = sample_flat(circle(period), period * i / 100.0);
      const FlatReference ref = flat_to_reference(fo, kP);
      EXPECT_NEAR(ref.state.cable_dir.norm(), 1.0, 1e-15);
      const Vec3 lhs = -ref.tension * ref.state.cable_dir;
      const Vec3 rhs = kP.payload_mass * (fo.acceleration() + kP.gravity * Vec3::UnitZ());
      EXPECT_LT((lhs - rhs).norm(), 1e-14);
    }
  }
}

// Plugging the reference into the dynamics must reproduce the flat
// derivatives; the cable and attitude derivatives are compared against
// central differences of the reference in time.
TEST(FlatToReference, RoundTripThroughDynamics) {
  const double h = 1e-4;
  for (double period : {9.0, 6.0, 4.0}) {
    const TrajectorySpec spec = circle(period);
    double worst = 0.0;
    for (int i = 0; i < 100; ++i) {
      const double t = period * i / 100.0 + 0.5;  // keep t - h >= 0
      const FlatOutput fo = sample_flat(spec, t);
      const FlatReference ref = flat_to_reference(fo, kP);
      const FlatReference ahead = flat_to_reference(sample_flat(spec, t + h), kP);
      const FlatReference behind = flat_to_reference(sample_flat(spec, t - h), kP);
      const StateDerivative d = state_derivative(ref.state, ref.input, kP);

      const Vec3 xi_dd = (ahead.state.cable_rate - behind.state.cable_rate) / (2.0 * h);
      const Vec3 xi_d = (ahead.state.cable_dir - behind.state.cable_dir) / (2.0 * h);
      const Vec4 q_d =
          (quat_coeffs(ahead.state.attitude) - quat_coeffs(behind.state.attitude)) / (2.0 * h);
      worst = std::max({worst, (d.payload_vel - fo.velocity()).norm(),
                        (d.payload_acc - fo.acceleration()).norm(), (d.cable_rate - xi_d).norm(),
                        (d.cable_acc - xi_dd).norm(), (d.attitude_rate - q_d).norm()});
    }
    EXPECT_LT(worst, 1e-6) << "period " << period;
  }
}

TEST(FlatToReference, RoundTripOnPolynomial) {
  const TrajectorySpec spec = fit_polynomial_segments(
      {Vec3(0.0, 0.0, 1.0), Vec3(1.0, 0.5, 1.2), Vec3(2.0, -0.5, 1.0)}, {2.0, 2.5});
  const double h = 1e-4;
  for (int i = 1; i < 45; ++i) {
    const double t = 0.1 * i;
    const FlatReference ref = flat_to_reference(sample_flat(spec, t), kP);
    const FlatReference ahead = flat_to_reference(sample_flat(spec, t + h), kP);
    const FlatReference behind = flat_to_reference(sample_flat(spec, t - h), kP);
    const StateDerivative d = state_derivative(ref.state, ref.input, kP);
    const Vec4 q_d =
        (quat_coeffs(ahead.state.attitude) - quat_coeffs(behind.state.attitude)) / (2.0 * h);
    const Vec3 xi_dd = (ahead.state.cable_rate - behind.state.cable_rate) / (2.0 * h);
    EXPECT_LT((d.attitude_rate - q_d).norm(), 1e-6) << "t " << t;
    EXPECT_LT((d.cable_acc - xi_dd).norm(), 1e-6) << "t " << t;
  }
}

TEST(FlatToReference, Errors) {
  FlatOutput fall;
  fall.derivs[2] = Vec3(0.0, 0.0, -kP.gravity);
  EXPECT_EQ(code_of([&] { flat_to_reference(fall, kP); }), ErrorCode::slack_cable);

  // Hovering payload with a lateral jerk j: xi_dd = e3 j^2 / g^2, so the
  // thrust M g e3 - m_Q l xi_dd vanishes at j^2 = M g^3 / (m_Q l).
  FlatOutput degenerate;
  const double g = kP.gravity;
  degenerate.derivs[3] =
      Vec3(std::sqrt(kP.total_mass() * g * g * g / (kP.robot_mass * kP.cable_length)), 0.0, 0.0);
  EXPECT_EQ(code_of([&] { flat_to_reference(degenerate, kP); }), ErrorCode::degenerate_attitude);
}

TEST(CheckTautness, Examples) {
  FlatOutput fo;
  EXPECT_TRUE(check_tautness(fo, kP));
  fo.derivs[2] = Vec3(0.0, 0.0, -9.81);
  EXPECT_FALSE(check_tautness(fo, kP));
  const TrajectorySpec spec = circle(4.0);
  for (int i = 0; i < 200; ++i) EXPECT_TRUE(check_tautness(sample_flat(spec, 0.02 * i), kP));
}

TEST(CheckTautness, MonotoneInVerticalAcceleration) {
  FlatOutput fo;
  bool previous = false;
  for (double az = -12.0; az <= 2.0; az += 0.01) {
    fo.derivs[2] = Vec3(0.3, -0.2, az);
    const bool now = check_tautness(fo, kP);
    EXPECT_TRUE(!previous || now) << "az " << az;
    previous = now;
  }
}

TEST(FitPolynomial, IdenticalWaypointsGiveHover) {
  const TrajectorySpec spec = fit_polynomial_segments({Vec3(1.0, 2.0, 3.0), Vec3(1.0, 2.0, 3.0)}, {2.0});
  for (double t : {0.0, 0.5, 1.3, 2.0}) {
    const FlatOutput fo = sample_flat(spec, t);
    EXPECT_LT((fo.position() - Vec3(1.0, 2.0, 3.0)).norm(), 1e-12);
    for (int k = 1; k < 6; ++k) EXPECT_LT(fo.derivs[k].norm(), 1e-10);
  }
}

namespace {

// Dense oracle: monomials in physical time per segment, cost integral by
// Gauss-Legendre quadrature, constraints written from scratch, KKT solved
// with an LU after equilibration.
Eigen::VectorXd oracle_coeffs(const std::vector<double>& points, const std::vector<double>& durations) {
  const int segs = static_cast<int>(durations.size());
  const int nc = 12;
  const int n = nc * segs;
  auto deriv_row = [&](double t, int order) {
    Eigen::RowVectorXd r = Eigen::RowVectorXd::Zero(nc);
    for (int i = order; i < nc; ++i) {
      double f = 1.0;
      for (int j = 0; j < order; ++j) f *= i - j;
      r(i) = f * std::pow(t, i - order);
    }
    return r;
  };
  // 8-point Gauss-Legendre integrates degree-10 integrands exactly.
  const double nodes[] = {-0.9602898564975363, -0.7966664774136267, -0.5255324099163290,
                          -0.1834346424956498, 0.1834346424956498,  0.5255324099163290,
                          0.7966664774136267,  0.9602898564975363};
  const double weights[] = {0.1012285362903763, 0.2223810344533745, 0.3137066458778873,
                            0.3626837833783620, 0.3626837833783620, 0.3137066458778873,
                            0.2223810344533745, 0.1012285362903763};
  Eigen::MatrixXd h = Eigen::MatrixXd::Zero(n, n);
  for (int s = 0; s < segs; ++s) {
    const double T = durations[s];
    for (int q = 0; q < 8; ++q) {
      const double t = 0.5 * T * (nodes[q] + 1.0);
      const Eigen::RowVectorXd r = deriv_row(t, 6);
      h.block(nc * s, nc * s, nc, nc) += 0.5 * T * weights[q] * r.transpose() * r;
    }
  }
  std::vector<Eigen::RowVectorXd> rows;
  std::vector<double> rhs;
  auto add = [&](int seg, const Eigen::RowVectorXd& r, double v) {
    Eigen::RowVectorXd full = Eigen::RowVectorXd::Zero(n);
    full.segment(nc * seg, nc) = r;
    rows.push_back(full);
    rhs.push_back(v);
  };
  for (int k = 0; k < 6; ++k) {
    add(0, deriv_row(0.0, k), k == 0 ? points.front() : 0.0);
    add(segs - 1, deriv_row(durations.back(), k), k == 0 ? points.back() : 0.0);
  }
  for (int s = 0; s + 1 < segs; ++s) {
    add(s, deriv_row(durations[s], 0), points[s + 1]);
    for (int k = 0; k < 6; ++k) {
      Eigen::RowVectorXd full = Eigen::RowVectorXd::Zero(n);
      full.segment(nc * s, nc) = deriv_row(durations[s], k);
      full.segment(nc * (s + 1), nc) = -deriv_row(0.0, k);
      rows.push_back(full);
      rhs.push_back(0.0);
    }
  }
  const int m = static_cast<int>(rows.size());
  Eigen::MatrixXd kkt = Eigen::MatrixXd::Zero(n + m, n + m);
  Eigen::VectorXd b = Eigen::VectorXd::Zero(n + m);
  kkt.topLeftCorner(n, n) = h;
  for (int i = 0; i < m; ++i) {
    kkt.block(n + i, 0, 1, n) = rows[i];
    kkt.block(0, n + i, n, 1) = rows[i].transpose();
    b(n + i) = rhs[i];
  }
  // Symmetric equilibration keeps the monomial basis solvable in double.
  const Eigen::VectorXd d = kkt.cwiseAbs().rowwise().maxCoeff().cwiseSqrt().cwiseInverse();
  const Eigen::MatrixXd scaled = d.asDiagonal() * kkt * d.asDiagonal();
  const Eigen::VectorXd y = scaled.partialPivLu().solve(d.asDiagonal() * b);
  return (d.asDiagonal() * y).head(n);
}

double oracle_eval(const Eigen::VectorXd& c, const std::vector<double>& durations, double t, int order) {
  int s = 0;
  while (s + 1 < static_cast<int>(durations.size()) && t > durations[s]) {
    t -= durations[s];
    ++s;
  }
  double v = 0.0;
  for (int i = order; i < 12; ++i) {
    double f = 1.0;
    for (int j = 0; j < order; ++j) f *= i - j;
    v += c(12 * s + i) * f * std::pow(t, i - order);
  }
  return v;
}

}  // namespace

TEST(FitPolynomial, SingleSegmentMatchesDenseOracle) {
  const TrajectorySpec spec = fit_polynomial_segments({Vec3(0.0, 0.0, 1.0), Vec3(1.0, 0.0, 1.0)}, {2.0});
  const Eigen::VectorXd c = oracle_coeffs({0.0, 1.0}, {2.0});
  const FlatOutput mid = sample_flat(spec, 1.0);
  EXPECT_NEAR(mid.velocity().x(), oracle_eval(c, {2.0}, 1.0, 1), 1e-9);
  EXPECT_NEAR(mid.velocity().z(), 0.0, 1e-12);
}

TEST(FitPolynomial, MultiSegmentMatchesDenseOracle) {
  const std::vector<double> durations = {1.5, 2.0, 1.0};
  const std::vector<Vec3> pts = {Vec3(0.0, 0.0, 1.0), Vec3(1.0, 0.5, 1.5), Vec3(2.0, 0.0, 1.0),
                                 Vec3(2.5, -1.0, 0.8)};
  const TrajectorySpec spec = fit_polynomial_segments(pts, durations);
  for (int axis = 0; axis < 3; ++axis) {
    std::vector<double> p;
    for (const Vec3& v : pts) p.push_back(v(axis));
    const Eigen::VectorXd c = oracle_coeffs(p, durations);
    for (double t : {0.2, 0.9, 1.7, 2.6, 3.4, 4.1}) {
      const FlatOutput fo = sample_flat(spec, t);
      for (int k = 0; k < 3; ++k) {
        EXPECT_NEAR(fo.derivs[k](axis), oracle_eval(c, durations, t, k), 1e-7)
            << "axis " << axis << " t " << t << " order " << k;
      }
    }
  }
}

TEST(FitPolynomial, JunctionsAreC5AndEndpointsAtRest) {
  const std::vector<double> durations = {1.0, 3.0, 0.7, 2.0};
  const TrajectorySpec spec = fit_polynomial_segments(
      {Vec3(0, 0, 1), Vec3(1, 1, 1), Vec3(2, 0, 2), Vec3(1, -1, 1), Vec3(0, 0, 1)}, durations);
  const auto& poly = std::get<PolynomialTrajectory>(spec.shape);
  // Derivative of order k at tau in physical units.
  auto eval = [](const PolynomialTrajectory::Segment& s, double tau, int k) {
    Vec3 v = Vec3::Zero();
    for (int i = k; i < PolynomialTrajectory::kCoeffs; ++i) {
      double f = 1.0;
      for (int j = 0; j < k; ++j) f *= i - j;
      v += f * std::pow(tau, i - k) * s.coeffs.row(i).transpose();
    }
    return Vec3(v / std::pow(s.duration, k));
  };
  for (std::size_t s = 0; s + 1 < poly.segments.size(); ++s) {
    for (int k = 0; k <= 5; ++k) {
      const Vec3 left = eval(poly.segments[s], 1.0, k);
      const Vec3 right = eval(poly.segments[s + 1], 0.0, k);
      EXPECT_LT((left - right).norm(), 1e-9 * std::max(1.0, left.norm())) << "junction " << s << " order " << k;
    }
  }
  for (int k = 1; k <= 5; ++k) {
    EXPECT_LT(eval(poly.segments.front(), 0.0, k).norm(), 1e-9);
    EXPECT_LT(eval(poly.segments.back(), 1.0, k).norm(), 1e-9);
  }
  // Holds the final waypoint after the end.
  EXPECT_LT((sample_flat(spec, 100.0).position() - Vec3(0, 0, 1)).norm(), 1e-12);
}

TEST(FitPolynomial, Errors) {
  EXPECT_EQ(code_of([] { fit_polynomial_segments({Vec3::Zero()}, {}); }), ErrorCode::invalid_argument);
  EXPECT_EQ(code_of([] { fit_polynomial_segments({Vec3::Zero(), Vec3::Ones()}, {0.0}); }),
            ErrorCode::invalid_argument);
  EXPECT_EQ(code_of([] { fit_polynomial_segments({Vec3::Zero(), Vec3::Ones(), Vec3::Zero()}, {1e-9, 1e9}); }),
            ErrorCode::ill_conditioned_trajectory);
}

TEST(NormalizedDerivatives, MatchFiniteDifferences) {
  // u(t) = u0 + u1 t + u2 t^2 / 2 + u3 t^3 / 6, normalized numerically.
  std::mt19937 rng(3);
  for (int trial = 0; trial < 50; ++trial) {
    std::array<Vec3, 4> u = {random_vec(rng, 1.0) + Vec3(0, 0, 3), random_vec(rng, 1.0),
                             random_vec(rng, 1.0), random_vec(rng, 1.0)};
    auto n_at = [&](double t) {
      const Vec3 v = u[0] + u[1] * t + u[2] * t * t / 2.0 + u[3] * t * t * t / 6.0;
      return Vec3(v.normalized());
    };
    const auto d = normalized_derivatives(u);
    const double h = 1e-3;
    const Vec3 d1 = (n_at(h) - n_at(-h)) / (2 * h);
    const Vec3 d2 = (n_at(h) - 2 * n_at(0) + n_at(-h)) / (h * h);
    const Vec3 d3 = (n_at(2 * h) - 2 * n_at(h) + 2 * n_at(-h) - n_at(-2 * h)) / (2 * h * h * h);
    EXPECT_LT((d[0] - n_at(0)).norm(), 1e-15);
    EXPECT_LT((d[1] - d1).norm(), 1e-5);
    EXPECT_LT((d[2] - d2).norm(), 1e-5);
    EXPECT_LT((d[3] - d3).norm(), 1e-4);
  }
}
