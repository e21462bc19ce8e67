#include "cablempc/flatness.hpp"

#include "cablempc/errors.hpp"

#include <Eigen/Eigenvalues>
#include <Eigen/QR>

#include <algorithm>
#include <cmath>
#include <numbers>
#include <string>

namespace cablempc {

namespace {

// i! / (i - m)!, zero when m > i.
double falling_factorial(int i, int m) {
  if (m > i) return 0.0;
  double r = 1.0;
  for (int k = 0; k < m; ++k) r *= static_cast<double>(i - k);
  return r;
}

FlatOutput sample_circle(const CircleTrajectory& c, double t) {
  FlatOutput fo;
  const double w = 2.0 * std::numbers::pi / c.period;
  const double phase = w * std::fmod(t, c.period);
  double scale = c.radius;
  for (int k = 0; k < 6; ++k) {
    const double a = phase + 0.5 * std::numbers::pi * k;
    fo.derivs[k] = Vec3(scale * std::cos(a), scale * std::sin(a), 0.0);
    scale *= w;
  }
  fo.derivs[0].z() = c.height;
  return fo;
}

FlatOutput sample_polynomial(const PolynomialTrajectory& poly, double t) {
  FlatOutput fo;
  if (poly.segments.empty()) return fo;
  std::size_t k = 0;
  double start = 0.0;
  while (k + 1 < poly.segments.size() && t >= start + poly.segments[k].duration) {
    start += poly.segments[k].duration;
    ++k;
  }
  const auto& seg = poly.segments[k];
  const double tau = std::clamp((t - start) / seg.duration, 0.0, 1.0);
  for (int m = 0; m < 6; ++m) {
    Vec3 v = Vec3::Zero();
    double pow_tau = 1.0;
    for (int i = m; i < PolynomialTrajectory::kCoeffs; ++i) {
      v += falling_factorial(i, m) * pow_tau * seg.coeffs.row(i).transpose();
      pow_tau *= tau;
    }
    fo.derivs[m] = v / std::pow(seg.duration, m);
  }
  return fo;
}

}  // namespace

double PolynomialTrajectory::total_duration() const {
  double total = 0.0;
  for (const auto& s : segments) total += s.duration;
  return total;
}

double TrajectorySpec::nominal_period() const {
  if (const auto* c = std::get_if<CircleTrajectory>(&shape)) return c->period;
  if (const auto* p = std::get_if<PolynomialTrajectory>(&shape)) return p->total_duration();
  return 0.0;
}

void TrajectorySpec::validate() const {
  if (const auto* c = std::get_if<CircleTrajectory>(&shape)) {
    if (!(c->period > 0.0)) throw Error(ErrorCode::invalid_argument, "circle period must be > 0");
    if (!(c->radius >= 0.0)) throw Error(ErrorCode::invalid_argument, "circle radius must be >= 0");
  } else if (const auto* p = std::get_if<PolynomialTrajectory>(&shape)) {
    if (p->segments.empty()) throw Error(ErrorCode::invalid_argument, "polynomial has no segments");
    for (const auto& s : p->segments) {
      if (!(s.duration > 0.0)) {
        throw Error(ErrorCode::invalid_argument, "segment durations must be > 0");
      }
    }
  }
}

FlatOutput sample_flat(const TrajectorySpec& spec, double t) {
  t = std::max(t, 0.0);
  FlatOutput fo = std::visit(
      [t](const auto& shape) -> FlatOutput {
        using T = std::decay_t<decltype(shape)>;
        if constexpr (std::is_same_v<T, HoverTrajectory>) {
          FlatOutput h;
          h.derivs[0] = shape.position;
          return h;
        } else if constexpr (std::is_same_v<T, CircleTrajectory>) {
          return sample_circle(shape, t);
        } else {
          return sample_polynomial(shape, t);
        }
      },
      spec.shape);
  fo.yaw = spec.yaw;
  fo.yaw_rate = 0.0;
  return fo;
}

std::array<Vec3, 4> normalized_derivatives(const std::array<Vec3, 4>& u) {
  // n = u w with w = (u.u)^(-1/2); differentiate the product three times.
  const double s0 = u[0].squaredNorm();
  const double s1 = 2.0 * u[0].dot(u[1]);
  const double s2 = 2.0 * (u[1].squaredNorm() + u[0].dot(u[2]));
  const double s3 = 2.0 * (3.0 * u[1].dot(u[2]) + u[0].dot(u[3]));
  const double r1 = 1.0 / std::sqrt(s0);
  const double r3 = r1 * r1 * r1;
  const double r5 = r3 * r1 * r1;
  const double r7 = r5 * r1 * r1;
  const double w0 = r1;
  const double w1 = -0.5 * r3 * s1;
  const double w2 = 0.75 * r5 * s1 * s1 - 0.5 * r3 * s2;
  const double w3 = -1.875 * r7 * s1 * s1 * s1 + 2.25 * r5 * s1 * s2 - 0.5 * r3 * s3;
  return {u[0] * w0,
          u[1] * w0 + u[0] * w1,
          u[2] * w0 + 2.0 * u[1] * w1 + u[0] * w2,
          u[3] * w0 + 3.0 * u[2] * w1 + 3.0 * u[1] * w2 + u[0] * w3};
}

bool check_tautness(const FlatOutput& fo, const SystemParams& p, double eps) {
  return fo.acceleration().z() > -p.gravity + eps;
}

namespace {

struct CableKinematics {
  double accel_norm;
  std::array<Vec3, 4> xi;  // xi and its first three derivatives
};

CableKinematics cable_kinematics(const FlatOutput& fo, const SystemParams& p,
                                 double taut_margin) {
  if (!check_tautness(fo, p, taut_margin)) {
    throw Error(ErrorCode::slack_cable,
                "flat output violates the tautness margin (a_z = " +
                    std::to_string(fo.acceleration().z()) + ")");
  }
  const Vec3 a = fo.acceleration() + p.gravity * Vec3::UnitZ();
  const double norm = a.norm();
  if (norm < 1e-6) throw Error(ErrorCode::slack_cable, "payload is in free fall");
  const auto n = normalized_derivatives({a, fo.derivs[3], fo.derivs[4], fo.derivs[5]});
  return {norm, {-n[0], -n[1], -n[2], -n[3]}};
}

}  // namespace

Vec3 flat_robot_acceleration(const FlatOutput& fo, const SystemParams& p) {
  const Vec3 a = fo.acceleration() + p.gravity * Vec3::UnitZ();
  if (a.norm() < 1e-6) throw Error(ErrorCode::slack_cable, "payload is in free fall");
  const auto n = normalized_derivatives({a, fo.derivs[3], fo.derivs[4], fo.derivs[5]});
  return fo.acceleration() + p.cable_length * n[2];
}

FlatReference flat_to_reference(const FlatOutput& fo, const SystemParams& p,
                                double taut_margin) {
  const CableKinematics ck = cable_kinematics(fo, p, taut_margin);
  const double mql = p.robot_mass * p.cable_length;
  const Vec3& xi = ck.xi[0];

  // Thrust vector F = M (a_L + g e3) - m_Q l xi_ddot and its rate.
  const Vec3 force = p.total_mass() * (fo.acceleration() + p.gravity * Vec3::UnitZ()) -
                     mql * ck.xi[2];
  const Vec3 force_dot = p.total_mass() * fo.derivs[3] - mql * ck.xi[3];
  const double f = force.norm();
  if (f < 1e-6) throw Error(ErrorCode::degenerate_attitude, "thrust vector vanishes");
  const Vec3 b3 = force / f;
  const Vec3 b3_dot = (force_dot - b3 * b3.dot(force_dot)) / f;

  const double cy = std::cos(fo.yaw), sy = std::sin(fo.yaw);
  const Vec3 heading(cy, sy, 0.0);
  const Vec3 heading_dot = fo.yaw_rate * Vec3(-sy, cy, 0.0);
  const Vec3 y = b3.cross(heading);
  const double y_norm = y.norm();
  if (y_norm < 1e-6) throw Error(ErrorCode::degenerate_attitude, "thrust axis aligned with heading");
  const Vec3 b2 = y / y_norm;
  const Vec3 y_dot = b3_dot.cross(heading) + b3.cross(heading_dot);
  const Vec3 b2_dot = (y_dot - b2 * b2.dot(y_dot)) / y_norm;
  const Vec3 b1 = b2.cross(b3);
  const Vec3 b1_dot = b2_dot.cross(b3) + b2.cross(b3_dot);

  Mat3 rot;
  rot.col(0) = b1;
  rot.col(1) = b2;
  rot.col(2) = b3;
  Quat q(rot);
  q.normalize();
  if (q.w() < 0.0) q.coeffs() *= -1.0;

  FlatReference ref;
  ref.state.payload_pos = fo.position();
  ref.state.payload_vel = fo.velocity();
  ref.state.cable_dir = xi;
  ref.state.cable_rate = ck.xi[1];
  ref.state.attitude = q;
  ref.input.thrust = f;
  ref.input.body_rate = Vec3(b3.dot(b2_dot), b1.dot(b3_dot), b2.dot(b1_dot));
  ref.tension = p.payload_mass * ck.accel_norm;
  ref.robot_acc = fo.acceleration() - p.cable_length * ck.xi[2];
  return ref;
}

TrajectorySpec fit_polynomial_segments(const std::vector<Vec3>& waypoints,
                                       const std::vector<double>& durations) {
  constexpr int kC = PolynomialTrajectory::kCoeffs;
  constexpr int kOrders = 6;  // continuity through the 5th derivative
  if (waypoints.size() < 2) {
    throw Error(ErrorCode::invalid_argument, "need at least two waypoints");
  }
  if (durations.size() != waypoints.size() - 1) {
    throw Error(ErrorCode::invalid_argument, "need one duration per segment");
  }
  for (double d : durations) {
    if (!(d > 0.0) || !std::isfinite(d)) {
      throw Error(ErrorCode::invalid_argument, "segment durations must be positive");
    }
  }

  const int segs = static_cast<int>(durations.size());
  const int nvar = kC * segs;
  const int ncon = 2 * kOrders + (kOrders + 1) * (segs - 1);

  Eigen::MatrixXd cost = Eigen::MatrixXd::Zero(nvar, nvar);
  Eigen::MatrixXd con = Eigen::MatrixXd::Zero(ncon, nvar);
  Eigen::MatrixXd rhs = Eigen::MatrixXd::Zero(ncon, 3);

  for (int k = 0; k < segs; ++k) {
    const double scale = std::pow(durations[k], -11);
    for (int i = 6; i < kC; ++i) {
      for (int j = 6; j < kC; ++j) {
        cost(k * kC + i, k * kC + j) = scale * falling_factorial(i, 6) *
                                       falling_factorial(j, 6) / static_cast<double>(i + j - 11);
      }
    }
  }

  // Row of the m-th time derivative of segment k at tau in {0, 1}.
  auto deriv_row = [&](int k, int m, double tau) {
    Eigen::RowVectorXd row = Eigen::RowVectorXd::Zero(nvar);
    const double inv = std::pow(durations[k], -m);
    for (int i = m; i < kC; ++i) {
      row(k * kC + i) = inv * falling_factorial(i, m) * std::pow(tau, i - m);
    }
    return row;
  };

  int r = 0;
  for (int m = 0; m < kOrders; ++m) {
    con.row(r) = deriv_row(0, m, 0.0);
    if (m == 0) rhs.row(r) = waypoints.front().transpose();
    ++r;
    con.row(r) = deriv_row(segs - 1, m, 1.0);
    if (m == 0) rhs.row(r) = waypoints.back().transpose();
    ++r;
  }
  for (int k = 0; k + 1 < segs; ++k) {
    con.row(r) = deriv_row(k, 0, 1.0);
    rhs.row(r) = waypoints[k + 1].transpose();
    ++r;
    for (int m = 0; m < kOrders; ++m) {
      con.row(r) = deriv_row(k, m, 1.0) - deriv_row(k + 1, m, 0.0);
      if (m == 0) rhs.row(r) = Eigen::RowVector3d::Zero();
      ++r;
    }
  }

  // Null-space method: rows normalized, c = c_p + Z y, y minimizes the
  // cost restricted to the feasible affine set.
  for (int i = 0; i < ncon; ++i) {
    const double norm = con.row(i).norm();
    con.row(i) /= norm;
    rhs.row(i) /= norm;
  }
  Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(con.transpose());
  qr.setThreshold(1e-12);
  if (qr.rank() < ncon) {
    throw Error(ErrorCode::ill_conditioned_trajectory,
                "polynomial constraints are rank deficient (rank " + std::to_string(qr.rank()) +
                    " of " + std::to_string(ncon) + ")");
  }
  const Eigen::MatrixXd q = qr.householderQ();
  // con' P = Q R, so con = P R' Q' and the particular solution is Q1 R^-T P' rhs.
  const Eigen::MatrixXd r_top = qr.matrixR().topLeftCorner(ncon, ncon).triangularView<Eigen::Upper>();
  const Eigen::MatrixXd permuted = qr.colsPermutation().transpose() * rhs;
  Eigen::MatrixXd sol =
      q.leftCols(ncon) * r_top.transpose().triangularView<Eigen::Lower>().solve(permuted);
  if (nvar > ncon) {
    const Eigen::MatrixXd basis = q.rightCols(nvar - ncon);
    const Eigen::MatrixXd reduced = basis.transpose() * cost * basis;
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(reduced, Eigen::EigenvaluesOnly);
    const double lo = eig.eigenvalues().minCoeff();
    const double hi = eig.eigenvalues().maxCoeff();
    if (!(lo > 0.0) || hi / lo > 1e14) {
      throw Error(ErrorCode::ill_conditioned_trajectory,
                  "polynomial fitting cost is ill-conditioned on the feasible set");
    }
    sol -= basis * reduced.ldlt().solve(basis.transpose() * cost * sol);
  }
  if (!sol.allFinite() || (con * sol - rhs).cwiseAbs().maxCoeff() > 1e-8) {
    throw Error(ErrorCode::ill_conditioned_trajectory, "polynomial fitting system is ill-conditioned");
  }

  PolynomialTrajectory poly;
  for (int k = 0; k < segs; ++k) {
    PolynomialTrajectory::Segment seg;
    seg.duration = durations[k];
    seg.coeffs = sol.block(k * kC, 0, kC, 3);
    poly.segments.push_back(seg);
  }
  TrajectorySpec spec;
  spec.shape = poly;
  return spec;
}

}  // namespace cablempc
