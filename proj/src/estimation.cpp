#include "cablempc/estimation.hpp"

#include "cablempc/dynamics.hpp"
#include "cablempc/errors.hpp"

#include <Eigen/Cholesky>
#include <Eigen/Eigenvalues>
#include <Eigen/LU>

#include <cmath>
#include <limits>
#include <numbers>

namespace cablempc {

Mat3 CameraModel::default_intrinsics() {
  Mat3 k;
  k << 300.0, 0.0, 320.0,
       0.0, 300.0, 240.0,
       0.0, 0.0, 1.0;
  return k;
}

void CameraModel::validate() const {
  const bool upper = intrinsics(1, 0) == 0.0 && intrinsics(2, 0) == 0.0 && intrinsics(2, 1) == 0.0;
  if (!upper || !(intrinsics(0, 0) > 0.0) || !(intrinsics(1, 1) > 0.0) ||
      std::abs(intrinsics(2, 2)) < 1e-12) {
    throw Error(ErrorCode::invalid_argument,
                "camera intrinsics must be upper triangular with positive focal lengths");
  }
  if (!(rate > 0.0)) throw Error(ErrorCode::invalid_argument, "camera rate must be positive");
  cone.validate();
}

Vec6 CableBelief::mean() const {
  Vec6 x;
  x << cable_dir, cable_rate;
  return x;
}

CableBelief CableBelief::from_mean(const Vec6& x, const Mat6& cov) {
  CableBelief b;
  b.cable_dir = x.head<3>();
  b.cable_rate = x.tail<3>();
  b.covariance = cov;
  return b;
}

Mat6 NoiseConfig::default_process_cov() {
  Vec6 d;
  d << Vec3::Constant(1e-6), Vec3::Constant(1e-2);
  return d.asDiagonal();
}

Mat6 NoiseConfig::default_measurement_cov() {
  Vec6 d;
  d << Vec3::Constant(1e-5), Vec3::Constant(1e-2);
  return d.asDiagonal();
}

void NoiseConfig::validate() const {
  auto psd = [](const Mat6& m) {
    if ((m - m.transpose()).cwiseAbs().maxCoeff() > 1e-12) return false;
    Eigen::SelfAdjointEigenSolver<Mat6> eig(m, Eigen::EigenvaluesOnly);
    return eig.eigenvalues().minCoeff() >= -1e-12;
  };
  if (!psd(process_cov) || !psd(measurement_cov)) {
    throw Error(ErrorCode::invalid_argument, "noise covariances must be symmetric PSD");
  }
  if (pixel_sigma < 0 || position_sigma < 0 || attitude_sigma < 0 || velocity_sigma < 0 ||
      gyro_sigma < 0 || accel_sigma < 0 || motor_sigma < 0) {
    throw Error(ErrorCode::invalid_argument, "noise sigmas must be non-negative");
  }
}

Vec3 backproject(const TagMeasurement& meas, const CameraModel& cam) {
  Eigen::FullPivLU<Mat3> lu(cam.intrinsics);
  if (!lu.isInvertible()) throw Error(ErrorCode::invalid_argument, "backproject: singular K");
  const Vec3 ray = lu.solve(Vec3(meas.u, meas.v, 1.0));
  return ray.normalized();
}

Eigen::Vector2d project(const Vec3& pc, const CameraModel& cam) {
  const Vec3 h = cam.intrinsics * pc;
  return h.head<2>() / h.z();
}

double solve_depth(const Vec3& bearing, const CameraModel& cam, double l) {
  const Vec3& c = cam.position_body();
  const Vec3 m = cam.rotation_body() * bearing.normalized();
  const double cm = c.dot(m);
  const double disc = cm * cm - c.squaredNorm() + l * l;
  if (disc < 0.0) {
    throw Error(ErrorCode::geometry_inconsistent, "solve_depth: bearing misses the cable sphere");
  }
  const double root = std::sqrt(disc);
  double best = -1.0;
  double best_z = std::numeric_limits<double>::infinity();
  for (double d : {-cm + root, -cm - root}) {
    if (d <= 0.0) continue;
    const double z = (c + d * m).z();
    if (z < best_z) {
      best_z = z;
      best = d;
    }
  }
  if (best <= 0.0) {
    throw Error(ErrorCode::geometry_inconsistent, "solve_depth: no positive depth");
  }
  return best;
}

Vec3 attach_point_body(const Vec3& bearing, double depth, const CameraModel& cam) {
  return cam.position_body() + depth * (cam.rotation_body() * bearing.normalized());
}

AttachPointTracker::Sample AttachPointTracker::update(const Vec3& position, double t) {
  Sample s{position, std::nullopt};
  if (last_ && t > last_->second) {
    const double dt = t - last_->second;
    const Vec3 raw = (position - last_->first) / dt;
    if (!filtered_) {
      filtered_ = raw;
    } else {
      const double alpha = 1.0 - std::exp(-2.0 * std::numbers::pi * cutoff_hz_ * dt);
      *filtered_ += alpha * (raw - *filtered_);
    }
    s.velocity = filtered_;
  }
  last_ = std::make_pair(position, t);
  return s;
}

Vec3 thrust_input(const std::array<double, 4>& w, const Quat& q, const SystemParams& p) {
  double sum = 0.0;
  for (double wi : w) sum += p.thrust_coefficient * wi * wi;
  return sum * quat_to_rotation(q).col(2);
}

Vec6 cable_process(const Vec6& x, const Vec3& u, const SystemParams& p) {
  const Vec3 xi = x.head<3>();
  const Vec3 xi_dot = x.tail<3>();
  Vec6 d;
  d.head<3>() = xi_dot;
  d.tail<3>() = xi.cross(xi.cross(u)) / (p.robot_mass * p.cable_length) - xi_dot.squaredNorm() * xi;
  return d;
}

Mat6 cable_process_jacobian(const Vec6& x, const Vec3& u, const SystemParams& p) {
  const Vec3 xi = x.head<3>();
  const Vec3 xi_dot = x.tail<3>();
  const Mat3 eye = Mat3::Identity();
  Mat6 a = Mat6::Zero();
  a.block<3, 3>(0, 3) = eye;
  a.block<3, 3>(3, 0) =
      (xi.dot(u) * eye + xi * u.transpose() - 2.0 * u * xi.transpose()) /
          (p.robot_mass * p.cable_length) -
      xi_dot.squaredNorm() * eye;
  a.block<3, 3>(3, 3) = -2.0 * xi * xi_dot.transpose();
  return a;
}

Vec6 cable_measurement(const Vec6& x, const Mat3& rot, const Vec3& w, const SystemParams& p) {
  const double l = p.cable_length;
  const Vec3 xi_b = rot.transpose() * x.head<3>();
  Vec6 z;
  z.head<3>() = l * xi_b;
  z.tail<3>() = l * (rot.transpose() * x.tail<3>() - w.cross(xi_b));
  return z;
}

Mat6 cable_measurement_jacobian(const Mat3& rot, const Vec3& w, const SystemParams& p) {
  const double l = p.cable_length;
  Mat6 h = Mat6::Zero();
  h.block<3, 3>(0, 0) = l * rot.transpose();
  h.block<3, 3>(3, 0) = -l * skew(w) * rot.transpose();
  h.block<3, 3>(3, 3) = l * rot.transpose();
  return h;
}

void project_belief(CableBelief& b) {
  b.cable_dir.normalize();
  b.cable_rate -= b.cable_dir * b.cable_dir.dot(b.cable_rate);
  b.covariance = (0.5 * (b.covariance + b.covariance.transpose())).eval();
}

CableBelief ekf_predict(const CableBelief& b, const Vec3& u, double dt, const SystemParams& p,
                        const NoiseConfig& nc) {
  if (!(dt > 0.0)) throw Error(ErrorCode::invalid_argument, "ekf_predict: dt must be positive");
  const Vec6 x = b.mean();
  const Vec6 k1 = cable_process(x, u, p);
  const Vec6 k2 = cable_process(x + 0.5 * dt * k1, u, p);
  const Vec6 k3 = cable_process(x + 0.5 * dt * k2, u, p);
  const Vec6 k4 = cable_process(x + dt * k3, u, p);
  const Vec6 next = x + dt / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4);

  const Mat6 a = cable_process_jacobian(x, u, p) * dt;
  const Mat6 phi = Mat6::Identity() + a + 0.5 * a * a;
  CableBelief out = CableBelief::from_mean(next, phi * b.covariance * phi.transpose() +
                                                     nc.process_cov * dt);
  project_belief(out);
  return out;
}

UpdateResult ekf_update(const CableBelief& b, const Vec3& position_body,
                        const std::optional<Vec3>& velocity_body, const Mat3& rot,
                        const Vec3& body_rate, const SystemParams& p, const NoiseConfig& nc,
                        bool gate) {
  const Vec6 x = b.mean();
  const Vec6 zhat = cable_measurement(x, rot, body_rate, p);
  const Mat6 h_full = cable_measurement_jacobian(rot, body_rate, p);
  const int m = velocity_body ? 6 : 3;

  Eigen::VectorXd innov(m);
  innov.head<3>() = position_body - zhat.head<3>();
  if (velocity_body) innov.tail<3>() = *velocity_body - zhat.tail<3>();
  const Eigen::MatrixXd h = h_full.topRows(m);
  const Eigen::MatrixXd r = nc.measurement_cov.topLeftCorner(m, m);

  const Eigen::MatrixXd s = h * b.covariance * h.transpose() + r;
  const Eigen::LDLT<Eigen::MatrixXd> s_ldlt(s);
  UpdateResult res;
  res.mahalanobis = innov.dot(s_ldlt.solve(innov));
  const double threshold = m == 6 ? kGate6 : kGate3;
  if (gate && res.mahalanobis > threshold) {
    res.belief = b;
    res.accepted = false;
    return res;
  }
  const Eigen::MatrixXd k = s_ldlt.solve(h * b.covariance).transpose();
  const Vec6 next = x + k * innov;
  const Mat6 ikh = Mat6::Identity() - k * h;
  const Mat6 cov = ikh * b.covariance * ikh.transpose() + k * r * k.transpose();
  res.belief = CableBelief::from_mean(next, cov);
  project_belief(res.belief);
  return res;
}

PayloadEstimate payload_state(const Vec3& robot_pos, const Vec3& robot_vel, const CableBelief& b,
                              const SystemParams& p) {
  return {robot_pos + p.cable_length * b.cable_dir, robot_vel + p.cable_length * b.cable_rate};
}

}  // namespace cablempc
