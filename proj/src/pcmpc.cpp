#include "cablempc/pcmpc.hpp"

#include "cablempc/dynamics.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <limits>
#include <string>

namespace cablempc {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

void require(bool ok, const std::string& what) {
  if (!ok) throw Error(ErrorCode::invalid_argument, what);
}

/// Discrete map of `substeps` RK4 steps and its exact sensitivities.
struct Shooting {
  StateVector next;
  StateMatrix a;
  InputMatrix b;
};

Shooting rk4_sensitivities(const StateVector& x0, const InputVector& u, const SystemParams& p,
                           double dt, int substeps) {
  const double h = dt / substeps;
  const StateMatrix eye = StateMatrix::Identity();
  Shooting out{x0, eye, InputMatrix::Zero()};
  for (int s = 0; s < substeps; ++s) {
    const StateVector& x = out.next;
    const StateVector k1 = dynamics(x, u, p);
    const DynamicsJacobians j1 = dynamics_jacobians(x, u, p);
    const StateMatrix k1x = j1.state;
    const InputMatrix k1u = j1.input;

    const StateVector x2 = x + 0.5 * h * k1;
    const StateVector k2 = dynamics(x2, u, p);
    const DynamicsJacobians j2 = dynamics_jacobians(x2, u, p);
    const StateMatrix k2x = j2.state + 0.5 * h * j2.state * k1x;
    const InputMatrix k2u = 0.5 * h * j2.state * k1u + j2.input;

    const StateVector x3 = x + 0.5 * h * k2;
    const StateVector k3 = dynamics(x3, u, p);
    const DynamicsJacobians j3 = dynamics_jacobians(x3, u, p);
    const StateMatrix k3x = j3.state + 0.5 * h * j3.state * k2x;
    const InputMatrix k3u = 0.5 * h * j3.state * k2u + j3.input;

    const StateVector x4 = x + h * k3;
    const StateVector k4 = dynamics(x4, u, p);
    const DynamicsJacobians j4 = dynamics_jacobians(x4, u, p);
    const StateMatrix k4x = j4.state + h * j4.state * k3x;
    const InputMatrix k4u = h * j4.state * k3u + j4.input;

    const StateMatrix step_a = eye + h / 6.0 * (k1x + 2.0 * k2x + 2.0 * k3x + k4x);
    const InputMatrix step_b = h / 6.0 * (k1u + 2.0 * k2u + 2.0 * k3u + k4u);
    out.next = x + h / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
    out.b = step_a * out.b + step_b;
    out.a = step_a * out.a;
  }
  return out;
}

/// Copies `x` with its quaternion sign flipped to agree with `ref`.
StateVector align_quaternion(StateVector x, const StateVector& ref) {
  if (x.segment<4>(kQuat).dot(ref.segment<4>(kQuat)) < 0.0) x.segment<4>(kQuat) *= -1.0;
  return x;
}

/// A linearized soft constraint value + jac_x dx + jac_u du <= slack, where
/// jac_x acts on the state of stage `stage` and jac_u on its input.
struct SoftRow {
  int stage = 0;
  double value = 0.0;
  Eigen::Matrix<double, 1, kStateDim> jac_x = Eigen::Matrix<double, 1, kStateDim>::Zero();
  Eigen::Matrix<double, 1, kInputDim> jac_u = Eigen::Matrix<double, 1, kInputDim>::Zero();
  bool has_input = false;
};

void append_state_rows(std::vector<SoftRow>& rows, int k, const StateVector& x,
                       const OcpConfig& cfg, const SystemParams& p) {
  if (!cfg.fov_constraint) return;
  const double l = p.cable_length;
  FovCone cone_tight = cfg.fov;
  cone_tight.radius *= 1.0 - cfg.fov_margin;
  const FovTerms ft = fov_terms(x.segment<3>(kXi), x.segment<4>(kQuat), l, cone_tight);
  // Rows are scaled to be dimensionless so one penalty weight fits all.
  const double res_scale = 1.0 / (l * l);
  SoftRow cone;
  cone.stage = k;
  cone.value = ft.residual * res_scale;
  cone.jac_x.segment<3>(kXi) = ft.residual_dxi * res_scale;
  cone.jac_x.segment<4>(kQuat) = ft.residual_dq * res_scale;
  rows.push_back(cone);

  SoftRow front;
  front.stage = k;
  front.value = (cfg.front_margin - ft.front) / l;
  front.jac_x.segment<3>(kXi) = -ft.front_dxi / l;
  front.jac_x.segment<4>(kQuat) = -ft.front_dq / l;
  rows.push_back(front);
}

void append_lookahead_rows(std::vector<SoftRow>& rows, const StateVector& x0,
                           const InputVector& u0, const OcpConfig& cfg, const SystemParams& p) {
  if (!cfg.fov_constraint || cfg.fov_lookahead <= 0.0) return;
  const double d = cfg.fov_lookahead;
  StateVector xd = x0 + d * dynamics(x0, u0, p);
  project_to_manifold(xd);
  const InputMatrix du = d * dynamics_jacobians(x0, u0, p).input;
  std::vector<SoftRow> ahead;
  append_state_rows(ahead, 0, xd, cfg, p);
  for (SoftRow& r : ahead) {
    r.jac_u = r.jac_x * du;
    r.jac_x.setZero();
    r.has_input = true;
    rows.push_back(r);
  }
}

void append_input_rows(std::vector<SoftRow>& rows, int k, const StateVector& x,
                       const InputVector& u, const OcpConfig& cfg, const SystemParams& p) {
  if (!cfg.accel_constraint && !cfg.taut_constraint) return;
  const DynamicsJacobians j = dynamics_jacobians(x, u, p);
  if (cfg.accel_constraint) {
    const double l = p.cable_length;
    const Vec3 acc = robot_acceleration(x, u, p);
    const Eigen::Matrix<double, 3, kStateDim> ax =
        j.state.middleRows<3>(kVel) - l * j.state.middleRows<3>(kXiDot);
    const Eigen::Matrix<double, 3, kInputDim> au =
        j.input.middleRows<3>(kVel) - l * j.input.middleRows<3>(kXiDot);
    const double scale = 1.0 / p.gravity;
    for (int axis = 0; axis < 3; ++axis) {
      SoftRow up;
      up.stage = k;
      up.has_input = true;
      up.value = (acc(axis) - cfg.accel_max(axis)) * scale;
      up.jac_x = ax.row(axis) * scale;
      up.jac_u = au.row(axis) * scale;
      rows.push_back(up);
      SoftRow lo = up;
      lo.value = (cfg.accel_min(axis) - acc(axis)) * scale;
      lo.jac_x = -up.jac_x;
      lo.jac_u = -up.jac_u;
      rows.push_back(lo);
    }
  }
  if (cfg.taut_constraint) {
    // T = -m_L s / M with s = xi.F - m_Q l |xi_dot|^2.
    const double mql = p.robot_mass * p.cable_length;
    const Vec3 xi = x.segment<3>(kXi);
    const Vec3 xi_dot = x.segment<3>(kXiDot);
    const Vec4 q = x.segment<4>(kQuat);
    const Vec3 b3 = thrust_axis(q);
    const double s = u(0) * xi.dot(b3) - mql * xi_dot.squaredNorm();
    const double k_t = p.payload_mass / p.total_mass();
    const double scale = 1.0 / (p.payload_mass * p.gravity);
    SoftRow taut;
    taut.stage = k;
    taut.has_input = true;
    taut.value = (cfg.tension_min + k_t * s) * scale;
    taut.jac_x.segment<3>(kXi) = k_t * scale * u(0) * b3.transpose();
    taut.jac_x.segment<3>(kXiDot) = -k_t * scale * 2.0 * mql * xi_dot.transpose();
    taut.jac_x.segment<4>(kQuat) = k_t * scale * u(0) * xi.transpose() * thrust_axis_jacobian(q);
    taut.jac_u(0) = k_t * scale * xi.dot(b3);
    rows.push_back(taut);
  }
}

}  // namespace

void FovCone::validate() const {
  require(height > 0.0 && radius > 0.0, "fov cone height and radius must be positive");
  require((camera_rot_body.transpose() * camera_rot_body - Mat3::Identity()).norm() < 1e-9,
          "camera rotation must be orthonormal");
}

StateVector OcpConfig::default_state_weights() {
  StateVector w;
  w << Vec3::Constant(100.0), Vec3::Constant(10.0), Vec3::Constant(10.0), Vec3::Constant(1.0),
      Vec4::Constant(1.0);
  return w;
}

InputVector OcpConfig::default_input_weights() { return InputVector(0.1, 0.5, 0.5, 0.5); }

void OcpConfig::validate() const {
  require(horizon >= 1, "horizon must be >= 1");
  require(step > 0.0, "step must be > 0");
  require(substeps >= 1, "substeps must be >= 1");
  require((state_weights.array() >= 0.0).all() && (input_weights.array() >= 0.0).all(),
          "weights must be non-negative");
  require(thrust_min < thrust_max, "thrust_min must be below thrust_max");
  require((rate_min.array() < rate_max.array()).all(), "rate bounds must be ordered");
  require((accel_min.array() < accel_max.array()).all(), "accel bounds must be ordered");
  require(soft_penalty > 0.0, "soft_penalty must be positive");
  require(fov_lookahead >= 0.0, "fov_lookahead must be non-negative");
  require(fov_margin >= 0.0 && fov_margin < 1.0, "fov_margin must be in [0, 1)");
  require(regularization >= 1e-8 && slack_regularization > 0.0,
          "regularization must be at least 1e-8");
  fov.validate();
}

FovTerms fov_terms(const Vec3& xi, const Vec4& q, double l, const FovCone& cone) {
  const Vec3 axis_b = cone.axis_body();
  const Vec3 w = l * xi - rotate(q, cone.camera_pos_body);
  const Vec3 z = rotate(q, axis_b);
  const Eigen::Matrix<double, 3, 4> jc = rotate_jacobian(q, cone.camera_pos_body);
  const Eigen::Matrix<double, 3, 4> jk = rotate_jacobian(q, axis_b);
  const double k2 = 1.0 + cone.slope() * cone.slope();
  const double s = w.dot(z);

  FovTerms t;
  t.residual = w.squaredNorm() - k2 * s * s;
  t.front = s;
  t.front_dxi = l * z.transpose();
  t.front_dq = -z.transpose() * jc + w.transpose() * jk;
  t.residual_dxi = 2.0 * l * w.transpose() - 2.0 * k2 * s * t.front_dxi;
  t.residual_dq = -2.0 * w.transpose() * jc - 2.0 * k2 * s * t.front_dq;
  return t;
}

double fov_residual(const SysState& s, const SystemParams& p, const FovCone& cone) {
  const Vec4 q = quat_coeffs(s.attitude.normalized());
  const FovTerms t = fov_terms(s.cable_dir, q, p.cable_length, cone);
  if (t.front <= 0.0) return kInf;
  return t.residual;
}

std::vector<AccelResidual> accel_residuals(const std::vector<FlatOutput>& window,
                                           const SystemParams& p, const Vec3& accel_min,
                                           const Vec3& accel_max) {
  std::vector<AccelResidual> out;
  out.reserve(window.size());
  for (const auto& fo : window) {
    if (!check_tautness(fo, p, 0.0)) {
      throw Error(ErrorCode::slack_cable, "accel_residuals: slack cable in window");
    }
    AccelResidual r;
    r.accel = flat_robot_acceleration(fo, p);
    r.upper = r.accel - accel_max;
    r.lower = accel_min - r.accel;
    out.push_back(r);
  }
  return out;
}

double stage_cost(const SysState& s, const ControlInput& u, const SysState& s_des,
                  const ControlInput& u_des, const OcpConfig& cfg) {
  const StateVector xd = s_des.to_vector();
  const StateVector x = align_quaternion(s.to_vector(), xd);
  const StateVector dx = xd - x;
  const InputVector du = u_des.to_vector() - u.to_vector();
  return 0.5 * dx.dot(cfg.state_weights.cwiseProduct(dx)) +
         0.5 * du.dot(cfg.input_weights.cwiseProduct(du));
}

ReferenceWindow make_reference_window(const TrajectorySpec& traj, double t0,
                                      const OcpConfig& cfg, const SystemParams& p,
                                      double taut_margin) {
  ReferenceWindow w;
  w.states.reserve(cfg.horizon + 1);
  w.inputs.reserve(cfg.horizon);
  for (int k = 0; k <= cfg.horizon; ++k) {
    const FlatReference r = flat_to_reference(sample_flat(traj, t0 + k * cfg.step), p, taut_margin);
    w.states.push_back(r.state);
    if (k < cfg.horizon) w.inputs.push_back(r.input);
  }
  return w;
}

OcpSolution solve(const SysState& x0_state, const ReferenceWindow& ref,
                  const std::optional<OcpSolution>& warm, const OcpConfig& cfg,
                  const SystemParams& p) {
  const auto t_start = std::chrono::steady_clock::now();
  const int n = cfg.horizon;
  const int nu = kInputDim * n;
  require(static_cast<int>(ref.states.size()) == n + 1 && static_cast<int>(ref.inputs.size()) == n,
          "reference window length does not match the horizon");

  // Linearization trajectory.
  std::vector<StateVector> xbar(n + 1);
  std::vector<InputVector> ubar(n);
  const bool use_warm = warm && static_cast<int>(warm->states.size()) == n + 1 &&
                        static_cast<int>(warm->inputs.size()) == n;
  for (int k = 0; k <= n; ++k) {
    xbar[k] = use_warm ? warm->states[k].to_vector() : ref.states[k].to_vector();
    if (k < n) ubar[k] = use_warm ? warm->inputs[k].to_vector() : ref.inputs[k].to_vector();
  }
  StateVector x0 = x0_state.to_vector();
  require(x0.allFinite(), "solve: non-finite initial state");
  for (int k = 0; k <= n; ++k) {
    require(xbar[k].allFinite(), "solve: non-finite linearization state");
    if (k < n) require(ubar[k].allFinite(), "solve: non-finite linearization input");
    project_to_manifold(xbar[k]);
    if (k > 0) xbar[k] = align_quaternion(xbar[k], xbar[k - 1]);
  }
  x0 = align_quaternion(x0, xbar[0]);

  // Shooting sensitivities and defects.
  std::vector<StateMatrix> a(n);
  std::vector<InputMatrix> b(n);
  std::vector<StateVector> defect(n);
  double defect_norm = 0.0;
  for (int k = 0; k < n; ++k) {
    const Shooting sh = rk4_sensitivities(xbar[k], ubar[k], p, cfg.step, cfg.substeps);
    a[k] = sh.a;
    b[k] = sh.b;
    // Compare on the manifold: RK4 drifts off unit norm by O(h^5) per interval,
    // and an unprojected defect would never vanish against projected iterates.
    StateVector next = sh.next;
    project_to_manifold(next);
    defect[k] = next - xbar[k + 1];
    defect_norm = std::max(defect_norm, defect[k].lpNorm<Eigen::Infinity>());
  }

  std::vector<StateVector> xdes(n + 1);
  for (int k = 0; k <= n; ++k) xdes[k] = align_quaternion(ref.states[k].to_vector(), xbar[k]);
  const auto qx = cfg.state_weights.asDiagonal();

  // Soft constraint rows at the linearization point.
  std::vector<SoftRow> rows;
  for (int k = 0; k < n; ++k) append_input_rows(rows, k, xbar[k], ubar[k], cfg, p);
  for (int k = 1; k <= n; ++k) append_state_rows(rows, k, xbar[k], cfg, p);
  append_lookahead_rows(rows, x0, ubar[0], cfg, p);
  const int ns = static_cast<int>(rows.size());

  QpProblem qp;
  Eigen::VectorXd start;
  // Maps the QP solution back to state increments (condensed: G_k du + e_k).
  std::vector<Eigen::MatrixXd> g_mat;
  std::vector<StateVector> e_vec;

  const StateVector e0 = x0 - xbar[0];
  Eigen::VectorXd lower_u(nu), upper_u(nu);
  for (int k = 0; k < n; ++k) {
    lower_u.segment<4>(kInputDim * k) =
        InputVector(cfg.thrust_min, cfg.rate_min.x(), cfg.rate_min.y(), cfg.rate_min.z()) - ubar[k];
    upper_u.segment<4>(kInputDim * k) =
        InputVector(cfg.thrust_max, cfg.rate_max.x(), cfg.rate_max.y(), cfg.rate_max.z()) - ubar[k];
  }

  if (cfg.formulation == OcpFormulation::condensed) {
    const int nz = nu + ns;
    g_mat.assign(n + 1, Eigen::MatrixXd::Zero(kStateDim, nu));
    e_vec.assign(n + 1, StateVector::Zero());
    e_vec[0] = e0;
    for (int k = 0; k < n; ++k) {
      const int cols = kInputDim * k;
      if (cols > 0) g_mat[k + 1].leftCols(cols).noalias() = a[k] * g_mat[k].leftCols(cols);
      g_mat[k + 1].block<kStateDim, kInputDim>(0, cols) = b[k];
      e_vec[k + 1] = a[k] * e_vec[k] + defect[k];
    }

    qp.hessian = Eigen::MatrixXd::Zero(nz, nz);
    qp.gradient = Eigen::VectorXd::Zero(nz);
    auto huu = qp.hessian.topLeftCorner(nu, nu);
    auto gu = qp.gradient.head(nu);
    for (int k = 1; k <= n; ++k) {
      const int cols = kInputDim * std::min(k, n);
      const Eigen::MatrixXd gk = g_mat[k].leftCols(cols);
      const Eigen::MatrixXd qg = qx * gk;
      huu.topLeftCorner(cols, cols).noalias() += gk.transpose() * qg;
      const StateVector r = xbar[k] + e_vec[k] - xdes[k];
      gu.head(cols).noalias() += qg.transpose() * r;
    }
    for (int k = 0; k < n; ++k) {
      const int c = kInputDim * k;
      for (int i = 0; i < kInputDim; ++i) huu(c + i, c + i) += cfg.input_weights(i);
      gu.segment<4>(c) += cfg.input_weights.cwiseProduct(ubar[k] - ref.inputs[k].to_vector());
    }
    huu.diagonal().array() += cfg.regularization;
    for (int j = 0; j < ns; ++j) {
      qp.hessian(nu + j, nu + j) = cfg.slack_regularization;
      qp.gradient(nu + j) = cfg.soft_penalty;
    }

    qp.lower = Eigen::VectorXd::Zero(nz);
    qp.upper = Eigen::VectorXd::Constant(nz, kInf);
    qp.lower.head(nu) = lower_u;
    qp.upper.head(nu) = upper_u;
    qp.ineq = Eigen::MatrixXd::Zero(ns, nz);
    qp.ineq_upper.resize(ns);
    for (int j = 0; j < ns; ++j) {
      const SoftRow& row = rows[j];
      const int k = row.stage;
      qp.ineq.row(j).head(nu) = row.jac_x * g_mat[k];
      if (row.has_input) qp.ineq.block<1, kInputDim>(j, kInputDim * k) += row.jac_u;
      qp.ineq(j, nu + j) = -1.0;
      qp.ineq_upper(j) = -(row.value + row.jac_x.dot(e_vec[k]));
    }
    qp.eq.resize(0, nz);
    qp.eq_rhs.resize(0);

    start = Eigen::VectorXd::Zero(nz);
    for (int i = 0; i < nu; ++i) start(i) = std::clamp(0.0, qp.lower(i), qp.upper(i));
    const Eigen::VectorXd viol = qp.ineq.leftCols(nu) * start.head(nu) - qp.ineq_upper;
    for (int j = 0; j < ns; ++j) start(nu + j) = std::max(0.0, viol(j));
  } else {
    // Variables [du (nu); dx_1..dx_N (16 N); slacks].
    const int nx = kStateDim * n;
    const int nz = nu + nx + ns;
    auto xcol = [&](int k) { return nu + kStateDim * (k - 1); };
    qp.hessian = Eigen::MatrixXd::Zero(nz, nz);
    qp.gradient = Eigen::VectorXd::Zero(nz);
    for (int k = 0; k < n; ++k) {
      const int c = kInputDim * k;
      for (int i = 0; i < kInputDim; ++i) {
        qp.hessian(c + i, c + i) = cfg.input_weights(i) + cfg.regularization;
      }
      qp.gradient.segment<4>(c) = cfg.input_weights.cwiseProduct(ubar[k] - ref.inputs[k].to_vector());
    }
    for (int k = 1; k <= n; ++k) {
      const int c = xcol(k);
      for (int i = 0; i < kStateDim; ++i) {
        qp.hessian(c + i, c + i) = cfg.state_weights(i) + cfg.regularization;
      }
      qp.gradient.segment<kStateDim>(c) = cfg.state_weights.cwiseProduct(xbar[k] - xdes[k]);
    }
    for (int j = 0; j < ns; ++j) {
      qp.hessian(nu + nx + j, nu + nx + j) = cfg.slack_regularization;
      qp.gradient(nu + nx + j) = cfg.soft_penalty;
    }
    qp.lower = Eigen::VectorXd::Constant(nz, -kInf);
    qp.upper = Eigen::VectorXd::Constant(nz, kInf);
    qp.lower.head(nu) = lower_u;
    qp.upper.head(nu) = upper_u;
    qp.lower.tail(ns).setZero();

    // dx_{k+1} - A_k dx_k - B_k du_k = d_k, with dx_0 = e0 fixed.
    qp.eq = Eigen::MatrixXd::Zero(nx, nz);
    qp.eq_rhs.resize(nx);
    for (int k = 0; k < n; ++k) {
      const int r = kStateDim * k;
      qp.eq.block<kStateDim, kStateDim>(r, xcol(k + 1)).setIdentity();
      qp.eq.block<kStateDim, kInputDim>(r, kInputDim * k) = -b[k];
      if (k > 0) {
        qp.eq.block<kStateDim, kStateDim>(r, xcol(k)) = -a[k];
        qp.eq_rhs.segment<kStateDim>(r) = defect[k];
      } else {
        qp.eq_rhs.segment<kStateDim>(r) = defect[0] + a[0] * e0;
      }
    }
    qp.ineq = Eigen::MatrixXd::Zero(ns, nz);
    qp.ineq_upper.resize(ns);
    for (int j = 0; j < ns; ++j) {
      const SoftRow& row = rows[j];
      const int k = row.stage;
      double value = row.value;
      if (k == 0) {
        value += row.jac_x.dot(e0);
      } else {
        qp.ineq.block<1, kStateDim>(j, xcol(k)) = row.jac_x;
      }
      if (row.has_input) qp.ineq.block<1, kInputDim>(j, kInputDim * k) = row.jac_u;
      qp.ineq(j, nu + nx + j) = -1.0;
      qp.ineq_upper(j) = -value;
    }

    start = Eigen::VectorXd::Zero(nz);
    for (int i = 0; i < nu; ++i) start(i) = std::clamp(0.0, qp.lower(i), qp.upper(i));
    StateVector dx = e0;
    for (int k = 0; k < n; ++k) {
      dx = a[k] * dx + b[k] * start.segment<4>(kInputDim * k) + defect[k];
      start.segment<kStateDim>(xcol(k + 1)) = dx;
    }
    const Eigen::VectorXd viol = qp.ineq.leftCols(nu + nx) * start.head(nu + nx) - qp.ineq_upper;
    for (int j = 0; j < ns; ++j) start(nu + nx + j) = std::max(0.0, viol(j));
  }

  QpOptions qopt;
  qopt.max_iterations = cfg.qp_max_iterations;
  const QpResult qr = qp_solve(qp, qopt, start);

  OcpSolution last;
  for (int k = 0; k <= n; ++k) last.states.push_back(SysState::from_vector(xbar[k]));
  for (int k = 0; k < n; ++k) last.inputs.push_back(ControlInput::from_vector(ubar[k]));
  if (qr.status == QpStatus::infeasible || !qr.primal.allFinite()) {
    throw SolverFailure(std::string("QP failed: ") + to_string(qr.status), last);
  }

  OcpSolution sol;
  sol.qp_iterations = qr.iterations;
  sol.qp_status = qr.status;
  const Eigen::VectorXd du = qr.primal.head(nu);
  double step_norm = du.lpNorm<Eigen::Infinity>();
  for (int k = 0; k < n; ++k) {
    InputVector u = ubar[k] + du.segment<4>(kInputDim * k);
    u(0) = std::clamp(u(0), cfg.thrust_min, cfg.thrust_max);
    for (int i = 0; i < 3; ++i) u(1 + i) = std::clamp(u(1 + i), cfg.rate_min(i), cfg.rate_max(i));
    sol.inputs.push_back(ControlInput::from_vector(u));
  }
  sol.states.push_back(SysState::from_vector(x0));
  for (int k = 1; k <= n; ++k) {
    StateVector dx;
    if (cfg.formulation == OcpFormulation::condensed) {
      dx = g_mat[k] * du + e_vec[k];
    } else {
      dx = qr.primal.segment<kStateDim>(nu + kStateDim * (k - 1));
    }
    step_norm = std::max(step_norm, dx.lpNorm<Eigen::Infinity>());
    StateVector x = xbar[k] + dx;
    project_to_manifold(x);
    sol.states.push_back(SysState::from_vector(x));
  }
  sol.max_slack = ns > 0 ? qr.primal.tail(ns).maxCoeff() : 0.0;
  sol.kkt_residual = std::max(step_norm, defect_norm);
  sol.solve_time =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t_start).count();
  return sol;
}

OcpSolution shift_solution(const OcpSolution& sol, double fraction) {
  OcpSolution out = sol;
  const int n = static_cast<int>(sol.inputs.size());
  if (n == 0 || fraction <= 0.0) return out;
  fraction = std::min(fraction, 1.0);
  for (int k = 0; k <= n; ++k) {
    const int k1 = std::min(k + 1, n);
    StateVector x0 = sol.states[k].to_vector();
    const StateVector x1 = align_quaternion(sol.states[k1].to_vector(), x0);
    StateVector x = (1.0 - fraction) * x0 + fraction * x1;
    project_to_manifold(x);
    out.states[k] = SysState::from_vector(x);
    if (k < n) {
      const int j1 = std::min(k + 1, n - 1);
      out.inputs[k] = ControlInput::from_vector((1.0 - fraction) * sol.inputs[k].to_vector() +
                                                fraction * sol.inputs[j1].to_vector());
    }
  }
  return out;
}

PcmpcController::PcmpcController(OcpConfig cfg, SystemParams params)
    : cfg_(std::move(cfg)), params_(std::move(params)) {
  cfg_.validate();
  params_.validate();
}

const OcpSolution& PcmpcController::update(const SysState& x0, const ReferenceWindow& ref,
                                           double elapsed) {
  std::optional<OcpSolution> warm;
  if (last_) warm = shift_solution(*last_, elapsed / cfg_.step);
  try {
    last_ = solve(x0, ref, warm, cfg_, params_);
  } catch (const SolverFailure&) {
    last_.reset();
    throw;
  }
  return *last_;
}

}  // namespace cablempc
