// End-to-end acceptance checks. Prints one PASS/FAIL line per criterion,
// preceded by indented measurements, and exits non-zero on any failure.

#include "cablempc/config.hpp"
#include "cablempc/dynamics.hpp"
#include "cablempc/estimation.hpp"
#include "cablempc/flatness.hpp"
#include "cablempc/pcmpc.hpp"
#include "cablempc/qp.hpp"
#include "cablempc/runner.hpp"
#include "cablempc/simulator.hpp"
#include "test_util.hpp"

#include <array>
#include <cmath>
#include <cstdio>
#include <future>
#include <map>
#include <sstream>
#include <string>
#include <vector>

using namespace cablempc;
using namespace cablempc::test;

namespace {

constexpr std::array<int, 3> kPeriods = {9, 6, 4};

// Published payload position RMSE per axis; runs may exceed them by 50%.
const std::map<int, Vec3> kPaperPositionRmse = {
    {9, Vec3(0.08038, 0.1168, 0.03678)},
    {6, Vec3(0.08076, 0.1062, 0.06130)},
    {4, Vec3(0.2143, 0.2627, 0.07153)},
};
constexpr double kRmseFactor = 1.5;
constexpr double kNoiseFreeRmse = 0.02;
constexpr double kMaxWallTime = 60.0;
constexpr double kAngleErrorMean = 0.06;
constexpr double kRateErrorMean = 0.20;
constexpr double kEstPositionRmse = 0.14;
constexpr double kEstVelocityRmse = 0.19;
constexpr double kFovFraction = 0.99;

class Criterion {
 public:
  explicit Criterion(std::string title) : title_(std::move(title)) {}

  void check(bool ok, const std::string& what) {
    std::printf("  [%s] %s\n", ok ? "ok" : "violated", what.c_str());
    pass_ = pass_ && ok;
  }

  bool finish() const {
    std::printf("%s %s\n", pass_ ? "PASS" : "FAIL", title_.c_str());
    std::fflush(stdout);
    return pass_;
  }

 private:
  std::string title_;
  bool pass_ = true;
};

std::string fmt(const char* format, auto... args) {
  char buf[256];
  std::snprintf(buf, sizeof(buf), format, args...);
  return buf;
}

struct CircleRuns {
  RunResult nominal;
  RunResult noise_free;
};

RunResult run_circle(int period, const std::vector<std::string>& overrides) {
  const std::string path =
      std::string(CABLEMPC_SOURCE_DIR) + "/configs/circle_tc" + std::to_string(period) + ".yaml";
  return run_experiment(load_run_config(path, overrides));
}

// Property suite: compact versions of the invariants the unit tests cover
// in depth.
void property_suite(Criterion& c) {
  const SystemParams p;
  std::mt19937 rng(2024);

  {
    double worst = 0.0;
    for (int i = 0; i < 1000; ++i) {
      const StateVector x = random_state(rng).to_vector();
      const InputVector u = random_input(rng).to_vector();
      const DynamicsJacobians j = dynamics_jacobians(x, u, p);
      const Eigen::MatrixXd fx = numeric_jacobian(
          [&](const StateVector& y) { return Eigen::VectorXd(dynamics(y, u, p)); }, x);
      const Eigen::MatrixXd fu = numeric_jacobian(
          [&](const InputVector& v) { return Eigen::VectorXd(dynamics(x, v, p)); }, u);
      worst = std::max({worst, relative_error(j.state, fx), relative_error(j.input, fu)});

      const Vec6 xe = x.segment<6>(kXi);
      const Vec3 thrust = random_vec(rng, 3.0) + Vec3(0, 0, 3.0);
      const Eigen::MatrixXd pf = numeric_jacobian(
          [&](const Vec6& y) { return Eigen::VectorXd(cable_process(y, thrust, p)); }, xe);
      worst = std::max(worst, relative_error(cable_process_jacobian(xe, thrust, p), pf));

      const Mat3 rot = quat_to_rotation(random_quat(rng));
      const Vec3 w = random_vec(rng, 2.0);
      const Eigen::MatrixXd hf = numeric_jacobian(
          [&](const Vec6& y) { return Eigen::VectorXd(cable_measurement(y, rot, w, p)); }, xe);
      worst = std::max(worst, relative_error(cable_measurement_jacobian(rot, w, p), hf));
    }
    c.check(worst <= 1e-4, fmt("Jacobians vs central differences, 1000 points: max rel err %.2e <= 1e-4", worst));
  }

  {
    double worst = 0.0;
    const double h = 1e-4;
    for (int period : kPeriods) {
      TrajectorySpec spec;
      CircleTrajectory circ;
      circ.period = period;
      spec.shape = circ;
      for (int i = 0; i < 100; ++i) {
        const double t = period * i / 100.0 + 0.5;
        const FlatOutput fo = sample_flat(spec, t);
        const FlatReference ref = flat_to_reference(fo, p);
        const FlatReference ahead = flat_to_reference(sample_flat(spec, t + h), p);
        const FlatReference behind = flat_to_reference(sample_flat(spec, t - h), p);
        const StateDerivative d = state_derivative(ref.state, ref.input, p);
        const Vec3 xi_dd = (ahead.state.cable_rate - behind.state.cable_rate) / (2.0 * h);
        const Vec4 q_d =
            (quat_coeffs(ahead.state.attitude) - quat_coeffs(behind.state.attitude)) / (2.0 * h);
        worst = std::max({worst, (d.payload_acc - fo.acceleration()).norm(),
                          (d.cable_acc - xi_dd).norm(), (d.attitude_rate - q_d).norm()});
      }
    }
    c.check(worst <= 1e-6, fmt("flat-map round trip, 100 samples x 3 periods: %.2e <= 1e-6", worst));
  }

  {
    SysState s = random_state(rng);
    s.payload_vel.setZero();
    const ControlInput u{p.hover_thrust(), Vec3(0.2, -0.1, 0.3)};
    double worst = 0.0;
    for (int i = 0; i < 100000; ++i) {
      s = integrate_step(s, u, p, 0.001);
      worst = std::max({worst, std::abs(s.cable_dir.norm() - 1.0), std::abs(s.attitude.norm() - 1.0),
                        std::abs(s.cable_dir.dot(s.cable_rate))});
    }
    CableBelief b;
    const NoiseConfig nc;
    double min_eig = 0.0;
    double asym = 0.0;
    std::normal_distribution<double> nd(0.0, 0.003);
    for (int i = 0; i < 100000; ++i) {
      b = ekf_predict(b, Vec3(0, 0, p.hover_thrust()), 0.002, p, nc);
      if (i % 17 == 0) {
        const Vec3 meas = Vec3(0, 0, -p.cable_length) + Vec3(nd(rng), nd(rng), nd(rng));
        b = ekf_update(b, meas, std::nullopt, Mat3::Identity(), Vec3::Zero(), p, nc).belief;
      }
      worst = std::max({worst, std::abs(b.cable_dir.norm() - 1.0), std::abs(b.cable_dir.dot(b.cable_rate))});
      asym = std::max(asym, (b.covariance - b.covariance.transpose()).cwiseAbs().maxCoeff());
      min_eig = std::min(min_eig,
                         Eigen::SelfAdjointEigenSolver<Mat6>(b.covariance, Eigen::EigenvaluesOnly)
                             .eigenvalues()
                             .minCoeff());
    }
    c.check(worst <= 1e-9 && asym == 0.0 && min_eig >= -1e-10,
            fmt("manifold over 1e5 steps: norm/orthogonality %.1e <= 1e-9, P asym %.1e, min eig %.1e >= -1e-10",
                worst, asym, min_eig));
  }

  {
    double worst = 0.0;
    for (int i = 0; i < 100; ++i) {
      const QpProblem qp = random_box_qp(rng, 20);
      const QpResult r = qp_solve(qp);
      const double err = r.status == QpStatus::optimal
                             ? (r.primal - projected_gradient_box(qp)).lpNorm<Eigen::Infinity>()
                             : 1.0;
      worst = std::max(worst, err);
    }
    c.check(worst <= 1e-6, fmt("QP vs projected-gradient oracle, 100 box QPs n=20: %.2e <= 1e-6", worst));
  }

  {
    const Vec3 xi0(std::sin(0.5), 0.0, -std::cos(0.5));
    const PendulumTrace tr = run_pendulum(xi0, Vec3(0.0, 1.2, 0.0), p, 10.0, 0.001);
    double worst = 0.0;
    for (double e : tr.energy) {
      worst = std::max(worst, std::abs(e - tr.energy.front()) / std::abs(tr.energy.front()));
    }
    c.check(worst <= 1e-6, fmt("pendulum energy drift over 10 s: %.2e <= 1e-6", worst));
  }

  {
    const OcpConfig cfg;
    TrajectorySpec hover;
    hover.shape = HoverTrajectory{Vec3(0, 0, 1)};
    const ReferenceWindow ref = make_reference_window(hover, 0.0, cfg, p);
    SysState x0;
    x0.payload_pos = Vec3(0, 0, 1);
    std::optional<OcpSolution> sol;
    for (int i = 0; i < 3; ++i) sol = solve(x0, ref, sol, cfg, p);
    const ControlInput& u = sol->inputs.front();
    const double err = std::max(std::abs(u.thrust - 3.18825), u.body_rate.lpNorm<Eigen::Infinity>());
    c.check(err <= 1e-3, fmt("hover SQP fixed point: |u0 - (3.18825,0,0,0)| = %.2e <= 1e-3", err));
  }

  {
    SimConfig cfg;
    CircleTrajectory circ;
    circ.period = 4.0;
    cfg.trajectory.shape = circ;
    cfg.duration = 2.0;
    std::ostringstream a, b;
    write_log_csv(run_closed_loop(cfg), a, 1.0);
    write_log_csv(run_closed_loop(cfg), b, 1.0);
    c.check(a.str() == b.str(), "seeded runs produce bit-identical logs");
  }
}

}  // namespace

int main() {
  std::map<int, std::future<CircleRuns>> pending;
  for (int period : kPeriods) {
    pending[period] = std::async(std::launch::async, [period] {
      return CircleRuns{run_circle(period, {}),
                        run_circle(period, {"noise.enabled=false", "rate_loop_tau=0"})};
    });
  }
  auto ablation = std::async(std::launch::async, [] { return run_circle(4, {"ocp.fov_constraint=false"}); });
  std::map<int, CircleRuns> runs;
  for (auto& [period, f] : pending) runs[period] = f.get();
  const RunResult ablated = ablation.get();

  bool all = true;

  Criterion c1("1 circle tracking: position RMSE <= 1.5x published, <= 0.02 m noise-free, <= 60 s per run");
  for (int period : kPeriods) {
    const CircleRuns& r = runs[period];
    const Vec3 limit = kRmseFactor * kPaperPositionRmse.at(period);
    const Vec3 rmse = r.nominal.report.tracking_position.rmse;
    const Vec3 clean = r.noise_free.report.tracking_position.rmse;
    c1.check(!r.nominal.log.aborted && (rmse.array() <= limit.array()).all(),
             fmt("T_c=%d RMSE (%.4f, %.4f, %.4f) <= (%.4f, %.4f, %.4f)", period, rmse.x(), rmse.y(),
                 rmse.z(), limit.x(), limit.y(), limit.z()));
    c1.check(!r.noise_free.log.aborted && clean.maxCoeff() <= kNoiseFreeRmse,
             fmt("T_c=%d noise-free, no rate lag: RMSE (%.4f, %.4f, %.4f) <= %.2f", period, clean.x(),
                 clean.y(), clean.z(), kNoiseFreeRmse));
    c1.check(std::max(r.nominal.wall_time, r.noise_free.wall_time) <= kMaxWallTime,
             fmt("T_c=%d wall time %.2f s, %.2f s <= %.0f s", period, r.nominal.wall_time,
                 r.noise_free.wall_time, kMaxWallTime));
  }
  all = c1.finish() && all;

  Criterion c2("2 cable estimation: e_angle mean <= 0.06 rad, e_xi_dot mean <= 0.20 1/s");
  for (int period : kPeriods) {
    const MetricsReport& m = runs[period].nominal.report;
    c2.check(m.angle_error.mean <= kAngleErrorMean && m.rate_error.mean <= kRateErrorMean,
             fmt("T_c=%d e_angle %.4f, e_xi_dot %.4f", period, m.angle_error.mean, m.rate_error.mean));
  }
  all = c2.finish() && all;

  Criterion c3("3 payload estimation: RMSE <= 0.14 m and <= 0.19 m/s per axis");
  for (int period : kPeriods) {
    const MetricsReport& m = runs[period].nominal.report;
    const Vec3 pos = m.estimation_position.rmse;
    const Vec3 vel = m.estimation_velocity.rmse;
    c3.check(pos.maxCoeff() <= kEstPositionRmse && vel.maxCoeff() <= kEstVelocityRmse,
             fmt("T_c=%d position (%.4f, %.4f, %.4f) m, velocity (%.4f, %.4f, %.4f) m/s", period,
                 pos.x(), pos.y(), pos.z(), vel.x(), vel.y(), vel.z()));
  }
  all = c3.finish() && all;

  Criterion c4("4 FOV constraint: >= 99% of ticks detectable on every circle, ablation at T_c=4 strictly lower");
  for (int period : kPeriods) {
    for (const auto* r : {&runs[period].nominal, &runs[period].noise_free}) {
      const double f = r->report.fov_inside_fraction;
      c4.check(f >= kFovFraction, fmt("T_c=%d %s: %.4f >= %.2f", period,
                                      r == &runs[period].nominal ? "default noise" : "noise-free", f,
                                      kFovFraction));
    }
  }
  const double with = runs[4].nominal.report.fov_inside_fraction;
  const double without = ablated.report.fov_inside_fraction;
  c4.check(without < with, fmt("T_c=4 without FOV rows %.4f < with %.4f", without, with));
  all = c4.finish() && all;

  Criterion c5("5 property suite");
  property_suite(c5);
  all = c5.finish() && all;

  return all ? 0 : 1;
}
