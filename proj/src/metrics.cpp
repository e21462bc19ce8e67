#include "cablempc/metrics.hpp"

#include "cablempc/errors.hpp"

#include <algorithm>
#include <cmath>

namespace cablempc {

namespace {

class AxisAccumulator {
 public:
  void add(const Vec3& err) {
    const Vec3 a = err.cwiseAbs();
    sum_ += a;
    sum_sq_ += a.cwiseProduct(a);
    ++n_;
  }
  AxisStats stats() const {
    AxisStats s;
    if (n_ == 0) return s;
    s.mean = sum_ / n_;
    const Vec3 mean_sq = sum_sq_ / n_;
    s.rmse = mean_sq.cwiseSqrt();
    s.std = (mean_sq - s.mean.cwiseProduct(s.mean)).cwiseMax(0.0).cwiseSqrt();
    return s;
  }

 private:
  Vec3 sum_ = Vec3::Zero();
  Vec3 sum_sq_ = Vec3::Zero();
  long n_ = 0;
};

class ScalarAccumulator {
 public:
  void add(double v) {
    sum_ += v;
    sum_sq_ += v * v;
    max_ = std::max(max_, v);
    ++n_;
  }
  ScalarStats stats() const {
    ScalarStats s;
    if (n_ == 0) return s;
    s.mean = sum_ / n_;
    s.std = std::sqrt(std::max(0.0, sum_sq_ / n_ - s.mean * s.mean));
    s.max = max_;
    return s;
  }

 private:
  double sum_ = 0.0;
  double sum_sq_ = 0.0;
  double max_ = 0.0;
  long n_ = 0;
};

nlohmann::json vec_json(const Vec3& v) { return {{"x", v.x()}, {"y", v.y()}, {"z", v.z()}}; }

nlohmann::json axis_json(const AxisStats& s) {
  return {{"mean", vec_json(s.mean)}, {"std", vec_json(s.std)}, {"rmse", vec_json(s.rmse)}};
}

nlohmann::json scalar_json(const ScalarStats& s) {
  return {{"mean", s.mean}, {"std", s.std}, {"max", s.max}};
}

}  // namespace

Eigen::Vector2d cable_tilt(const Vec3& xi) {
  return {std::atan(xi.y() / -xi.z()), -std::atan(xi.x() / -xi.z())};
}

double angle_error(const Vec3& xi_true, const Vec3& xi_est) {
  const Eigen::Vector2d d = cable_tilt(xi_true) - cable_tilt(xi_est);
  return 0.5 * (std::abs(d.x()) + std::abs(d.y()));
}

MetricsReport compute_metrics(const SimLog& log, double transient_skip) {
  MetricsReport r;
  r.transient_skip = transient_skip;
  r.nominal_speed = log.nominal_speed;
  r.aborted = log.aborted;
  r.diagnostic = log.diagnostic;
  if (log.rows.empty()) {
    // An aborted run may die before its first tick; report it with zero samples.
    if (log.aborted) return r;
    throw Error(ErrorCode::invalid_argument, "metrics: empty log");
  }

  AxisAccumulator track_p, track_v, est_p, est_v;
  ScalarAccumulator angle, rate;
  long window = 0, visible = 0, visible_window = 0, frames = 0, detected = 0, accepted = 0;
  long qp_sum = 0;
  // Small guard so a skip equal to a tick time keeps that tick.
  const double start = transient_skip - 1e-9;

  for (const LogRow& row : log.rows) {
    const double speed = row.truth.payload_vel.norm();
    r.max_speed = std::max(r.max_speed, speed);
    if (row.tag_visible) ++visible;
    if (row.frame) {
      ++frames;
      if (row.detected) ++detected;
    }
    if (row.detected && row.ekf_accepted) ++accepted;
    if (!row.solver_ok) ++r.solver_failures;
    qp_sum += row.qp_iterations;
    r.max_qp_iterations = std::max(r.max_qp_iterations, row.qp_iterations);
    r.max_slack = std::max(r.max_slack, row.max_slack);
    if (row.imu_clipped) ++r.imu_clip_ticks;

    if (row.t < start) continue;
    if (window == 0) r.window_start = row.t;
    r.window_end = row.t;
    ++window;
    r.max_speed_window = std::max(r.max_speed_window, speed);
    if (row.tag_visible) ++visible_window;
    track_p.add(row.truth.payload_pos - row.reference.payload_pos);
    track_v.add(row.truth.payload_vel - row.reference.payload_vel);
    est_p.add(row.estimate.payload_pos - row.truth.payload_pos);
    est_v.add(row.estimate.payload_vel - row.truth.payload_vel);
    angle.add(angle_error(row.truth.cable_dir, row.estimate.cable_dir));
    rate.add((row.truth.cable_rate - row.estimate.cable_rate).norm());
  }
  // A run that aborted inside the transient is summarized over what it has.
  if (window == 0 && log.aborted && transient_skip > 0.0) return compute_metrics(log, 0.0);
  if (window == 0) {
    throw Error(ErrorCode::invalid_argument,
                "metrics: no samples after the transient skip of " +
                    std::to_string(transient_skip) + " s");
  }

  const auto n = static_cast<double>(log.rows.size());
  r.samples = static_cast<int>(window);
  r.tracking_position = track_p.stats();
  r.tracking_velocity = track_v.stats();
  r.estimation_position = est_p.stats();
  r.estimation_velocity = est_v.stats();
  r.angle_error = angle.stats();
  r.rate_error = rate.stats();
  r.fov_inside_fraction = visible / n;
  r.fov_inside_fraction_window = static_cast<double>(visible_window) / window;
  r.frame_detection_fraction = frames ? static_cast<double>(detected) / frames : 0.0;
  r.ekf_acceptance_fraction = detected ? static_cast<double>(accepted) / detected : 0.0;
  r.mean_qp_iterations = qp_sum / n;
  return r;
}

TimingStats timing_stats(const std::vector<double>& seconds) {
  TimingStats t;
  t.count = static_cast<int>(seconds.size());
  if (seconds.empty()) return t;
  std::vector<double> sorted = seconds;
  std::sort(sorted.begin(), sorted.end());
  double sum = 0.0;
  for (double s : sorted) sum += s;
  t.mean = sum / sorted.size();
  t.max = sorted.back();
  const auto idx = static_cast<std::size_t>(std::ceil(0.99 * sorted.size())) - 1;
  t.p99 = sorted[std::min(idx, sorted.size() - 1)];
  return t;
}

nlohmann::json to_json(const MetricsReport& r) {
  nlohmann::json j;
  j["window"] = {{"transient_skip", r.transient_skip},
                 {"start", r.window_start},
                 {"end", r.window_end},
                 {"samples", r.samples}};
  j["tracking"] = {{"position", axis_json(r.tracking_position)},
                   {"velocity", axis_json(r.tracking_velocity)}};
  j["speed"] = {{"max", r.max_speed}, {"max_window", r.max_speed_window}};
  j["speed"]["nominal"] = r.nominal_speed ? nlohmann::json(*r.nominal_speed) : nlohmann::json();
  j["cable"] = {{"angle_error", scalar_json(r.angle_error)},
                {"rate_error", scalar_json(r.rate_error)}};
  j["estimation"] = {{"position", axis_json(r.estimation_position)},
                     {"velocity", axis_json(r.estimation_velocity)}};
  j["perception"] = {{"fov_inside_fraction", r.fov_inside_fraction},
                     {"fov_inside_fraction_window", r.fov_inside_fraction_window},
                     {"frame_detection_fraction", r.frame_detection_fraction},
                     {"ekf_acceptance_fraction", r.ekf_acceptance_fraction}};
  j["solver"] = {{"failures", r.solver_failures},
                 {"mean_qp_iterations", r.mean_qp_iterations},
                 {"max_qp_iterations", r.max_qp_iterations},
                 {"max_slack", r.max_slack}};
  if (r.timing) {
    j["solver"]["timing"] = {{"count", r.timing->count},
                             {"mean_s", r.timing->mean},
                             {"p99_s", r.timing->p99},
                             {"max_s", r.timing->max}};
  }
  j["imu_clip_ticks"] = r.imu_clip_ticks;
  j["aborted"] = r.aborted;
  j["diagnostic"] = r.diagnostic;
  return j;
}

}  // namespace cablempc
