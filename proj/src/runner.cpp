#include "cablempc/runner.hpp"

#include "cablempc/errors.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iomanip>
#include <iostream>
#include <mutex>
#include <sstream>
#include <thread>

namespace cablempc {

namespace {

void log_msg(LogLevel level, const std::string& msg) {
  static const LogLevel threshold = log_level_from_env();
  if (level > threshold) return;
  static std::mutex mu;
  std::lock_guard<std::mutex> lock(mu);
  static constexpr const char* kNames[] = {"error", "warn", "info", "debug"};
  std::cerr << "[" << kNames[static_cast<int>(level)] << "] " << msg << '\n';
}

RunConfig load_with_options(const RunOptions& opt, const std::vector<std::string>& extra = {}) {
  std::vector<std::string> overrides = opt.overrides;
  overrides.insert(overrides.end(), extra.begin(), extra.end());
  RunConfig rc = load_run_config(opt.config, overrides);
  if (opt.seed) rc.sim.seed = *opt.seed;
  if (opt.out_dir) rc.out_dir = *opt.out_dir;
  return rc;
}

}  // namespace

LogLevel log_level_from_env() {
  const char* env = std::getenv("CABLEMPC_LOG_LEVEL");
  if (!env) return LogLevel::info;
  const std::string v(env);
  if (v == "error") return LogLevel::error;
  if (v == "warn") return LogLevel::warn;
  if (v == "debug") return LogLevel::debug;
  return LogLevel::info;
}

RunResult run_experiment(const RunConfig& rc) {
  RunResult res;
  const auto start = std::chrono::steady_clock::now();
  res.log = run_closed_loop(rc.sim);
  res.wall_time = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  res.report = compute_metrics(res.log, rc.effective_transient_skip());
  res.report.timing = timing_stats(res.log.solve_times);
  return res;
}

nlohmann::json report_json(const MetricsReport& r, bool with_timing) {
  MetricsReport copy = r;
  if (!with_timing) copy.timing.reset();
  return to_json(copy);
}

void write_run_outputs(const RunResult& res, const RunConfig& rc, const std::string& dir) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw Error(ErrorCode::io, "cannot create " + dir + ": " + ec.message());
  write_log_csv(res.log, dir + "/log.csv", rc.effective_transient_skip());

  nlohmann::json j = report_json(res.report, true);
  j["run"] = {{"seed", rc.sim.seed},
              {"duration", rc.sim.duration},
              {"trajectory_period", rc.sim.trajectory.nominal_period()},
              {"wall_time_s", res.wall_time}};
  const std::string path = dir + "/report.json";
  std::ofstream f(path);
  if (!f) throw Error(ErrorCode::io, "cannot open " + path + " for writing");
  f << std::setw(2) << j << '\n';
  if (!f) throw Error(ErrorCode::io, "failed writing " + path);
}

int cmd_run(const RunOptions& opt, std::ostream& out) {
  const RunConfig rc = load_with_options(opt);
  log_msg(LogLevel::info, "running " + opt.config + " for " + std::to_string(rc.sim.duration) + " s");
  const RunResult res = run_experiment(rc);
  write_run_outputs(res, rc, rc.out_dir);
  const auto& p = res.report.tracking_position.rmse;
  out << "wrote " << rc.out_dir << "/log.csv and " << rc.out_dir << "/report.json\n"
      << "position RMSE [m]: " << p.x() << ' ' << p.y() << ' ' << p.z()
      << "  fov inside: " << res.report.fov_inside_fraction
      << "  wall time: " << res.wall_time << " s\n";
  if (res.log.solver_failures > 0) {
    log_msg(LogLevel::warn, std::to_string(res.log.solver_failures) + " solver failures");
  }
  if (res.log.aborted) {
    log_msg(LogLevel::error, "run aborted: " + res.log.diagnostic);
    return 2;
  }
  return 0;
}

MetricsReport metrics_from_log(const std::string& log_path) {
  const ParsedLog parsed = read_log_csv(log_path);
  return compute_metrics(parsed.log, parsed.transient_skip);
}

int cmd_metrics(const std::string& log_path, std::ostream& out) {
  const MetricsReport r = metrics_from_log(log_path);
  out << std::setw(2) << report_json(r, false) << '\n';
  return r.aborted ? 2 : 0;
}

GridAxis GridAxis::parse(const std::string& spec) {
  const auto eq = spec.find('=');
  if (eq == std::string::npos || eq == 0 || eq + 1 == spec.size()) {
    throw Error(ErrorCode::config, "grid '" + spec + "' is not of the form key=v1,v2,...");
  }
  GridAxis axis;
  axis.key = spec.substr(0, eq);
  std::stringstream ss(spec.substr(eq + 1));
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (item.empty()) throw Error(ErrorCode::config, "grid '" + spec + "' has an empty value");
    axis.values.push_back(item);
  }
  return axis;
}

std::vector<SweepCell> run_sweep(const SweepOptions& opt) {
  if (opt.grid.empty()) throw Error(ErrorCode::invalid_argument, "sweep: grid is empty");
  if (opt.seeds < 1) throw Error(ErrorCode::invalid_argument, "sweep: seeds must be >= 1");

  // Cartesian product of the grid axes.
  std::vector<SweepCell> cells(1);
  for (const GridAxis& axis : opt.grid) {
    if (axis.values.empty()) throw Error(ErrorCode::invalid_argument, "sweep: empty grid axis");
    std::vector<SweepCell> next;
    for (const SweepCell& c : cells) {
      for (const std::string& v : axis.values) {
        SweepCell n = c;
        n.overrides.push_back(axis.key + "=" + v);
        n.label += (n.label.empty() ? "" : " ") + axis.key + "=" + v;
        next.push_back(std::move(n));
      }
    }
    cells = std::move(next);
  }

  // Validate every configuration up front so schema errors surface before
  // any run starts.
  const RunConfig base = load_with_options(opt.base);
  for (const SweepCell& c : cells) load_with_options(opt.base, c.overrides);

  struct Job {
    std::size_t cell;
    int seed_index;
  };
  std::vector<Job> jobs;
  for (std::size_t i = 0; i < cells.size(); ++i) {
    for (int s = 0; s < opt.seeds; ++s) jobs.push_back({i, s});
  }
  std::vector<std::optional<MetricsReport>> results(jobs.size());
  std::vector<std::string> errors(jobs.size());

  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t j = next++; j < jobs.size(); j = next++) {
      const Job& job = jobs[j];
      try {
        RunConfig rc = load_with_options(opt.base, cells[job.cell].overrides);
        rc.sim.seed = base.sim.seed + static_cast<std::uint64_t>(job.seed_index);
        log_msg(LogLevel::info, "sweep: " + cells[job.cell].label + " seed " +
                                    std::to_string(rc.sim.seed));
        RunResult res = run_experiment(rc);
        if (res.log.aborted) {
          errors[j] = "aborted: " + res.log.diagnostic;
        } else {
          results[j] = std::move(res.report);
        }
      } catch (const std::exception& e) {
        errors[j] = e.what();
      }
    }
  };
  int n_threads = opt.jobs > 0 ? opt.jobs : static_cast<int>(std::thread::hardware_concurrency());
  n_threads = std::clamp(n_threads, 1, static_cast<int>(jobs.size()));
  std::vector<std::thread> pool;
  for (int i = 1; i < n_threads; ++i) pool.emplace_back(worker);
  worker();
  for (auto& t : pool) t.join();

  for (std::size_t j = 0; j < jobs.size(); ++j) {
    SweepCell& c = cells[jobs[j].cell];
    if (results[j]) {
      c.reports.push_back(std::move(*results[j]));
    } else {
      c.failures.push_back("seed index " + std::to_string(jobs[j].seed_index) + ": " + errors[j]);
      log_msg(LogLevel::error, "sweep: " + c.label + " " + c.failures.back());
    }
  }
  return cells;
}

std::string format_sweep_table(const std::vector<SweepCell>& cells) {
  using Getter = std::function<double(const MetricsReport&)>;
  const std::vector<std::pair<std::string, Getter>> rows = {
      {"pos MAE x [m]", [](const MetricsReport& r) { return r.tracking_position.mean.x(); }},
      {"pos MAE y [m]", [](const MetricsReport& r) { return r.tracking_position.mean.y(); }},
      {"pos MAE z [m]", [](const MetricsReport& r) { return r.tracking_position.mean.z(); }},
      {"pos RMSE x [m]", [](const MetricsReport& r) { return r.tracking_position.rmse.x(); }},
      {"pos RMSE y [m]", [](const MetricsReport& r) { return r.tracking_position.rmse.y(); }},
      {"pos RMSE z [m]", [](const MetricsReport& r) { return r.tracking_position.rmse.z(); }},
      {"vel RMSE x [m/s]", [](const MetricsReport& r) { return r.tracking_velocity.rmse.x(); }},
      {"vel RMSE y [m/s]", [](const MetricsReport& r) { return r.tracking_velocity.rmse.y(); }},
      {"vel RMSE z [m/s]", [](const MetricsReport& r) { return r.tracking_velocity.rmse.z(); }},
      {"max speed [m/s]", [](const MetricsReport& r) { return r.max_speed; }},
      {"est pos RMSE x [m]", [](const MetricsReport& r) { return r.estimation_position.rmse.x(); }},
      {"est pos RMSE y [m]", [](const MetricsReport& r) { return r.estimation_position.rmse.y(); }},
      {"est pos RMSE z [m]", [](const MetricsReport& r) { return r.estimation_position.rmse.z(); }},
      {"est vel RMSE x [m/s]", [](const MetricsReport& r) { return r.estimation_velocity.rmse.x(); }},
      {"est vel RMSE y [m/s]", [](const MetricsReport& r) { return r.estimation_velocity.rmse.y(); }},
      {"est vel RMSE z [m/s]", [](const MetricsReport& r) { return r.estimation_velocity.rmse.z(); }},
      {"e_angle mean [rad]", [](const MetricsReport& r) { return r.angle_error.mean; }},
      {"e_angle std [rad]", [](const MetricsReport& r) { return r.angle_error.std; }},
      {"e_rate mean [1/s]", [](const MetricsReport& r) { return r.rate_error.mean; }},
      {"e_rate std [1/s]", [](const MetricsReport& r) { return r.rate_error.std; }},
      {"fov inside", [](const MetricsReport& r) { return r.fov_inside_fraction; }},
  };

  auto fmt = [](double v) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.4f", v);
    return std::string(buf);
  };

  std::ostringstream os;
  os << "| statistic |";
  for (const SweepCell& c : cells) os << ' ' << c.label << " |";
  os << "\n|---|";
  for (std::size_t i = 0; i < cells.size(); ++i) os << "---|";
  os << '\n';
  for (const auto& [name, get] : rows) {
    os << "| " << name << " |";
    for (const SweepCell& c : cells) {
      if (!c.failures.empty()) {
        os << " FAILED |";
        continue;
      }
      double sum = 0.0, sum_sq = 0.0;
      for (const MetricsReport& r : c.reports) {
        const double v = get(r);
        sum += v;
        sum_sq += v * v;
      }
      const double n = static_cast<double>(c.reports.size());
      const double mean = sum / n;
      const double spread = std::sqrt(std::max(0.0, sum_sq / n - mean * mean));
      os << ' ' << fmt(mean);
      if (c.reports.size() > 1) os << " ± " << fmt(spread);
      os << " |";
    }
    os << '\n';
  }
  return os.str();
}

int cmd_sweep(const SweepOptions& opt, std::ostream& out) {
  const std::vector<SweepCell> cells = run_sweep(opt);
  const std::string table = format_sweep_table(cells);
  out << table;

  bool failed = false;
  nlohmann::json j = nlohmann::json::array();
  for (const SweepCell& c : cells) {
    nlohmann::json cell = {{"label", c.label}, {"overrides", c.overrides}, {"failures", c.failures}};
    cell["reports"] = nlohmann::json::array();
    for (const MetricsReport& r : c.reports) cell["reports"].push_back(report_json(r, true));
    j.push_back(cell);
    failed = failed || !c.failures.empty();
  }
  if (opt.base.out_dir) {
    std::error_code ec;
    std::filesystem::create_directories(*opt.base.out_dir, ec);
    if (ec) throw Error(ErrorCode::io, "cannot create " + *opt.base.out_dir);
    std::ofstream(*opt.base.out_dir + "/sweep.md") << table;
    std::ofstream(*opt.base.out_dir + "/sweep.json") << std::setw(2) << j << '\n';
  }
  return failed ? 1 : 0;
}

}  // namespace cablempc
