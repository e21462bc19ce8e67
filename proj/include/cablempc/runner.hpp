#pragma once

#include "cablempc/config.hpp"
#include "cablempc/metrics.hpp"

#include <iosfwd>
#include <string>
#include <vector>

namespace cablempc {

enum class LogLevel { error = 0, warn = 1, info = 2, debug = 3 };

/// Verbosity from CABLEMPC_LOG_LEVEL (error|warn|info|debug), default info.
LogLevel log_level_from_env();

struct RunResult {
  SimLog log;
  MetricsReport report;
  double wall_time = 0.0;
};

/// Runs the simulation and computes the report, without touching the disk.
RunResult run_experiment(const RunConfig& rc);

/// Writes `<dir>/log.csv` and `<dir>/report.json`, creating the directory.
void write_run_outputs(const RunResult& res, const RunConfig& rc, const std::string& dir);

/// Report JSON as written by `run`; `with_timing` adds wall-clock fields.
nlohmann::json report_json(const MetricsReport& r, bool with_timing);

/// Subcommand bodies. They return the process exit status and print
/// human-readable output on `out`.
struct RunOptions {
  std::string config;
  std::vector<std::string> overrides;
  std::optional<std::string> out_dir;
  std::optional<std::uint64_t> seed;
};
int cmd_run(const RunOptions& opt, std::ostream& out);

/// Recomputes the report from a log file alone and prints it as JSON.
MetricsReport metrics_from_log(const std::string& log_path);
int cmd_metrics(const std::string& log_path, std::ostream& out);

/// One grid axis, e.g. `trajectory.period=9,6,4`.
struct GridAxis {
  std::string key;
  std::vector<std::string> values;
  static GridAxis parse(const std::string& spec);
};

struct SweepOptions {
  RunOptions base;
  std::vector<GridAxis> grid;
  int seeds = 1;
  int jobs = 0;  // 0 = hardware concurrency
};

struct SweepCell {
  std::string label;
  std::vector<std::string> overrides;
  std::vector<MetricsReport> reports;  // one per successful seed
  std::vector<std::string> failures;
};

std::vector<SweepCell> run_sweep(const SweepOptions& opt);
/// Markdown table: rows are statistics, columns are grid points, entries
/// are mean ± standard deviation across seeds.
std::string format_sweep_table(const std::vector<SweepCell>& cells);
int cmd_sweep(const SweepOptions& opt, std::ostream& out);

}  // namespace cablempc
