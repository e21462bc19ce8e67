#include "cablempc/errors.hpp"
#include "cablempc/runner.hpp"

#include "CLI11.hpp"

#include <iostream>

int main(int argc, char** argv) {
  using namespace cablempc;

  CLI::App app{"Perception-constrained MPC simulator for a quadrotor with a cable-suspended payload"};
  app.require_subcommand(1);

  RunOptions run_opt;
  std::string out_dir;
  std::uint64_t seed = 0;
  auto add_common = [&](CLI::App* sub) {
    sub->add_option("--config", run_opt.config, "YAML run configuration")
        ->required()
        ->check(CLI::ExistingFile);
    sub->add_option("--override", run_opt.overrides, "dotted.key=value, repeatable")
        ->take_all();
    sub->add_option("--out", out_dir, "output directory");
    sub->add_option("--seed", seed, "random seed");
  };

  CLI::App* run = app.add_subcommand("run", "run one closed-loop simulation");
  add_common(run);

  std::string log_path;
  CLI::App* metrics = app.add_subcommand("metrics", "recompute the report from a log file");
  metrics->add_option("log", log_path, "log.csv written by run")->required();

  SweepOptions sweep_opt;
  std::vector<std::string> grid;
  CLI::App* sweep = app.add_subcommand("sweep", "run a parameter grid and tabulate the reports");
  add_common(sweep);
  sweep->add_option("--grid", grid, "key=v1,v2,..., repeatable")->required()->take_all();
  sweep->add_option("--seeds", sweep_opt.seeds, "seeds per grid point")
      ->check(CLI::PositiveNumber);
  sweep->add_option("--jobs", sweep_opt.jobs, "parallel runs (0 = all cores)")
      ->check(CLI::NonNegativeNumber);

  CLI11_PARSE(app, argc, argv);

  try {
    if (!out_dir.empty()) run_opt.out_dir = out_dir;
    if (run->count("--seed") || sweep->count("--seed")) run_opt.seed = seed;
    if (*run) return cmd_run(run_opt, std::cout);
    if (*metrics) return cmd_metrics(log_path, std::cout);
    if (*sweep) {
      sweep_opt.base = run_opt;
      for (const std::string& g : grid) sweep_opt.grid.push_back(GridAxis::parse(g));
      return cmd_sweep(sweep_opt, std::cout);
    }
  } catch (const Error& e) {
    std::cerr << "error (" << to_string(e.code()) << "): " << e.what() << '\n';
    return e.code() == ErrorCode::solver_failure ? 2 : 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 1;
}
