#pragma once

#include "cablempc/simulator.hpp"

#include <optional>
#include <string>
#include <vector>

namespace cablempc {

struct RunConfig {
  SimConfig sim;
  std::string out_dir = "out";
  /// Defaults to one trajectory period (1 s for hover).
  std::optional<double> transient_skip;

  double effective_transient_skip() const;
};

/// Parses a YAML run configuration. `overrides` are `dotted.key=value`
/// strings applied to the document before validation; values are parsed as
/// YAML. Unknown keys and type errors raise Error(config) with the source
/// line and column.
RunConfig parse_run_config(const std::string& text, const std::vector<std::string>& overrides = {},
                           const std::string& source = "<config>");
RunConfig load_run_config(const std::string& path,
                          const std::vector<std::string>& overrides = {});

}  // namespace cablempc
