#pragma once

// Named scenarios. Each builds its own plant instances from Settings, writes
// CSV files under the output directory and reports pass/fail checks.

#include "sqz/config.hpp"

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace sqz {

struct ScenarioCheck {
  std::string name;
  bool pass = false;
  std::string detail;
};

struct ScenarioResult {
  std::vector<std::string> files;
  std::vector<ScenarioCheck> checks;

  bool passed() const;
};

struct ScenarioInfo {
  std::string name;
  std::string summary;
  /// "file: columns" lines for --help.
  std::vector<std::string> outputs;
};

const std::vector<ScenarioInfo>& scenario_catalog();
bool scenario_exists(const std::string& name);

/// Throws ConfigError for an unknown scenario or invalid settings.
ScenarioResult run_scenario(const std::string& name, const Settings& settings, std::uint64_t seed,
                            const std::filesystem::path& dir);

ScenarioResult scenario_error_sweep(const Settings& s, std::uint64_t seed, const std::filesystem::path& dir);
ScenarioResult scenario_opa_sweep(const Settings& s, std::uint64_t seed, const std::filesystem::path& dir);
ScenarioResult scenario_pol_compare(const Settings& s, std::uint64_t seed, const std::filesystem::path& dir);
ScenarioResult scenario_pol_basin(const Settings& s, std::uint64_t seed, const std::filesystem::path& dir);
ScenarioResult scenario_coupling_lock(const Settings& s, std::uint64_t seed, const std::filesystem::path& dir);
ScenarioResult scenario_longrun(const Settings& s, std::uint64_t seed, const std::filesystem::path& dir);
ScenarioResult scenario_power(const Settings& s, std::uint64_t seed, const std::filesystem::path& dir);
ScenarioResult scenario_stretcher_reset(const Settings& s, std::uint64_t seed, const std::filesystem::path& dir);

/// Least-squares k for y = k f(x), and the coefficient of determination.
struct ProportionalFit {
  double k = 0;
  double r2 = 0;
};
ProportionalFit fit_proportional(const std::vector<double>& f, const std::vector<double>& y);

}  // namespace sqz
