#pragma once

// Flat key=value configuration. Every key maps 1:1 onto one module parameter;
// unknown keys are rejected before anything runs.

#include "sqz/sequencer.hpp"

#include <cstdint>
#include <filesystem>
#include <numbers>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace sqz {

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct ScenarioParams {
  // error_sweep
  int sweep_points = 41;
  double sweep_max_rad = 0.4;
  double sweep_settle_s = 2.0;
  double sweep_average_s = 1.5;
  int immunity_points = 8;
  double immunity_theta_rad = 0.1;
  // opa_sweep
  int opa_points = 21;
  double opa_min_rad = -std::numbers::pi / 4;
  double opa_max_rad = 3 * std::numbers::pi / 4;
  // pol_compare
  int compare_steps = 1000;
  double compare_rate_hz = 30;
  int walk_step_counts = 8;
  double compare_power_noise = 1e-3;
  // coupling_lock
  double coupling_horizon_s = 86400;
  double coupling_tick_s = 1.0;
  double coupling_output_s = 60;
  // power
  double power_drift_pp = 0.15;
  double power_period_s = 60;
  double power_duration_s = 120;
  double power_settle_s = 1.0;
  // stretcher_reset
  double ramp_rad_per_s = 3.0;
  double ramp_horizon_s = 1800;
  // pol_basin
  int basin_points = 13;
  double basin_max_rad = 1.2;

  void validate() const;
};

struct Settings {
  SimConfig sim{};
  ScenarioParams scenario{};
};

struct KeyInfo {
  std::string key;
  std::string doc;
};

/// All documented keys, sorted.
std::vector<KeyInfo> config_keys();

/// Set one key; throws ConfigError for unknown keys or unparsable values.
void apply_setting(Settings& s, const std::string& key, const std::string& value);

/// Parse "key=value" (whitespace trimmed).
std::pair<std::string, std::string> split_assignment(const std::string& text);

/// Flat file: one key=value per line, '#' comments, blank lines ignored.
void load_config_file(Settings& s, const std::filesystem::path& path);

/// Every key with its current value, sorted by key.
std::vector<std::pair<std::string, std::string>> canonical_settings(const Settings& s);

/// FNV-1a 64 over the canonical "key=value\n" listing.
std::uint64_t config_hash(const Settings& s);
std::string hex64(std::uint64_t v);

}  // namespace sqz
