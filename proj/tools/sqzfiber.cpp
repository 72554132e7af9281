// sqzfiber: scenario runner.
//
//   sqzfiber run <scenario> --seed S --compression C --out DIR [--set k=v]... [--check] [--jobs N]
//   sqzfiber keys
//   sqzfiber scenarios

#include "sqz/config.hpp"
#include "sqz/scenarios.hpp"

#include <CLI11.hpp>
#include <Eigen/Core>
#include <json.hpp>

#include <atomic>
#include <chrono>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <mutex>
#include <optional>
#include <thread>

namespace {

constexpr const char* kToolVersion = "0.1.0";

constexpr int kExitOk = 0;
constexpr int kExitConfig = 2;
constexpr int kExitCheck = 3;

std::string versions_eigen() {
  return std::to_string(EIGEN_WORLD_VERSION) + "." + std::to_string(EIGEN_MAJOR_VERSION) + "." +
         std::to_string(EIGEN_MINOR_VERSION);
}

std::string help_footer() {
  std::string s = "\nScenarios and CSV outputs (every CSV starts with a header row):\n";
  for (const auto& sc : sqz::scenario_catalog()) {
    s += "  " + sc.name + ": " + sc.summary + "\n";
    for (const auto& o : sc.outputs) s += "      " + o + "\n";
  }
  s += "  Every run also writes manifest.json (scenario, seed, config_hash, versions, files, checks).\n";
  s += "  Time columns ending in _s are campaign seconds divided by the compression factor.\n";
  s += "\nExit codes: 0 ok, 2 configuration error, 3 check failure (with --check).\n";
  return s;
}

struct SeedRun {
  std::uint64_t seed = 0;
  std::filesystem::path dir;
  sqz::ScenarioResult result;
  double wall_s = 0;
  std::string error;
  bool config_error = false;
};

void write_manifest(const SeedRun& r, const std::string& scenario, const sqz::Settings& st,
                    const std::vector<std::string>& overrides) {
  nlohmann::json j;
  j["scenario"] = scenario;
  j["seed"] = r.seed;
  j["config_hash"] = sqz::hex64(sqz::config_hash(st));
  j["compression"] = st.sim.seq.compression;
  j["overrides"] = overrides;
  j["versions"] = {{"sqzfiber", kToolVersion},
                   {"eigen", versions_eigen()},
                   {"nlohmann_json", std::to_string(NLOHMANN_JSON_VERSION_MAJOR) + "." +
                                         std::to_string(NLOHMANN_JSON_VERSION_MINOR) + "." +
                                         std::to_string(NLOHMANN_JSON_VERSION_PATCH)},
                   {"cli11", CLI11_VERSION},
                   {"compiler", __VERSION__},
                   {"cxx_standard", static_cast<long>(__cplusplus)}};
  j["files"] = r.result.files;
  nlohmann::json checks = nlohmann::json::array();
  for (const auto& c : r.result.checks) checks.push_back({{"name", c.name}, {"pass", c.pass}, {"detail", c.detail}});
  j["checks"] = checks;
  j["passed"] = r.result.passed();
  j["wall_s"] = r.wall_s;
  nlohmann::json cfg = nlohmann::json::object();
  for (const auto& [k, v] : sqz::canonical_settings(st)) cfg[k] = v;
  j["config"] = cfg;
  std::ofstream os(r.dir / "manifest.json", std::ios::binary);
  os << j.dump(2) << '\n';
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Fiber squeezed-light automation simulator"};
  app.footer(help_footer());
  app.require_subcommand(1);

  std::string scenario;
  std::vector<std::uint64_t> seeds{1};
  std::optional<double> compression;
  std::string out_dir;
  std::vector<std::string> sets;
  std::string config_file;
  bool do_check = false;
  int jobs = 1;

  auto* run = app.add_subcommand("run", "run one scenario");
  run->add_option("scenario", scenario, "scenario name")->required();
  run->add_option("--seed", seeds, "seed; several values run independent replicas into DIR/seed_<S>")->expected(1, -1);
  run->add_option("--compression", compression, "time compression factor (overrides seq.compression)");
  run->add_option("--out", out_dir, "output directory")->required();
  run->add_option("--set", sets, "override key=value (repeatable)")->take_all();
  run->add_option("--config", config_file, "flat key=value config file, applied before --set")->check(CLI::ExistingFile);
  run->add_flag("--check", do_check, "exit 3 when a scenario check fails");
  run->add_option("--jobs", jobs, "parallel seeds")->check(CLI::PositiveNumber);

  auto* keys = app.add_subcommand("keys", "list every configuration key with its default");
  auto* list = app.add_subcommand("scenarios", "list scenarios and their CSV outputs");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitConfig;
  }

  if (keys->parsed()) {
    const sqz::Settings defaults;
    const auto vals = sqz::canonical_settings(defaults);
    const auto docs = sqz::config_keys();
    for (std::size_t i = 0; i < vals.size(); ++i)
      std::cout << vals[i].first << " = " << vals[i].second << "    # " << docs[i].doc << '\n';
    return kExitOk;
  }
  if (list->parsed()) {
    std::cout << help_footer();
    return kExitOk;
  }

  // configuration is validated in full before any simulation starts
  sqz::Settings settings;
  try {
    if (!sqz::scenario_exists(scenario)) throw sqz::ConfigError("unknown scenario: " + scenario);
    if (!config_file.empty()) sqz::load_config_file(settings, config_file);
    for (const auto& s : sets) {
      const auto [k, v] = sqz::split_assignment(s);
      sqz::apply_setting(settings, k, v);
    }
    if (compression) settings.sim.seq.compression = *compression;
    settings.sim.validate();
    settings.scenario.validate();
  } catch (const sqz::ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return kExitConfig;
  } catch (const std::exception& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return kExitConfig;
  }

  std::vector<SeedRun> runs(seeds.size());
  for (std::size_t i = 0; i < seeds.size(); ++i) {
    runs[i].seed = seeds[i];
    runs[i].dir = seeds.size() == 1 ? std::filesystem::path(out_dir)
                                    : std::filesystem::path(out_dir) / ("seed_" + std::to_string(seeds[i]));
  }

  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t i = next++; i < runs.size(); i = next++) {
      auto& r = runs[i];
      const auto t0 = std::chrono::steady_clock::now();
      try {
        r.result = sqz::run_scenario(scenario, settings, r.seed, r.dir);
        r.wall_s = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        write_manifest(r, scenario, settings, sets);
      } catch (const sqz::ConfigError& e) {
        r.error = e.what();
        r.config_error = true;
      } catch (const std::exception& e) {
        r.error = e.what();
      }
    }
  };
  const int n_threads = std::max(1, std::min<int>(jobs, static_cast<int>(runs.size())));
  std::vector<std::thread> pool;
  for (int t = 1; t < n_threads; ++t) pool.emplace_back(worker);
  worker();
  for (auto& t : pool) t.join();

  int code = kExitOk;
  bool failed_checks = false;
  for (const auto& r : runs) {
    if (!r.error.empty()) {
      std::cerr << "seed " << r.seed << ": " << (r.config_error ? "config error: " : "error: ") << r.error << '\n';
      code = r.config_error ? kExitConfig : 1;
      continue;
    }
    std::cout << scenario << " seed " << r.seed << " -> " << r.dir.string() << " (" << r.wall_s << " s)\n";
    for (const auto& c : r.result.checks)
      std::cout << "  " << (c.pass ? "PASS " : "FAIL ") << c.name << ": " << c.detail << '\n';
    failed_checks = failed_checks || !r.result.passed();
  }
  if (code != kExitOk) return code;
  if (do_check && failed_checks) return kExitCheck;
  return kExitOk;
}
