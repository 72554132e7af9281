#include "sqz/config.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <functional>
#include <map>

namespace sqz {

namespace {

struct Binding {
  std::string doc;
  std::function<void(const std::string&)> set;
  std::function<std::string()> get;
};

std::string fmt17(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

double parse_double(const std::string& key, const std::string& v) {
  double out = 0;
  const auto* end = v.data() + v.size();
  const auto r = std::from_chars(v.data(), end, out);
  if (r.ec != std::errc() || r.ptr != end || !std::isfinite(out)) throw ConfigError(key + ": not a number: '" + v + "'");
  return out;
}

int parse_int(const std::string& key, const std::string& v) {
  long long out = 0;
  const auto* end = v.data() + v.size();
  const auto r = std::from_chars(v.data(), end, out);
  if (r.ec != std::errc() || r.ptr != end || out < INT32_MIN || out > INT32_MAX)
    throw ConfigError(key + ": not an integer: '" + v + "'");
  return static_cast<int>(out);
}

bool parse_bool(const std::string& key, const std::string& v) {
  if (v == "1" || v == "true" || v == "on") return true;
  if (v == "0" || v == "false" || v == "off") return false;
  throw ConfigError(key + ": not a boolean: '" + v + "'");
}

using Registry = std::map<std::string, Binding>;

void num(Registry& r, const std::string& key, double& f, std::string doc) {
  r[key] = {std::move(doc), [&f, key](const std::string& v) { f = parse_double(key, v); }, [&f] { return fmt17(f); }};
}

void integer(Registry& r, const std::string& key, int& f, std::string doc) {
  r[key] = {std::move(doc), [&f, key](const std::string& v) { f = parse_int(key, v); }, [&f] { return std::to_string(f); }};
}

void flag(Registry& r, const std::string& key, bool& f, std::string doc) {
  r[key] = {std::move(doc), [&f, key](const std::string& v) { f = parse_bool(key, v); }, [&f] { return std::string(f ? "1" : "0"); }};
}

Registry build(Settings& s) {
  Registry r;
  auto& p = s.sim.plant;
  num(r, "plant.sample_rate_hz", p.sample_rate_hz, "plant sample clock (Hz)");
  num(r, "plant.beat_hz", p.beat_hz, "probe frequency offset from the LO (Hz)");
  num(r, "plant.modulation_hz", p.modulation_hz, "polarization modulation frequency (Hz)");
  num(r, "plant.probe_source_w", p.probe_source_w, "probe power before the attenuator (W)");
  num(r, "plant.lo_source_w", p.lo_source_w, "LO power before the attenuator (W)");
  num(r, "plant.pump_power_w", p.pump_power_w, "pump power at the OPA (W)");
  num(r, "plant.power_noise_rms", p.power_noise_rms, "fractional residual power noise after the monitor taps");
  num(r, "plant.power_noise_tau_s", p.power_noise_tau_s, "correlation time of the residual power noise (s)");
  for (auto [name, m] : {std::pair<const char*, MonitorModel*>{"probe", &p.probe_monitor}, {"lo", &p.lo_monitor}}) {
    const std::string k = std::string("plant.") + name + "_monitor.";
    num(r, k + "pick", m->pick, "fraction picked off by each monitor tap");
    num(r, k + "first_ohm", m->first_ohm, "transimpedance of the sensitive monitor diode (ohm)");
    num(r, k + "second_ohm", m->second_ohm, "transimpedance of the second monitor diode (ohm)");
    num(r, k + "second_atten_db", m->second_atten_db, "attenuation in front of the second diode (dB)");
    num(r, k + "saturation_v", m->saturation, "monitor diode saturation (V)");
    num(r, k + "noise_v", m->noise_v, "monitor reading noise (V rms)");
  }
  num(r, "plant.opa.kappa", p.opa.kappa, "squeeze parameter per sqrt(W) of pump");
  num(r, "plant.opa.insertion_loss", p.opa.insertion_loss, "OPA insertion loss (fraction)");
  num(r, "plant.opa.thermal_tau_s", p.opa.thermal_settle_tau_s, "OPA thermal settling time constant (s)");
  num(r, "plant.opa.thermal_phase_rad", p.opa.thermal_phase_rad, "OPA beat-phase shift once warmed (rad)");
  num(r, "plant.downstream_efficiency", p.downstream_efficiency, "transmission from OPA output to the homodyne diodes");
  num(r, "plant.bs2_tap", p.bs2_tap, "fraction of the OPA output sent to PD5");
  num(r, "plant.pd5_transimpedance", p.pd5_transimpedance, "PD5 transimpedance (ohm)");
  num(r, "plant.pd5_gain", p.pd5_gain, "PD5 post gain");
  num(r, "plant.bs.temp_coeff", p.bs_hd.temp_coeff, "splitting-ratio change per degC");
  num(r, "plant.bs.pol_coeff", p.bs_hd.pol_coeff, "splitting-ratio change at orthogonal input polarization");
  num(r, "plant.coupler_lag_s", p.coupler_lag_s, "thermal lag of the splitter (s)");
  num(r, "plant.hd.quantum_efficiency", p.hd.quantum_efficiency, "homodyne diode quantum efficiency");
  num(r, "plant.hd.transimpedance", p.hd.transimpedance, "homodyne transimpedance (ohm)");
  num(r, "plant.hd.post_gain", p.hd.post_gain, "homodyne DC post gain");
  num(r, "plant.hd.saturation_v", p.hd.saturation, "homodyne DC saturation (V)");
  num(r, "plant.dc_noise_v", p.dc_noise_v, "noise on each homodyne DC reading (V rms)");
  num(r, "plant.beat_noise_v", p.beat_noise_v, "white noise on rendered beat samples (V rms)");
  num(r, "plant.stretcher.rad_per_volt", p.stretcher.rad_per_volt, "fiber stretcher phase per volt (rad/V)");
  num(r, "plant.stretcher.max_voltage", p.stretcher.max_voltage, "fiber stretcher voltage range (V)");
  num(r, "plant.probe_pol_offset_rad", p.probe_pol_offset_rad, "initial probe great-circle offset from optimum (rad)");
  num(r, "plant.lo_pol_offset_rad", p.lo_pol_offset_rad, "initial LO great-circle offset from optimum (rad)");
  for (int c = 0; c < kDriftChannels; ++c) {
    auto& d = p.drifts[c];
    const std::string k = "drift." + std::string(to_string(static_cast<DriftChannel>(c))) + ".";
    num(r, k + "walk", d.walk, "random-walk strength (units/sqrt(s))");
    num(r, k + "ramp", d.ramp, "linear ramp (units/s)");
    num(r, k + "sine_amplitude", d.sine_amplitude, "sinusoid amplitude (units)");
    num(r, k + "sine_period_s", d.sine_period_s, "sinusoid period (s), 0 disables");
    num(r, k + "sine_phase", d.sine_phase, "sinusoid phase (rad)");
  }

  auto& l = s.sim.lockin;
  num(r, "lockin.carrier_q", l.carrier_q, "carrier band-pass Q");
  num(r, "lockin.post_square_lpf_hz", l.post_square_lpf_hz, "envelope low-pass corner (Hz)");
  num(r, "lockin.dc_block_hz", l.dc_block_hz, "envelope DC-block corner (Hz)");
  num(r, "lockin.demod_hpf_hz", l.demod_hpf_hz, "reference high-pass corner (Hz)");
  num(r, "lockin.second_harmonic_br_hz", l.second_harmonic_br_hz, "second-harmonic notch center (Hz)");
  num(r, "lockin.second_harmonic_q", l.second_harmonic_q, "second-harmonic notch Q");
  num(r, "lockin.output_lpf_hz", l.output_lpf_hz, "output low-pass corner (Hz)");
  integer(r, "lockin.downsample", l.downsample, "decimation factor after the envelope");
  r["lockin.detector"] = {"envelope detector: magnitude | square_law",
                          [&l](const std::string& v) {
                            if (v == "magnitude")
                              l.detector = EnvelopeDetector::Magnitude;
                            else if (v == "square_law")
                              l.detector = EnvelopeDetector::SquareLaw;
                            else
                              throw ConfigError("lockin.detector: expected magnitude or square_law, got '" + v + "'");
                          },
                          [&l] { return std::string(l.detector == EnvelopeDetector::Magnitude ? "magnitude" : "square_law"); }};

  auto& q = s.sim.seq;
  num(r, "seq.horizon_s", q.horizon_s, "campaign length (s)");
  num(r, "seq.measurement_period_s", q.measurement_period_s, "measurement slot length (s)");
  num(r, "seq.alignment_period_s", q.alignment_period_s, "alignment period (s)");
  num(r, "seq.compression", q.compression, "time compression; output t_s = campaign time / compression");
  num(r, "seq.tick_s", q.tick_s, "fast control tick (s)");
  num(r, "seq.background_tick_s", q.background_tick_s, "idle tick (s)");
  num(r, "seq.dc_read_interval_s", q.dc_read_interval_s, "homodyne DC reading interval outside fast ticks (s)");
  num(r, "seq.power_settle_s", q.power_settle_s, "power-loop settle after a target change (s)");
  num(r, "seq.thermal_wait_s", q.thermal_wait_s, "OPA thermal wait at compression 1 (s)");
  num(r, "seq.lock_timeout_s", q.lock_timeout_s, "phase-lock acquisition timeout (s)");
  integer(r, "seq.samples_per_level", q.samples_per_level, "model evaluations per variance level");
  num(r, "seq.sample_spacing_s", q.sample_spacing_s, "spacing of variance evaluations (s)");
  num(r, "seq.phase_jitter_rms", q.phase_jitter_rms, "fast phase jitter inside one evaluation (rad)");
  num(r, "seq.level_noise", q.level_noise, "fractional scatter of one variance evaluation");
  num(r, "seq.coupling_stage_s", q.coupling_stage_s, "coupling-ratio alignment duration (s)");
  num(r, "seq.log_interval_s", q.log_interval_s, "loop log decimation (s)");
  num(r, "seq.coupling_log_interval_s", q.coupling_log_interval_s, "coupling log decimation (s)");
  flag(r, "seq.loops_off", q.loops_off, "disable polarization and coupling control after the first alignment");
  flag(r, "seq.pump_disabled", q.pump_disabled, "keep the pump shutter closed");
  num(r, "seq.target.probe_opa_align_w", q.targets.probe_opa_align_w, "probe power for OPA alignment (W)");
  num(r, "seq.target.probe_hd_align_w", q.targets.probe_hd_align_w, "probe power for HD alignment (W)");
  num(r, "seq.target.probe_measure_w", q.targets.probe_measure_w, "probe power during measurement (W)");
  num(r, "seq.target.lo_align_w", q.targets.lo_align_w, "LO power for alignment (W)");
  num(r, "seq.target.lo_measure_w", q.targets.lo_measure_w, "LO power during measurement (W)");
  num(r, "seq.relock_tolerance_rad", q.relock_tolerance_rad, "phase error bound ending a relock interval (rad)");
  integer(r, "seq.relock_ticks", q.relock_ticks, "consecutive in-bound ticks ending a relock interval");

  num(r, "loops.power.gain", q.power.loop_gain, "power loop gain on log transmission (1/s)");
  num(r, "loops.opa.gain", q.opa_lock.loop_gain, "OPA phase loop gain (1/s)");
  num(r, "loops.opa.min_amplitude_v", q.opa_lock.min_amplitude, "OPA carrier amplitude below which the loop idles (V)");
  num(r, "loops.hd.gain", q.hd_lock.loop_gain, "homodyne phase loop gain (1/s)");
  num(r, "loops.hd.min_amplitude_v", q.hd_lock.min_amplitude, "homodyne carrier amplitude below which the loop idles (V)");
  num(r, "loops.pol.modulation_counts", q.pol.modulation_counts, "piezo modulation amplitude (counts)");
  integer(r, "loops.pol.cycles", q.pol.cycles, "piezo 1-2-3 sweeps per alignment");
  num(r, "loops.pol.threshold", q.pol.threshold, "|beta| convergence threshold (V); 0 calibrates from the noise floor");
  num(r, "loops.pol.threshold_factor", q.pol.threshold_factor, "threshold in units of the noise floor");
  num(r, "loops.pol.settle_s", q.pol.settle_s, "settle after a modulation change (s)");
  num(r, "loops.pol.max_integrate_s", q.pol.max_integrate_s, "integration limit per piezo (s)");
  num(r, "loops.pol.bandwidth_hz", q.pol.bandwidth_hz, "polarization loop bandwidth (Hz)");
  integer(r, "loops.pol.polarity", q.pol.polarity, "+1 maximizes the beat, -1 minimizes it");
  num(r, "loops.coupling.gain", q.coupling.loop_gain, "coupling loop gain (degC/(V s))");
  num(r, "loops.coupling.window_s", q.coupling.window_s, "DC averaging window (s)");
  num(r, "loops.coupling.slew_c_per_s", q.coupling.slew_c_per_s, "Peltier command slew limit (degC/s)");
  flag(r, "loops.coupling.thermistor_hold", q.coupling.thermistor_hold, "hold the temperature instead of locking the DC");

  auto& c = s.scenario;
  integer(r, "scenario.sweep_points", c.sweep_points, "error_sweep grid size");
  num(r, "scenario.sweep_max_rad", c.sweep_max_rad, "error_sweep half range (rad)");
  num(r, "scenario.sweep_settle_s", c.sweep_settle_s, "settle per sweep point (s)");
  num(r, "scenario.sweep_average_s", c.sweep_average_s, "averaging at the end of each sweep point (s)");
  integer(r, "scenario.immunity_points", c.immunity_points, "optical phase values for the immunity sweep");
  num(r, "scenario.immunity_theta_rad", c.immunity_theta_rad, "fixed mismatch for the immunity sweep (rad)");
  integer(r, "scenario.opa_points", c.opa_points, "opa_sweep grid size");
  num(r, "scenario.opa_min_rad", c.opa_min_rad, "opa_sweep start (rad)");
  num(r, "scenario.opa_max_rad", c.opa_max_rad, "opa_sweep end (rad)");
  integer(r, "scenario.compare_steps", c.compare_steps, "pol_compare steps");
  num(r, "scenario.compare_rate_hz", c.compare_rate_hz, "pol_compare step rate (1/s)");
  integer(r, "scenario.walk_step_counts", c.walk_step_counts, "random-walk step (counts)");
  num(r, "scenario.compare_power_noise", c.compare_power_noise, "power noise during pol_compare (fraction)");
  num(r, "scenario.coupling_horizon_s", c.coupling_horizon_s, "coupling_lock duration (s)");
  num(r, "scenario.coupling_tick_s", c.coupling_tick_s, "coupling_lock loop tick (s)");
  num(r, "scenario.coupling_output_s", c.coupling_output_s, "coupling_lock output interval (s)");
  num(r, "scenario.power_drift_pp", c.power_drift_pp, "power scenario peak-to-peak source drift (fraction)");
  num(r, "scenario.power_period_s", c.power_period_s, "power scenario drift period (s)");
  num(r, "scenario.power_duration_s", c.power_duration_s, "power scenario run per target (s)");
  num(r, "scenario.power_settle_s", c.power_settle_s, "power scenario settle excluded from statistics (s)");
  num(r, "scenario.ramp_rad_per_s", c.ramp_rad_per_s, "stretcher_reset forced LO phase ramp (rad/s)");
  num(r, "scenario.ramp_horizon_s", c.ramp_horizon_s, "stretcher_reset campaign length (s)");
  integer(r, "scenario.basin_points", c.basin_points, "pol_basin grid size");
  num(r, "scenario.basin_max_rad", c.basin_max_rad, "pol_basin largest initial LO offset (rad)");
  return r;
}

}  // namespace

void ScenarioParams::validate() const {
  if (sweep_points < 3 || immunity_points < 2 || opa_points < 3 || compare_steps < 1 || walk_step_counts < 1 ||
      basin_points < 2)
    throw ConfigError("scenario grid sizes too small");
  for (double v : {sweep_max_rad, sweep_settle_s, sweep_average_s, compare_rate_hz, coupling_horizon_s, coupling_tick_s,
                   coupling_output_s, power_period_s, power_duration_s, ramp_horizon_s, basin_max_rad})
    if (!(v > 0)) throw ConfigError("scenario durations and ranges must be positive");
  if (sweep_average_s >= sweep_settle_s) throw ConfigError("scenario.sweep_average_s must be shorter than the settle time");
  if (!(opa_max_rad > opa_min_rad)) throw ConfigError("scenario.opa_max_rad must exceed scenario.opa_min_rad");
  if (!(power_drift_pp >= 0 && power_drift_pp < 1)) throw ConfigError("scenario.power_drift_pp must lie in [0, 1)");
  if (!(power_settle_s >= 0 && power_settle_s < power_duration_s)) throw ConfigError("scenario.power_settle_s invalid");
  if (!(compare_power_noise >= 0)) throw ConfigError("scenario.compare_power_noise must be >= 0");
}

std::vector<KeyInfo> config_keys() {
  Settings s;
  std::vector<KeyInfo> out;
  for (const auto& [k, b] : build(s)) out.push_back({k, b.doc});
  return out;
}

void apply_setting(Settings& s, const std::string& key, const std::string& value) {
  auto r = build(s);
  auto it = r.find(key);
  if (it == r.end()) throw ConfigError("unknown key: " + key);
  it->second.set(trim(value));
}

std::pair<std::string, std::string> split_assignment(const std::string& text) {
  const auto eq = text.find('=');
  if (eq == std::string::npos) throw ConfigError("expected key=value, got '" + text + "'");
  auto key = trim(text.substr(0, eq));
  if (key.empty()) throw ConfigError("empty key in '" + text + "'");
  return {key, trim(text.substr(eq + 1))};
}

void load_config_file(Settings& s, const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw ConfigError("cannot read config file " + path.string());
  std::string line;
  int n = 0;
  while (std::getline(is, line)) {
    ++n;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    if (trim(line).empty()) continue;
    try {
      const auto [k, v] = split_assignment(line);
      apply_setting(s, k, v);
    } catch (const ConfigError& e) {
      throw ConfigError(path.string() + ":" + std::to_string(n) + ": " + e.what());
    }
  }
}

std::vector<std::pair<std::string, std::string>> canonical_settings(const Settings& s) {
  Settings copy = s;
  std::vector<std::pair<std::string, std::string>> out;
  for (const auto& [k, b] : build(copy)) out.emplace_back(k, b.get());
  return out;
}

std::uint64_t config_hash(const Settings& s) {
  std::uint64_t h = 14695981039346656037ull;
  for (const auto& [k, v] : canonical_settings(s)) {
    for (char ch : k + "=" + v + "\n") {
      h ^= static_cast<unsigned char>(ch);
      h *= 1099511628211ull;
    }
  }
  return h;
}

std::string hex64(std::uint64_t v) {
  char buf[20];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

}  // namespace sqz
