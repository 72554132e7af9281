#pragma once

// Discrete-time model of the fiber squeezing setup: probe, LO and pump beams,
// the OPA, the homodyne splitter, fiber stretchers, monitor photodiodes and
// every slow drift acting on them.
//
// Polarization paths (Jones, unit norm):
//   probe at OPA = Dp * Ip * Cp(bank) * V
//   LO at HD     = Dl * Il * Cl(bank) * V
// where C is the three-piezo controller, I a fixed install rotation chosen so
// that the centered bank is optimal at t = 0, and D the drifting fiber
// rotation. The squeezed mode leaves the OPA along the crystal axis (V) and
// reaches the homodyne splitter unrotated.

#include "sqz/drift.hpp"
#include "sqz/polarization.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <random>
#include <span>
#include <stdexcept>

namespace sqz {

class PlantError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

class StretcherRangeError : public std::out_of_range {
 public:
  using std::out_of_range::out_of_range;
};

struct FieldEnvelope {
  double amplitude = 0;       // sqrt(W)
  double freq_offset_hz = 0;  // relative to the degenerate frequency
  double phase = 0;           // rad, unwrapped
  Jones pol;
  bool shutter_open = false;

  double power() const { return amplitude * amplitude; }
  /// Phase in (-pi, pi].
  double wrapped_phase() const;
};

struct OpaModel {
  double kappa = 1.8958727343820558;  // squeeze parameter per sqrt(W) of pump
  Jones crystal_axis;                 // V
  double insertion_loss = 0.10;
  double thermal_settle_tau_s = 3.0;
  double thermal_phase_rad = 2.5;     // beat-phase offset once the crystal has warmed

  double squeeze_parameter(double pump_power_w) const { return kappa * std::sqrt(std::max(0.0, pump_power_w)); }
  void validate() const;
};

struct SplitterModel {
  double nominal_ratio = 0.5;
  double temp_coeff = 0.0095;  // per degC
  double pol_coeff = 0.029;    // shift at orthogonal input
  double reference_temp_c = 25;
  double temperature_c = 25;
  Jones reference_axis;        // input polarization giving the nominal ratio
};

/// nominal + temp_coeff (T - T0) + pol_coeff (1 - overlap(j_in, reference)), clamped to [0, 1].
double splitter_ratio(const SplitterModel& m, const Jones& j_in);

struct StretcherModel {
  double voltage = 35;
  double rad_per_volt = 6 * std::numbers::pi / 70;
  double max_voltage = 70;

  double range_wavelengths() const { return max_voltage * rad_per_volt / (2 * std::numbers::pi); }
  double center() const { return max_voltage / 2; }
};

/// Optical phase for a stretcher voltage; throws StretcherRangeError outside [0, max].
double stretcher_apply(const StretcherModel& m, double voltage);

struct DetectorModel {
  double responsivity = 1.0;  // A/W
  double quantum_efficiency = 0.96;
  double transimpedance = 3030;  // ohm
  double post_gain = 15;
  double saturation = 1.0;  // V

  void validate() const;
};

struct ShutterState {
  bool probe = false;
  bool lo = false;
  bool pump = false;

  bool operator==(const ShutterState&) const = default;
};

/// Monitor photodiodes behind two cascaded pick-offs of one path.
struct MonitorModel {
  double pick = 0.1;            // each pick-off fraction
  double first_ohm = 1e6;       // sensitive diode on the first pick
  double second_ohm = 1e4;      // diode on the second pick
  double second_atten_db = 0;   // extra attenuation in front of the second diode
  double saturation = 10;       // V
  double noise_v = 1e-5;        // rms per reading

  double through() const { return (1 - pick) * (1 - pick); }
};

struct PlantConfig {
  double sample_rate_hz = 5e6;
  double beat_hz = 200e3;  // probe frequency offset
  double modulation_hz = 300;

  double probe_source_w = 1e-3;
  double lo_source_w = 25e-3;
  double pump_power_w = 0.3;
  MonitorModel probe_monitor{};
  MonitorModel lo_monitor{0.1, 1e5, 1e4, 10, 10, 1e-5};
  double power_noise_rms = 5e-4;  // fractional, after the monitor pick-offs
  double power_noise_tau_s = 0.1;

  OpaModel opa{};
  double downstream_efficiency = 0.8112117873126267;  // OPA output to detector
  double bs2_tap = 0.005;
  double pd5_responsivity = 1.0;
  double pd5_transimpedance = 1e6;
  double pd5_gain = 10;

  SplitterModel bs_hd{};
  double coupler_lag_s = 2.0;
  DetectorModel hd{};
  double dc_noise_v = 1e-3;    // rms on each homodyne DC reading, after post gain
  double beat_noise_v = 0;     // white noise on rendered beat samples

  StretcherModel stretcher{};
  PiezoBank bank{};
  ControllerGeometry geometry{};
  double probe_pol_offset_rad = 0;  // initial great-circle offset from optimum
  double lo_pol_offset_rad = 0;

  DriftSpecs drifts = default_drift_specs();

  void validate() const;
};

enum class PolPath { Probe, Lo };

struct Modulation {
  PolPath path = PolPath::Lo;
  int piezo = -1;  // -1: none
  double amplitude_counts = 0;

  bool active() const { return piezo >= 0 && amplitude_counts != 0; }
};

struct PlantState {
  PlantConfig cfg;

  FieldEnvelope probe, lo, pump;
  OpaModel opa;
  SplitterModel bs_hd;
  double bs2_tap = 0.005;
  StretcherModel stretcher_probe, stretcher_lo;
  DriftSuite drifts;
  double time = 0;
  std::int64_t clock = 0;  // plant samples since start

  ShutterState shutters;
  PiezoBank probe_bank, lo_bank;
  JonesMatrixd probe_install = JonesMatrixd::Identity();
  JonesMatrixd lo_install = JonesMatrixd::Identity();
  double att_probe = 1e-3;  // attenuator transmissions
  double att_lo = 1e-2;
  double noise_probe = 0;   // OU power-noise states
  double noise_lo = 0;
  double opa_thermal = 0;   // 0 cold, 1 warmed by the pump
  double peltier_command_c = 25;
  JonesMatrixd probe_ctrl = JonesMatrixd::Identity(), lo_ctrl = JonesMatrixd::Identity();
  std::array<int, kPiezoCount> probe_ctrl_codes{-1, -1, -1}, lo_ctrl_codes{-1, -1, -1};
  std::mt19937_64 noise_rng;
  std::normal_distribution<double> gauss{0.0, 1.0};

  /// Axis for the single-sample beat functions when A != 0: the
  /// modulated beam moves along the great circle through V and R.
  Vec3d sample_modulation_axis = Vec3d(0, -1, 0);

  PlantState() = default;
  PlantState(const PlantConfig& c, std::uint64_t seed);

  /// Recompute the field envelopes from banks, drifts, stretchers and shutters.
  void refresh();
  /// Amplitudes only (attenuator moves).
  void refresh_powers();

  double source_factor_probe() const;
  double source_factor_lo() const;
  /// Probe / LO power delivered past the monitor pick-offs (W), including residual noise.
  double probe_power() const;
  double lo_power() const;
  /// OPA beat phase -2 phi_probe + phi_pump plus the thermal offset.
  double opa_phase() const;
  double hd_phase() const { return probe.phase - lo.phase; }
  double squeeze_parameter() const { return shutters.pump ? opa.squeeze_parameter(cfg.pump_power_w) : 0.0; }
  Jones squeezed_mode_at_hd() const { return opa.crystal_axis; }
  double chain_loss() const { return 1 - (1 - opa.insertion_loss) * cfg.downstream_efficiency; }
  double effective_loss() const { return 1 - (1 - chain_loss()) * mode_overlap(squeezed_mode_at_hd(), lo.pol); }

  /// Output-frame rotation axis of one piezo on one path.
  Vec3d modulation_axis(PolPath path, int piezo) const;
  double hd_beat_gain() const;
  double pd5_gain() const;
};

/// PD5 sample at time t: the probe leaving the OPA, including the 2x beat.
/// A is the great-circle modulation angle of the probe.
double opa_monitor_sample(const PlantState& s, double A, double wm, double t);

/// Homodyne difference sample at time t with the LO modulated by A on the great circle.
double homodyne_beat_sample(const PlantState& s, double A, double wm, double t);

struct DcReading {
  double volts = 0;           // after post gain, clipped
  double pre_gain_volts = 0;  // transimpedance stage, clipped
  bool saturated = false;
  bool pre_gain_saturated = false;
};

/// Noiseless DC imbalance of the homodyne detector.
DcReading homodyne_dc(const PlantState& s);

/// Advance drifts, residual power noise, OPA heating and splitter temperature.
void drift_step(PlantState& s, double dt);

/// Quadrature variance in shot-noise units at a lock angle, with Gaussian phase jitter.
double quadrature_variance(double r, double loss_eff, double lock_angle, double phase_jitter_rms);

/// Owner of one PlantState with block rendering for the controller loops.
class Plant {
 public:
  Plant(const PlantConfig& cfg, std::uint64_t seed);

  PlantState& state() { return s_; }
  const PlantState& state() const { return s_; }
  const PlantConfig& config() const { return s_.cfg; }
  double time() const { return s_.time; }
  std::int64_t clock() const { return s_.clock; }
  double sample_rate() const { return s_.cfg.sample_rate_hz; }

  void advance(std::int64_t samples);
  void advance_seconds(double dt);

  void set_shutters(const ShutterState& sh);
  PiezoBank& bank(PolPath p) { return p == PolPath::Probe ? s_.probe_bank : s_.lo_bank; }
  void set_piezo(PolPath p, int k, int code);
  void set_attenuation(PolPath p, double t);

  /// HD beat or PD5 samples for clock indices [clock, clock + out.size()).
  void render_hd_beat(std::span<double> out, const Modulation& mod);
  void render_opa_monitor(std::span<double> out, const Modulation& mod);
  /// Beat amplitudes without modulation (V), including power noise.
  double hd_beat_amplitude() const;
  double opa_beat_amplitude() const;

  /// Monitor reading converted to delivered power (W), with diode noise.
  double read_power(PolPath p);
  /// Homodyne DC with reading noise.
  DcReading read_homodyne_dc();

  std::mt19937_64& rng() { return s_.noise_rng; }

 private:
  PlantState s_;
};

}  // namespace sqz
