#include "sqz/plant.hpp"

#include "sqz/dsp.hpp"

#include <algorithm>
#include <cmath>
#include <complex>

namespace sqz {

namespace {
constexpr double kPi = std::numbers::pi;
using cd = std::complex<double>;

// cos and sin for the small modulation half-angles; falls back to libm.
inline void half_angle(double h, double& c, double& s) {
  if (std::abs(h) > 0.2) {
    c = std::cos(h);
    s = std::sin(h);
    return;
  }
  const double h2 = h * h;
  c = 1 - h2 / 2 * (1 - h2 / 12 * (1 - h2 / 30 * (1 - h2 / 56)));
  s = h * (1 - h2 / 6 * (1 - h2 / 20 * (1 - h2 / 42 * (1 - h2 / 72))));
}

JonesMatrixd drift_rotation(double a, double b) {
  const Vec3d rv(0, a, b);
  const double ang = rv.norm();
  if (ang == 0) return JonesMatrixd::Identity();
  return jones_rotation<double>(rv / ang, ang);
}

double wrap_pi(double x) {
  x = std::remainder(x, 2 * kPi);
  return x <= -kPi ? x + 2 * kPi : x;
}
}  // namespace

double FieldEnvelope::wrapped_phase() const { return wrap_pi(phase); }

void OpaModel::validate() const {
  if (!(kappa >= 0)) throw PlantError("opa.kappa must be >= 0");
  if (!(insertion_loss >= 0 && insertion_loss < 1)) throw PlantError("opa.insertion_loss must lie in [0, 1)");
  if (!(thermal_settle_tau_s > 0)) throw PlantError("opa.thermal_tau_s must be positive");
}

void DetectorModel::validate() const {
  if (!(quantum_efficiency > 0 && quantum_efficiency <= 1)) throw PlantError("hd.quantum_efficiency must lie in (0, 1]");
  if (!(responsivity > 0) || !(transimpedance > 0) || !(post_gain > 0) || !(saturation > 0))
    throw PlantError("homodyne detector gains must be positive");
}

double splitter_ratio(const SplitterModel& m, const Jones& j_in) {
  const double g = 1 - mode_overlap(j_in, m.reference_axis);
  const double r = m.nominal_ratio + m.temp_coeff * (m.temperature_c - m.reference_temp_c) + m.pol_coeff * g;
  return std::clamp(r, 0.0, 1.0);
}

double stretcher_apply(const StretcherModel& m, double voltage) {
  if (!(voltage >= 0 && voltage <= m.max_voltage)) throw StretcherRangeError("stretcher voltage outside [0, max]");
  return voltage * m.rad_per_volt;
}

void PlantConfig::validate() const {
  if (!(sample_rate_hz > 0)) throw PlantError("plant.sample_rate_hz must be positive");
  if (!(beat_hz > 0) || 2 * beat_hz >= sample_rate_hz / 2) throw PlantError("plant.beat_hz must keep the 2x beat below Nyquist");
  if (!(modulation_hz > 0) || modulation_hz >= beat_hz / 10) throw PlantError("plant.modulation_hz must be well below the beat");
  if (!(probe_source_w > 0) || !(lo_source_w > 0) || !(pump_power_w >= 0)) throw PlantError("source powers must be positive");
  if (!(power_noise_rms >= 0) || !(power_noise_tau_s > 0)) throw PlantError("power noise parameters invalid");
  if (!(downstream_efficiency > 0 && downstream_efficiency <= 1)) throw PlantError("plant.downstream_efficiency must lie in (0, 1]");
  if (!(bs2_tap > 0 && bs2_tap < 1)) throw PlantError("plant.bs2_tap must lie in (0, 1)");
  if (!(coupler_lag_s > 0)) throw PlantError("plant.coupler_lag_s must be positive");
  if (!(stretcher.rad_per_volt > 0) || !(stretcher.max_voltage > 0)) throw PlantError("stretcher parameters must be positive");
  for (const auto* m : {&probe_monitor, &lo_monitor})
    if (!(m->pick > 0 && m->pick < 1) || !(m->first_ohm > 0) || !(m->second_ohm > 0) || !(m->saturation > 0))
      throw PlantError("monitor parameters invalid");
  opa.validate();
  hd.validate();
  bank.validate();
  for (const auto& a : geometry.axes) require_unit_axis(a);
}

PlantState::PlantState(const PlantConfig& c, std::uint64_t seed) : cfg(c) {
  cfg.validate();
  opa = cfg.opa;
  bs_hd = cfg.bs_hd;
  bs2_tap = cfg.bs2_tap;
  stretcher_probe = stretcher_lo = cfg.stretcher;
  stretcher_probe.voltage = stretcher_lo.voltage = cfg.stretcher.center();
  drifts = DriftSuite(cfg.drifts, seed);
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32), 0xd15eu};
  noise_rng.seed(seq);
  probe_bank = lo_bank = cfg.bank;
  peltier_command_c = bs_hd.reference_temp_c;
  bs_hd.temperature_c = peltier_command_c + drifts.value(DriftChannel::TempCoupler);

  const Vec3d toward_r(0, -1, 0);
  auto install = [&](const PiezoBank& b, double offset) -> JonesMatrixd {
    const JonesMatrixd c0 = controller_matrix(cfg.geometry, bank_angles(b));
    return jones_rotation<double>(toward_r, 2 * offset) * c0.adjoint();
  };
  probe_install = install(probe_bank, cfg.probe_pol_offset_rad);
  lo_install = install(lo_bank, cfg.lo_pol_offset_rad);
  refresh();
}

double PlantState::source_factor_probe() const { return 1 + drifts.value(DriftChannel::PowerProbe); }
double PlantState::source_factor_lo() const { return 1 + drifts.value(DriftChannel::PowerLo); }

double PlantState::probe_power() const {
  return cfg.probe_source_w * source_factor_probe() * att_probe * cfg.probe_monitor.through() * (1 + noise_probe);
}

double PlantState::lo_power() const {
  return cfg.lo_source_w * source_factor_lo() * att_lo * cfg.lo_monitor.through() * (1 + noise_lo);
}

double PlantState::opa_phase() const { return -2 * probe.phase + pump.phase + opa.thermal_phase_rad * opa_thermal; }

void PlantState::refresh_powers() {
  probe.amplitude = std::sqrt(std::max(0.0, probe_power()));
  lo.amplitude = std::sqrt(std::max(0.0, lo_power()));
}

void PlantState::refresh() {
  probe.freq_offset_hz = cfg.beat_hz;
  lo.freq_offset_hz = 0;
  pump.freq_offset_hz = 0;
  probe.shutter_open = shutters.probe;
  lo.shutter_open = shutters.lo;
  pump.shutter_open = shutters.pump;
  probe.amplitude = std::sqrt(std::max(0.0, probe_power()));
  lo.amplitude = std::sqrt(std::max(0.0, lo_power()));
  pump.amplitude = std::sqrt(cfg.pump_power_w);
  probe.phase = drifts.value(DriftChannel::PhaseProbe) + stretcher_probe.voltage * stretcher_probe.rad_per_volt;
  lo.phase = drifts.value(DriftChannel::PhaseLo) + stretcher_lo.voltage * stretcher_lo.rad_per_volt;
  pump.phase = drifts.value(DriftChannel::PhasePump);

  const Jones v;
  const JonesMatrixd dp = drift_rotation(drifts.value(DriftChannel::PolProbeA), drifts.value(DriftChannel::PolProbeB));
  const JonesMatrixd dl = drift_rotation(drifts.value(DriftChannel::PolLoA), drifts.value(DriftChannel::PolLoB));
  if (probe_ctrl_codes != probe_bank.values) {
    probe_ctrl = controller_matrix(cfg.geometry, bank_angles(probe_bank));
    probe_ctrl_codes = probe_bank.values;
  }
  if (lo_ctrl_codes != lo_bank.values) {
    lo_ctrl = controller_matrix(cfg.geometry, bank_angles(lo_bank));
    lo_ctrl_codes = lo_bank.values;
  }
  probe.pol = v.transformed(dp * probe_install * probe_ctrl);
  lo.pol = v.transformed(dl * lo_install * lo_ctrl);
}

Vec3d PlantState::modulation_axis(PolPath path, int piezo) const {
  if (piezo < 0 || piezo >= kPiezoCount) throw PlantError("piezo index out of range");
  const PiezoBank& b = path == PolPath::Probe ? probe_bank : lo_bank;
  const auto angles = bank_angles(b);
  JonesMatrixd m = JonesMatrixd::Identity();
  for (int j = piezo + 1; j < kPiezoCount; ++j) m = jones_rotation<double>(cfg.geometry.axes[j], angles[j]) * m;
  const JonesMatrixd d = path == PolPath::Probe
                             ? drift_rotation(drifts.value(DriftChannel::PolProbeA), drifts.value(DriftChannel::PolProbeB))
                             : drift_rotation(drifts.value(DriftChannel::PolLoA), drifts.value(DriftChannel::PolLoB));
  const JonesMatrixd inst = path == PolPath::Probe ? probe_install : lo_install;
  return sphere_rotation<double>(d * inst * m) * cfg.geometry.axes[piezo];
}

double PlantState::hd_beat_gain() const { return cfg.hd.responsivity * cfg.hd.transimpedance; }

double PlantState::pd5_gain() const {
  return (1 - opa.insertion_loss) * bs2_tap * cfg.pd5_responsivity * cfg.pd5_transimpedance * cfg.pd5_gain;
}

double opa_monitor_sample(const PlantState& s, double A, double wm, double t) {
  if (!s.shutters.probe || !s.shutters.pump) return 0.0;
  const Jones p = s.probe.pol.transformed(jones_rotation<double>(s.sample_modulation_axis, 2 * A * std::sin(wm * t)));
  const double c2 = mode_overlap(s.opa.crystal_axis, p);
  const double r = s.squeeze_parameter();
  const double beat = std::sin(2 * 2 * kPi * s.cfg.beat_hz * t + s.opa_phase());
  return s.pd5_gain() * s.probe.power() * (c2 * (std::cosh(2 * r) + std::sinh(2 * r) * beat) + 1 - c2);
}

double homodyne_beat_sample(const PlantState& s, double A, double wm, double t) {
  if (!s.shutters.probe || !s.shutters.lo) return 0.0;
  const Jones l = s.lo.pol.transformed(jones_rotation<double>(s.sample_modulation_axis, 2 * A * std::sin(wm * t)));
  const cd w = l.vector().dot(s.probe.pol.vector());
  const cd carrier = std::polar(1.0, -2 * kPi * s.cfg.beat_hz * t + s.hd_phase());
  return s.hd_beat_gain() * 2 * s.probe.amplitude * s.lo.amplitude * std::real(w * carrier);
}

DcReading homodyne_dc(const PlantState& s) {
  DcReading r;
  if (!s.shutters.lo) return r;
  const double ratio = splitter_ratio(s.bs_hd, s.lo.pol);
  const double pre = (2 * ratio - 1) * s.lo.power() * s.cfg.hd.responsivity * s.cfg.hd.transimpedance;
  const double post = pre * s.cfg.hd.post_gain;
  const double sat = s.cfg.hd.saturation;
  r.pre_gain_saturated = std::abs(pre) >= sat;
  r.saturated = std::abs(post) >= sat;
  r.pre_gain_volts = std::clamp(pre, -sat, sat);
  r.volts = std::clamp(post, -sat, sat);
  return r;
}

void drift_step(PlantState& s, double dt) {
  if (!(dt > 0)) throw PlantError("drift_step requires dt > 0");
  s.drifts.step(dt);
  if (s.cfg.power_noise_rms > 0) {
    const double e = std::exp(-dt / s.cfg.power_noise_tau_s);
    const double k = s.cfg.power_noise_rms * std::sqrt(1 - e * e);
    s.noise_probe = s.noise_probe * e + k * s.gauss(s.noise_rng);
    s.noise_lo = s.noise_lo * e + k * s.gauss(s.noise_rng);
  }
  const double target = s.shutters.pump ? 1.0 : 0.0;
  s.opa_thermal += (target - s.opa_thermal) * (1 - std::exp(-dt / s.opa.thermal_settle_tau_s));
  const double t_target = s.peltier_command_c + s.drifts.value(DriftChannel::TempCoupler);
  s.bs_hd.temperature_c += (t_target - s.bs_hd.temperature_c) * (1 - std::exp(-dt / s.cfg.coupler_lag_s));
  s.clock += std::llround(dt * s.cfg.sample_rate_hz);
  s.time = static_cast<double>(s.clock) / s.cfg.sample_rate_hz;
  s.refresh();
}

double quadrature_variance(double r, double loss_eff, double lock_angle, double phase_jitter_rms) {
  if (!(r >= 0)) throw PlantError("squeeze parameter must be >= 0");
  if (!(loss_eff >= 0 && loss_eff <= 1)) throw PlantError("effective loss must lie in [0, 1]");
  const double damp = std::exp(-2 * phase_jitter_rms * phase_jitter_rms);
  return loss_eff + (1 - loss_eff) * (std::cosh(2 * r) - std::sinh(2 * r) * damp * std::cos(2 * lock_angle));
}

// ---------------------------------------------------------------------------

Plant::Plant(const PlantConfig& cfg, std::uint64_t seed) : s_(cfg, seed) {}

void Plant::advance(std::int64_t samples) {
  if (samples <= 0) throw PlantError("advance requires a positive sample count");
  const std::int64_t target = s_.clock + samples;
  drift_step(s_, static_cast<double>(samples) / s_.cfg.sample_rate_hz);
  s_.clock = target;
  s_.time = static_cast<double>(s_.clock) / s_.cfg.sample_rate_hz;
}

void Plant::advance_seconds(double dt) { advance(std::max<std::int64_t>(1, std::llround(dt * s_.cfg.sample_rate_hz))); }

void Plant::set_shutters(const ShutterState& sh) {
  s_.shutters = sh;
  s_.refresh();
}

void Plant::set_piezo(PolPath p, int k, int code) {
  if (k < 0 || k >= kPiezoCount) throw PlantError("piezo index out of range");
  bank(p).values[k] = PiezoBank::clamp_code(code);
  s_.refresh();
}

void Plant::set_attenuation(PolPath p, double t) {
  (p == PolPath::Probe ? s_.att_probe : s_.att_lo) = std::clamp(t, 0.0, 1.0);
  s_.refresh_powers();
}

namespace {
struct ModulationTerms {
  cd a, b;
  double amplitude_rad = 0;
};
}  // namespace

void Plant::render_hd_beat(std::span<double> out, const Modulation& mod) {
  const double fs = s_.cfg.sample_rate_hz;
  const auto& p = s_.probe.pol.vector();
  const auto& l = s_.lo.pol.vector();
  const double amp = (s_.shutters.probe && s_.shutters.lo) ? s_.hd_beat_gain() * 2 * s_.probe.amplitude * s_.lo.amplitude : 0.0;
  const cd a = l.dot(p);
  cd b = 0;
  double depth = 0;
  if (mod.active()) {
    const JonesMatrixd g = generator_along<double>(s_.modulation_axis(mod.path, mod.piezo));
    const cd x = l.dot(g * p);
    b = mod.path == PolPath::Lo ? cd(0, -1) * x : cd(0, 1) * x;
    depth = mod.amplitude_counts * bank(mod.path).rad_per_count(mod.piezo);
  }
  const std::int64_t n0 = s_.clock;
  cd z = std::polar(1.0, -clock_phase(n0, s_.cfg.beat_hz, fs) + s_.hd_phase());
  const cd dz = std::polar(1.0, -2 * kPi * s_.cfg.beat_hz / fs);
  cd q = std::polar(1.0, clock_phase(n0, s_.cfg.modulation_hz, fs));
  const cd dq = std::polar(1.0, 2 * kPi * s_.cfg.modulation_hz / fs);
  const double noise = s_.cfg.beat_noise_v;
  if (depth == 0) {
    const cd w = amp * a;
    for (auto& y : out) {
      y = w.real() * z.real() - w.imag() * z.imag();
      if (noise > 0) y += noise * s_.gauss(s_.noise_rng);
      z *= dz;
    }
    return;
  }
  for (auto& y : out) {
    double c, s;
    half_angle(0.5 * depth * q.imag(), c, s);
    const cd w = a * c + b * s;
    y = amp * (w.real() * z.real() - w.imag() * z.imag());
    if (noise > 0) y += noise * s_.gauss(s_.noise_rng);
    z *= dz;
    q *= dq;
  }
}

void Plant::render_opa_monitor(std::span<double> out, const Modulation& mod) {
  const double fs = s_.cfg.sample_rate_hz;
  const auto& p = s_.probe.pol.vector();
  const auto& v = s_.opa.crystal_axis.vector();
  const double k = (s_.shutters.probe && s_.shutters.pump) ? s_.pd5_gain() * s_.probe.power() : 0.0;
  const double r = s_.squeeze_parameter();
  const double ch = std::cosh(2 * r), sh = std::sinh(2 * r);
  const cd a = v.dot(p);
  cd b = 0;
  double depth = 0;
  if (mod.active() && mod.path == PolPath::Probe) {
    const JonesMatrixd g = generator_along<double>(s_.modulation_axis(mod.path, mod.piezo));
    b = cd(0, 1) * v.dot(g * p);
    depth = mod.amplitude_counts * bank(mod.path).rad_per_count(mod.piezo);
  }
  const std::int64_t n0 = s_.clock;
  cd z = std::polar(1.0, clock_phase(n0, 2 * s_.cfg.beat_hz, fs) + s_.opa_phase());
  const cd dz = std::polar(1.0, 2 * kPi * 2 * s_.cfg.beat_hz / fs);
  cd q = std::polar(1.0, clock_phase(n0, s_.cfg.modulation_hz, fs));
  const cd dq = std::polar(1.0, 2 * kPi * s_.cfg.modulation_hz / fs);
  const double noise = s_.cfg.beat_noise_v;
  if (depth == 0) {
    const double c2 = std::norm(a);
    const double dc = k * (c2 * ch + 1 - c2), ac = k * c2 * sh;
    for (auto& y : out) {
      y = dc + ac * z.imag();
      if (noise > 0) y += noise * s_.gauss(s_.noise_rng);
      z *= dz;
    }
    return;
  }
  for (auto& y : out) {
    double c, s;
    half_angle(0.5 * depth * q.imag(), c, s);
    const double c2 = std::norm(a * c + b * s);
    y = k * (c2 * (ch + sh * z.imag()) + 1 - c2);
    if (noise > 0) y += noise * s_.gauss(s_.noise_rng);
    z *= dz;
    q *= dq;
  }
}

double Plant::hd_beat_amplitude() const {
  if (!s_.shutters.probe || !s_.shutters.lo) return 0.0;
  return s_.hd_beat_gain() * 2 * s_.probe.amplitude * s_.lo.amplitude * std::abs(s_.lo.pol.vector().dot(s_.probe.pol.vector()));
}

double Plant::opa_beat_amplitude() const {
  if (!s_.shutters.probe || !s_.shutters.pump) return 0.0;
  return s_.pd5_gain() * s_.probe.power() * std::sinh(2 * s_.squeeze_parameter()) *
         mode_overlap(s_.opa.crystal_axis, s_.probe.pol);
}

double Plant::read_power(PolPath path) {
  const bool open = path == PolPath::Probe ? s_.shutters.probe : s_.shutters.lo;
  const MonitorModel& m = path == PolPath::Probe ? s_.cfg.probe_monitor : s_.cfg.lo_monitor;
  const double pre = !open ? 0.0
                     : path == PolPath::Probe ? s_.cfg.probe_source_w * s_.source_factor_probe() * s_.att_probe
                                              : s_.cfg.lo_source_w * s_.source_factor_lo() * s_.att_lo;
  const double first_gain = m.pick * m.first_ohm;
  const double v1 = std::clamp(pre * first_gain + m.noise_v * s_.gauss(s_.noise_rng), -m.saturation, m.saturation);
  if (v1 < 0.9 * m.saturation) return v1 / first_gain * m.through();
  const double second_gain = (1 - m.pick) * m.pick * std::pow(10.0, -m.second_atten_db / 10) * m.second_ohm;
  const double v2 = std::clamp(pre * second_gain + m.noise_v * s_.gauss(s_.noise_rng), -m.saturation, m.saturation);
  return v2 / second_gain * m.through();
}

DcReading Plant::read_homodyne_dc() {
  DcReading r = homodyne_dc(s_);
  if (!s_.shutters.lo) return r;
  const double n = s_.cfg.dc_noise_v * s_.gauss(s_.noise_rng);
  const double sat = s_.cfg.hd.saturation;
  const double pre = (2 * splitter_ratio(s_.bs_hd, s_.lo.pol) - 1) * s_.lo.power() * s_.cfg.hd.responsivity * s_.cfg.hd.transimpedance +
                     n / s_.cfg.hd.post_gain;
  const double post = pre * s_.cfg.hd.post_gain;
  r.pre_gain_saturated = std::abs(pre) >= sat;
  r.saturated = std::abs(post) >= sat;
  r.pre_gain_volts = std::clamp(pre, -sat, sat);
  r.volts = std::clamp(post, -sat, sat);
  return r;
}

}  // namespace sqz
