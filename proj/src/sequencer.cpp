#include "sqz/sequencer.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numbers>
#include <sstream>

namespace sqz {

namespace {
constexpr double kPi = std::numbers::pi;

std::string fmt(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.10g", v);
  return buf;
}

int target_key(PolTarget t) { return t == PolTarget::Opa ? 0 : 1; }

std::ofstream open_csv(const std::filesystem::path& p, const char* header) {
  std::ofstream os(p, std::ios::binary);
  if (!os) throw std::runtime_error("cannot write " + p.string());
  os << header << '\n';
  return os;
}
}  // namespace

void SequencerConfig::validate() const {
  auto pos = [](double v, const char* key) {
    if (!(v > 0) || !std::isfinite(v)) throw PlantError(std::string(key) + " must be positive");
  };
  pos(horizon_s, "seq.horizon_s");
  pos(measurement_period_s, "seq.measurement_period_s");
  pos(alignment_period_s, "seq.alignment_period_s");
  pos(compression, "seq.compression");
  pos(tick_s, "seq.tick_s");
  pos(background_tick_s, "seq.background_tick_s");
  pos(dc_read_interval_s, "seq.dc_read_interval_s");
  pos(sample_spacing_s, "seq.sample_spacing_s");
  pos(log_interval_s, "seq.log_interval_s");
  pos(coupling_log_interval_s, "seq.coupling_log_interval_s");
  if (!(power_settle_s >= 0) || !(thermal_wait_s >= 0) || !(lock_timeout_s > 0) || !(coupling_stage_s >= 0))
    throw PlantError("sequencer waits must be non-negative");
  const double ratio = alignment_period_s / measurement_period_s;
  if (std::abs(ratio - std::round(ratio)) > 1e-9 || ratio < 1)
    throw PlantError("seq.alignment_period_s must be a multiple of seq.measurement_period_s");
  if (samples_per_level < 1) throw PlantError("seq.samples_per_level must be >= 1");
  if (!(phase_jitter_rms >= 0) || !(level_noise >= 0) || level_noise >= 0.5) throw PlantError("measurement noise invalid");
  for (double w : {targets.probe_opa_align_w, targets.probe_hd_align_w, targets.probe_measure_w, targets.lo_align_w,
                   targets.lo_measure_w})
    pos(w, "seq.target");
  pos(power.loop_gain, "loops.power.gain");
  pos(opa_lock.loop_gain, "loops.opa.gain");
  pos(hd_lock.loop_gain, "loops.hd.gain");
  if (!(pol.modulation_counts > 0) || pol.cycles < 1) throw PlantError("loops.pol parameters invalid");
  if (!(coupling.slew_c_per_s > 0) || !(coupling.window_s > 0)) throw PlantError("loops.coupling parameters invalid");
  if (relock_ticks < 1 || !(relock_tolerance_rad > 0)) throw PlantError("relock criteria invalid");
  // the measurement sequence must fit inside its slot, with any alignment ahead of it
  const double seq_len = thermal_wait_s / compression + 3 * samples_per_level * sample_spacing_s + 4 * lock_timeout_s;
  if (seq_len >= measurement_period_s) throw PlantError("measurement sequence does not fit in seq.measurement_period_s");
}

double SequencerConfig::thermal_wait(double opa_tau_s) const { return std::max(thermal_wait_s / compression, 5 * opa_tau_s); }

int SequencerConfig::measurement_count() const {
  return static_cast<int>(std::floor(horizon_s / measurement_period_s + 1e-9));
}

int SequencerConfig::alignment_count() const {
  const int per = static_cast<int>(std::llround(alignment_period_s / measurement_period_s));
  const int n = measurement_count();
  return n == 0 ? 0 : (n - 1) / per + 1;
}

void SimConfig::validate() const {
  plant.validate();
  LockInConfig lc = lockin;
  lc.sample_rate_hz = plant.sample_rate_hz;
  lc.carrier_hz = plant.beat_hz;
  lc.demod_hz = plant.modulation_hz;
  lc.validate();
  lc.carrier_hz = 2 * plant.beat_hz;
  lc.validate();
  seq.validate();
}

bool AlignmentReport::converged() const { return failed_stage() == 0; }

int AlignmentReport::failed_stage() const {
  for (const auto& s : stages)
    if (!s.converged && !s.skipped) return s.id;
  return 0;
}

// ---------------------------------------------------------------------------

Sequencer::Sequencer(const SimConfig& cfg, std::uint64_t seed)
    : cfg_(cfg), seed_(seed), plant_((cfg.validate(), cfg.plant), seed), relock_(cfg.seq.relock_tolerance_rad, cfg.seq.relock_ticks) {
  PowerLoopCfg pc = cfg_.seq.power;
  pc.target_w = cfg_.seq.targets.probe_measure_w;
  power_probe_ = PowerLoop(pc, plant_.state().att_probe);
  pc.target_w = cfg_.seq.targets.lo_measure_w;
  power_lo_ = PowerLoop(pc, plant_.state().att_lo);
  PhaseLoopCfg oc = cfg_.seq.opa_lock, hc = cfg_.seq.hd_lock;
  oc.carrier_hz = 2 * cfg_.plant.beat_hz;
  hc.carrier_hz = cfg_.plant.beat_hz;
  opa_lock_ = PhaseLoop(oc);
  hd_lock_ = PhaseLoop(hc);
  coupling_ = CouplingLoop(cfg_.seq.coupling, plant_.state().peltier_command_c);
  std::seed_seq sq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32), 0x3ea5u};
  meas_rng_.seed(sq);
  shutters_.push_back({0.0, plant_.state().shutters});
}

void Sequencer::set_shutters(const ShutterState& s) {
  if (plant_.state().shutters == s) return;
  plant_.set_shutters(s);
  shutters_.push_back({plant_.time(), s});
}

void Sequencer::set_power_targets(double probe_w, double lo_w) {
  power_probe_.set_target(probe_w);
  power_lo_.set_target(lo_w);
}

void Sequencer::power_step(double dt) {
  const auto& sh = plant_.state().shutters;
  const bool log = plant_.time() >= next_log_;
  if (sh.probe) {
    const double m = plant_.read_power(PolPath::Probe);
    plant_.set_attenuation(PolPath::Probe, power_probe_.step(m, dt));
    if (log)
      power_log_.push_back({plant_.time(), "probe", power_probe_.config().target_w, m, power_probe_.transmission(),
                            power_probe_.saturated()});
  }
  if (sh.lo) {
    const double m = plant_.read_power(PolPath::Lo);
    plant_.set_attenuation(PolPath::Lo, power_lo_.step(m, dt));
    if (log)
      power_log_.push_back(
          {plant_.time(), "lo", power_lo_.config().target_w, m, power_lo_.transmission(), power_lo_.saturated()});
  }
}

void Sequencer::coupling_sample() {
  const DcReading r = plant_.read_homodyne_dc();
  if (r.pre_gain_saturated) dc_saturated_ = true;
  coupling_.add_sample(r);
}

void Sequencer::coupling_step(double dt) {
  auto& s = plant_.state();
  s.peltier_command_c = coupling_.step(dt);
  if (plant_.time() >= next_coupling_log_) {
    coupling_log_.push_back({plant_.time(), coupling_.last_mean(), splitter_ratio(s.bs_hd, s.lo.pol), s.peltier_command_c,
                             s.bs_hd.temperature_c, coupling_.last_saturated()});
    next_coupling_log_ = plant_.time() + cfg_.seq.coupling_log_interval_s;
  }
}

void Sequencer::fast_tick(const FastMode& m) {
  auto& s = plant_.state();
  const double fs = plant_.sample_rate();
  const std::int64_t n = std::max<std::int64_t>(1, std::llround(cfg_.seq.tick_s * fs));
  const double dt = static_cast<double>(n) / fs;
  const double t = plant_.time();
  const bool log = t >= next_log_;
  double errs[2];
  int ne = 0;
  auto& buf = tick_buf_;
  auto run_lock = [&](PhaseLoop& loop, StretcherModel& st, bool opa, const char* name) {
    buf.resize(static_cast<std::size_t>(loop.block_length(fs)));
    if (opa)
      plant_.render_opa_monitor(buf, Modulation{});
    else
      plant_.render_hd_beat(buf, Modulation{});
    const PhaseTick tk = loop.step(buf, plant_.clock(), fs, dt, st);
    if (tk.reset) relock_.on_reset(t, name);
    if (!tk.idle) errs[ne++] = tk.error;
    if (log || tk.reset) phase_log_.push_back({t, name, tk});
  };
  if (m.opa_lock) run_lock(opa_lock_, s.stretcher_probe, true, "opa");
  if (m.hd_lock) run_lock(hd_lock_, s.stretcher_lo, false, "hd");
  relock_.on_tick(t, std::span<const double>(errs, ne));
  if (m.power) power_step(dt);
  if (m.coupling) {
    coupling_sample();
    if (t >= next_coupling_step_) {
      coupling_step(cfg_.seq.coupling.window_s);
      next_coupling_step_ += cfg_.seq.coupling.window_s;
    }
  }
  if (log) next_log_ = t + cfg_.seq.log_interval_s;
  plant_.advance(n);
}

void Sequencer::fast_ticks(int n, const FastMode& m) {
  for (int i = 0; i < n; ++i) fast_tick(m);
}

void Sequencer::idle_until(double t) {
  set_shutters({false, true, false});
  const double step = std::min(cfg_.seq.dc_read_interval_s, cfg_.seq.background_tick_s);
  while (plant_.time() < t - 1e-12) {
    coupling_sample();
    if (plant_.time() >= next_coupling_step_) {
      coupling_step(cfg_.seq.coupling.window_s);
      next_coupling_step_ += cfg_.seq.coupling.window_s;
    }
    plant_.advance_seconds(std::min(step, t - plant_.time()));
  }
}

bool Sequencer::wait_locked(const FastMode& m, bool need_opa, bool need_hd) {
  const int max_ticks = static_cast<int>(std::llround(cfg_.seq.lock_timeout_s / cfg_.seq.tick_s));
  int good = 0;
  for (int i = 0; i < max_ticks; ++i) {
    fast_tick(m);
    bool ok = true;
    if (need_opa) ok = ok && !opa_lock_.last().idle && std::abs(opa_lock_.last().error) < cfg_.seq.relock_tolerance_rad;
    if (need_hd) ok = ok && !hd_lock_.last().idle && std::abs(hd_lock_.last().error) < cfg_.seq.relock_tolerance_rad;
    good = ok ? good + 1 : 0;
    if (good >= cfg_.seq.relock_ticks) return true;
  }
  return false;
}

// ---------------------------------------------------------------------------

double Sequencer::allpass_for(PolTarget t, double level) {
  auto it = allpass_cache_.find(target_key(t));
  if (it != allpass_cache_.end()) return it->second;
  const LockInConfig lc = lockin_for(t, cfg_.lockin, cfg_.plant);
  const double psi = calibrate_allpass_phase(lc, level);
  allpass_cache_[target_key(t)] = psi;
  return psi;
}

double Sequencer::threshold_for(PolTarget t, double level) {
  if (cfg_.seq.pol.threshold > 0) return cfg_.seq.pol.threshold;
  auto it = threshold_cache_.find(target_key(t));
  if (it != threshold_cache_.end()) return it->second;
  LockInConfig lc = lockin_for(t, cfg_.lockin, cfg_.plant);
  lc.demod_allpass_phase = allpass_for(t, level);
  // HD amplitude follows sqrt(P_probe P_lo): two independent noises at half weight
  const double rms = t == PolTarget::Opa ? cfg_.plant.power_noise_rms : cfg_.plant.power_noise_rms / std::numbers::sqrt2;
  const double sigma =
      calibrate_noise_floor(lc, level, rms, cfg_.plant.power_noise_tau_s, cfg_.plant.beat_noise_v, seed_ ^ 0x9e3779b9u);
  const double thr = cfg_.seq.pol.threshold_factor * sigma;
  threshold_cache_[target_key(t)] = thr;
  return thr;
}

AlignmentStage Sequencer::pol_stage(PolTarget target, bool run) {
  AlignmentStage st;
  st.id = target == PolTarget::Opa ? 1 : 2;
  st.name = target == PolTarget::Opa ? "opa_polarization" : "hd_polarization";
  st.t_start = plant_.time();
  const bool pump = !cfg_.seq.pump_disabled;
  if (target == PolTarget::Opa) {
    set_shutters({true, false, pump});
    set_power_targets(cfg_.seq.targets.probe_opa_align_w, cfg_.seq.targets.lo_align_w);
  } else {
    set_shutters({true, true, false});
    set_power_targets(cfg_.seq.targets.probe_hd_align_w, cfg_.seq.targets.lo_align_w);
  }
  fast_ticks(static_cast<int>(std::llround(cfg_.seq.power_settle_s / cfg_.seq.tick_s)), FastMode{});

  const PlantState& s = plant_.state();
  double level;
  if (target == PolTarget::Opa)
    level = s.pd5_gain() * power_probe_.config().target_w * std::sinh(2 * s.opa.squeeze_parameter(cfg_.plant.pump_power_w));
  else
    level = s.hd_beat_gain() * 2 * std::sqrt(power_probe_.config().target_w * power_lo_.config().target_w);

  const PolPath path = pol_path(target);
  if (run) {
    LockInConfig lc = lockin_for(target, cfg_.lockin, cfg_.plant);
    lc.demod_allpass_phase = allpass_for(target, level);
    LockInChain chain(lc);
    PolLoopCfg pc = cfg_.seq.pol;
    pc.expected_level = level;
    pc.threshold = threshold_for(target, level);
    PolHooks hooks;
    hooks.on_tick = [this](double dt) {
      power_step(dt);
      if (plant_.time() >= next_log_) next_log_ = plant_.time() + cfg_.seq.log_interval_s;
    };
    const PolResult res = pol_optimize(pc, chain, plant_, target, hooks);
    st.converged = res.converged;
    st.final_beta = res.final_beta;
    st.diagnostic = res.diagnostic;
    if (chain.carrier_level() < 0.1 * level) {
      st.converged = false;
      st.diagnostic = "no carrier";
    }
  } else {
    st.skipped = true;
  }
  st.bank = plant_.bank(path).values;
  st.mismatch_loss = target == PolTarget::Opa ? 1 - mode_overlap(s.opa.crystal_axis, s.probe.pol)
                                              : 1 - mode_overlap(s.lo.pol, s.probe.pol);
  st.t_end = plant_.time();
  return st;
}

AlignmentStage Sequencer::coupling_stage(bool run) {
  AlignmentStage st;
  st.id = 3;
  st.name = "coupling_ratio";
  st.t_start = plant_.time();
  set_shutters({false, true, false});
  set_power_targets(cfg_.seq.targets.probe_measure_w, cfg_.seq.targets.lo_measure_w);
  fast_ticks(static_cast<int>(std::llround(cfg_.seq.power_settle_s / cfg_.seq.tick_s)), FastMode{});
  if (run) {
    next_coupling_step_ = plant_.time();
    const double end = plant_.time() + cfg_.seq.coupling_stage_s;
    while (plant_.time() < end - 1e-12) {
      coupling_sample();
      if (plant_.time() >= next_coupling_step_) {
        coupling_step(cfg_.seq.coupling.window_s);
        next_coupling_step_ += cfg_.seq.coupling.window_s;
      }
      plant_.advance_seconds(std::min(cfg_.seq.dc_read_interval_s, end - plant_.time()));
    }
    const auto& s = plant_.state();
    st.coupling_ratio = splitter_ratio(s.bs_hd, s.lo.pol);
    st.converged = !coupling_.last_saturated() && std::abs(st.coupling_ratio - 0.5) < 1e-3;
    if (!st.converged) st.diagnostic = "coupling ratio " + fmt(st.coupling_ratio);
  } else {
    st.skipped = true;
    st.coupling_ratio = splitter_ratio(plant_.state().bs_hd, plant_.state().lo.pol);
  }
  st.t_end = plant_.time();
  return st;
}

AlignmentReport Sequencer::run_alignment(bool full) {
  AlignmentReport rep;
  rep.index = static_cast<int>(alignments_.size());
  rep.t_start = plant_.time();
  // stretchers are held for the whole sequence
  const double vp = plant_.state().stretcher_probe.voltage, vl = plant_.state().stretcher_lo.voltage;
  rep.stages.push_back(pol_stage(PolTarget::Opa, full));
  rep.stages.push_back(pol_stage(PolTarget::Homodyne, full));
  rep.stages.push_back(coupling_stage(full));
  if (plant_.state().stretcher_probe.voltage != vp || plant_.state().stretcher_lo.voltage != vl)
    ++alignment_stretcher_moves_;
  alignments_.push_back(rep);
  return rep;
}

double Sequencer::measured_level(double quadrature, double r, double loss, bool squeezed) {
  if (!squeezed) return 1.0 * (1 + cfg_.seq.level_noise * gauss_(meas_rng_));
  const double e_hd = hd_lock_.last().idle ? 0.0 : hd_lock_.last().error;
  const double e_opa = opa_lock_.last().idle ? 0.0 : opa_lock_.last().error;
  const double phi = quadrature + e_hd + e_opa / 2;
  const double v = quadrature_variance(r, loss, phi, cfg_.seq.phase_jitter_rms);
  return v * (1 + cfg_.seq.level_noise * gauss_(meas_rng_));
}

MeasurementRecord Sequencer::run_measurement() {
  const auto& q = cfg_.seq;
  MeasurementWindow w;
  w.t_start = plant_.time();
  set_shutters({true, true, !q.pump_disabled});
  set_power_targets(q.targets.probe_measure_w, q.targets.lo_measure_w);
  FastMode m{true, true, false, true};
  const int spacing = std::max(1, static_cast<int>(std::llround(q.sample_spacing_s / q.tick_s)));

  // 1. OPA lock and thermal settle
  opa_lock_.config().lock_quadrature = 0;
  fast_ticks(static_cast<int>(std::llround(q.thermal_wait(plant_.state().opa.thermal_settle_tau_s) / q.tick_s)), m);

  // 2. homodyne lock, squeezed quadrature
  m.hd_lock = true;
  hd_lock_.config().lock_quadrature = 0;
  bool locked = wait_locked(m, true, true);

  // 3. variances
  w.sample_start = plant_.time();
  dc_saturated_ = false;
  auto sample = [&](double quad) {
    double sum = 0;
    for (int i = 0; i < q.samples_per_level; ++i) {
      const auto& s = plant_.state();
      sum += measured_level(quad, s.squeeze_parameter(), s.effective_loss(), true);
      fast_ticks(spacing, m);
    }
    return sum / q.samples_per_level;
  };
  const double v_sq = sample(0.0);
  hd_lock_.config().lock_quadrature = kPi / 2;
  locked = wait_locked(m, true, true) && locked;
  const double v_asq = sample(kPi / 2);
  w.sample_end = plant_.time();
  const bool saturated = dc_saturated_;

  // 4. release, shot noise with the LO alone
  relock_.release(plant_.time());
  m.opa_lock = m.hd_lock = false;
  auto& ps = plant_.state();
  ps.stretcher_probe.voltage = ps.stretcher_probe.center();
  ps.stretcher_lo.voltage = ps.stretcher_lo.center();
  set_shutters({false, true, false});
  w.shot_start = plant_.time();
  double v_shot = 0;
  for (int i = 0; i < q.samples_per_level; ++i) {
    v_shot += measured_level(0, 0, 1, false);
    fast_ticks(spacing, m);
  }
  v_shot /= q.samples_per_level;
  w.shot_end = w.t_end = plant_.time();

  MeasurementRecord rec;
  rec.t_s = out_time(w.t_start);
  rec.sq_db = level_from_variances(v_sq, v_shot);
  rec.asq_db = level_from_variances(v_asq, v_shot);
  rec.shot_ref = v_shot;
  if (!locked)
    rec.reason = OutlierReason::LockFailure;
  else if (relock_.overlaps(w.sample_start, w.sample_end))
    rec.reason = OutlierReason::RelockOverlap;
  else if (saturated)
    rec.reason = OutlierReason::Saturated;
  rec.outlier = rec.reason != OutlierReason::None;
  if (!rec.outlier && rec.sq_db <= 0 && rec.asq_db >= 0) {
    try {
      const double l = loss_from_levels({rec.sq_db, rec.asq_db});
      if (l >= 0 && l <= 1) rec.loss_est = l;
    } catch (const AnalysisError&) {
    }
  }
  records_.push_back(rec);
  windows_.push_back(w);
  return rec;
}

void Sequencer::run_schedule() {
  const auto& q = cfg_.seq;
  const int n = q.measurement_count();
  const int per = static_cast<int>(std::llround(q.alignment_period_s / q.measurement_period_s));
  for (int i = 0; i < n; ++i) {
    idle_until(i * q.measurement_period_s);
    if (i % per == 0) run_alignment(!q.loops_off || i == 0);
    if (q.loops_off && i == 0) coupling_.config().thermistor_hold = true;
    run_measurement();
  }
}

// ---------------------------------------------------------------------------

std::vector<std::string> Sequencer::write(const std::filesystem::path& dir) const {
  std::filesystem::create_directories(dir);
  std::vector<std::string> files;
  auto out = [&](const char* name, const char* header) {
    files.emplace_back(name);
    return open_csv(dir / name, header);
  };
  {
    auto os = out("records.csv", kRecordHeader);
    for (const auto& r : records_) write_record_row(os, r);
  }
  {
    files.emplace_back("summary.csv");
    std::ofstream os(dir / "summary.csv", std::ios::binary);
    try {
      write_summary_csv(os, summarize(records_));
    } catch (const AnalysisError&) {
      int outl = 0;
      for (const auto& r : records_) outl += r.outlier ? 1 : 0;
      os << kSummaryHeader << '\n' << records_.size() << ',' << outl << ",,,,,,,,\n";
    }
  }
  {
    auto os = out("windows.csv", "t_s,sample_start_s,sample_end_s,shot_start_s,shot_end_s,t_end_s");
    for (const auto& w : windows_)
      os << fmt(out_time(w.t_start)) << ',' << fmt(out_time(w.sample_start)) << ',' << fmt(out_time(w.sample_end)) << ','
         << fmt(out_time(w.shot_start)) << ',' << fmt(out_time(w.shot_end)) << ',' << fmt(out_time(w.t_end)) << '\n';
  }
  {
    auto os = out("alignment.csv",
                  "alignment,stage,name,t_start_s,t_end_s,converged,skipped,beta1,beta2,beta3,code1,code2,code3,mismatch_loss,"
                  "coupling_ratio,diagnostic");
    for (const auto& a : alignments_)
      for (const auto& s : a.stages)
        os << a.index << ',' << s.id << ',' << s.name << ',' << fmt(out_time(s.t_start)) << ',' << fmt(out_time(s.t_end)) << ','
           << s.converged << ',' << s.skipped << ',' << fmt(s.final_beta[0]) << ',' << fmt(s.final_beta[1]) << ','
           << fmt(s.final_beta[2]) << ',' << s.bank[0] << ',' << s.bank[1] << ',' << s.bank[2] << ','
           << fmt(s.mismatch_loss) << ',' << fmt(s.coupling_ratio) << ',' << s.diagnostic << '\n';
  }
  {
    auto os = out("relock.csv", "start_s,end_s,loop");
    for (const auto& iv : relock_.intervals())
      os << fmt(out_time(iv.start_s)) << ',' << (iv.open() ? std::string() : fmt(out_time(iv.end_s))) << ',' << iv.loop << '\n';
  }
  {
    auto os = out("shutters.csv", "t_s,probe,lo,pump");
    for (const auto& e : shutters_)
      os << fmt(out_time(e.t)) << ',' << e.state.probe << ',' << e.state.lo << ',' << e.state.pump << '\n';
  }
  {
    auto os = out("loops_phase.csv", "t_s,loop,error_rad,voltage_v,amplitude_v,idle,reset");
    for (const auto& r : phase_log_)
      os << fmt(out_time(r.t)) << ',' << r.loop << ',' << fmt(r.tick.error) << ',' << fmt(r.tick.voltage) << ','
         << fmt(r.tick.amplitude) << ',' << r.tick.idle << ',' << r.tick.reset << '\n';
  }
  {
    auto os = out("loops_power.csv", "t_s,path,target_w,measured_w,transmission,saturated");
    for (const auto& r : power_log_)
      os << fmt(out_time(r.t)) << ',' << r.path << ',' << fmt(r.target) << ',' << fmt(r.measured) << ','
         << fmt(r.transmission) << ',' << r.saturated << '\n';
  }
  {
    auto os = out("loops_coupling.csv", "t_s,dc_mean_v,ratio,command_c,coupler_c,saturated");
    for (const auto& r : coupling_log_)
      os << fmt(out_time(r.t)) << ',' << fmt(r.dc_mean) << ',' << fmt(r.ratio) << ',' << fmt(r.command) << ','
         << fmt(r.coupler_c) << ',' << r.saturated << '\n';
  }
  return files;
}

}  // namespace sqz
