#include "sqz/scenarios.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>

namespace sqz {

namespace {

constexpr double kPi = std::numbers::pi;

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.10g", v);
  return buf;
}

struct Csv {
  std::ofstream os;
  Csv(const std::filesystem::path& dir, const std::string& name, const char* header, ScenarioResult& res)
      : os(dir / name, std::ios::binary) {
    if (!os) throw std::runtime_error("cannot write " + (dir / name).string());
    os << header << '\n';
    res.files.push_back(name);
  }
};

void check(ScenarioResult& r, std::string name, bool pass, std::string detail) {
  r.checks.push_back({std::move(name), pass, std::move(detail)});
}

double mean(const std::vector<double>& v) { return v.empty() ? 0 : std::accumulate(v.begin(), v.end(), 0.0) / v.size(); }

/// Population standard deviation.
double stdev(const std::vector<double>& v) {
  if (v.empty()) return 0;
  const double m = mean(v);
  double s = 0;
  for (double x : v) s += (x - m) * (x - m);
  return std::sqrt(s / v.size());
}

PlantConfig quiet(PlantConfig c) {
  for (auto& d : c.drifts) d = DriftSpec{};
  return c;
}

/// Attenuator transmission delivering `watts` with the source at its current drift value.
double transmission_for(const PlantState& s, PolPath p, double watts) {
  const auto& c = s.cfg;
  const double avail = p == PolPath::Probe ? c.probe_source_w * s.source_factor_probe() * c.probe_monitor.through()
                                           : c.lo_source_w * s.source_factor_lo() * c.lo_monitor.through();
  return watts / avail;
}

double hd_level(const PlantState& s, double probe_w, double lo_w) { return s.hd_beat_gain() * 2 * std::sqrt(probe_w * lo_w); }

double opa_level(const PlantState& s, double probe_w) {
  return s.pd5_gain() * probe_w * std::sinh(2 * s.opa.squeeze_parameter(s.cfg.pump_power_w));
}

LockInConfig calibrated_lockin(const Settings& st, PolTarget t, double level) {
  LockInConfig lc = lockin_for(t, st.sim.lockin, st.sim.plant);
  lc.demod_allpass_phase = calibrate_allpass_phase(lc, level);
  return lc;
}

/// Rotate the path's input so that it sits `sphere_angle` away from its
/// optimum along the component of piezo `k`'s axis orthogonal to the state.
void offset_along_piezo(Plant& plant, PolPath path, int k, double sphere_angle) {
  auto& s = plant.state();
  const Vec3d m = s.modulation_axis(path, k);
  const Vec3d st = stokes_from_jones(path == PolPath::Probe ? s.probe.pol : s.lo.pol).vector();
  Vec3d perp = m - m.dot(st) * st;
  if (perp.norm() < 1e-9) throw ConfigError("piezo axis parallel to the beam state; cannot build the sweep axis");
  perp.normalize();
  auto& install = path == PolPath::Probe ? s.probe_install : s.lo_install;
  install = jones_rotation<double>(perp, sphere_angle) * install;
  s.refresh();
}

/// Settled lock-in output: run for `settle_s`, average over the final `average_s`.
double settled_beta(Plant& plant, LockInChain& chain, const Modulation& mod, bool opa, double settle_s, double average_s) {
  const std::int64_t block = std::max<std::int64_t>(1, std::llround(1e-3 * plant.sample_rate()));
  std::vector<double> buf(static_cast<std::size_t>(block));
  const int n = static_cast<int>(std::llround(settle_s / 1e-3));
  const int n_avg = std::max(1, static_cast<int>(std::llround(average_s / 1e-3)));
  double sum = 0;
  int cnt = 0;
  for (int i = 0; i < n; ++i) {
    if (opa)
      plant.render_opa_monitor(buf, mod);
    else
      plant.render_hd_beat(buf, mod);
    chain.process(buf, plant.clock());
    plant.advance(block);
    if (i >= n - n_avg) {
      sum += chain.error();
      ++cnt;
    }
  }
  return sum / cnt;
}

/// Linear-interpolated zero crossing closest to `near`; NaN when y never changes sign.
double zero_crossing(const std::vector<double>& x, const std::vector<double>& y, double near) {
  double best = std::numeric_limits<double>::quiet_NaN();
  for (std::size_t i = 0; i + 1 < x.size(); ++i) {
    double z;
    if (y[i] == 0)
      z = x[i];
    else if ((y[i] < 0) != (y[i + 1] < 0))
      z = x[i] - y[i] * (x[i + 1] - x[i]) / (y[i + 1] - y[i]);
    else
      continue;
    if (std::isnan(best) || std::abs(z - near) < std::abs(best - near)) best = z;
  }
  return best;
}

std::array<double, kPiezoCount> piezo_std(const std::vector<std::array<int, kPiezoCount>>& trace) {
  std::array<double, kPiezoCount> out{};
  for (int k = 0; k < kPiezoCount; ++k) {
    std::vector<double> v;
    v.reserve(trace.size());
    for (const auto& row : trace) v.push_back(row[k]);
    out[k] = stdev(v);
  }
  return out;
}

std::string triple(const std::array<double, kPiezoCount>& a) { return fmt(a[0]) + " " + fmt(a[1]) + " " + fmt(a[2]); }

void write_codes(const std::filesystem::path& dir, const std::string& name,
                 const std::vector<std::array<int, kPiezoCount>>& trace, ScenarioResult& res) {
  Csv f(dir, name, "step,piezo1,piezo2,piezo3", res);
  for (std::size_t i = 0; i < trace.size(); ++i)
    f.os << i << ',' << trace[i][0] << ',' << trace[i][1] << ',' << trace[i][2] << '\n';
}

void validate(const Settings& s) {
  try {
    s.sim.validate();
  } catch (const ConfigError&) {
    throw;
  } catch (const std::exception& e) {
    throw ConfigError(e.what());
  }
  s.scenario.validate();
}

}  // namespace

bool ScenarioResult::passed() const {
  return std::all_of(checks.begin(), checks.end(), [](const ScenarioCheck& c) { return c.pass; });
}

ProportionalFit fit_proportional(const std::vector<double>& f, const std::vector<double>& y) {
  if (f.size() != y.size() || f.size() < 2) throw std::invalid_argument("fit needs matching vectors of length >= 2");
  double ff = 0, fy = 0;
  for (std::size_t i = 0; i < f.size(); ++i) {
    ff += f[i] * f[i];
    fy += f[i] * y[i];
  }
  ProportionalFit out;
  out.k = fy / ff;
  const double my = mean(y);
  double ss_res = 0, ss_tot = 0;
  for (std::size_t i = 0; i < f.size(); ++i) {
    ss_res += (y[i] - out.k * f[i]) * (y[i] - out.k * f[i]);
    ss_tot += (y[i] - my) * (y[i] - my);
  }
  out.r2 = ss_tot > 0 ? 1 - ss_res / ss_tot : 0;
  return out;
}

// ---------------------------------------------------------------------------

ScenarioResult scenario_error_sweep(const Settings& st, std::uint64_t seed, const std::filesystem::path& dir) {
  const auto& sc = st.scenario;
  const PlantConfig pc = quiet(st.sim.plant);
  const double power_w = 1e-4;
  const double counts = st.sim.seq.pol.modulation_counts;
  const Modulation mod{PolPath::Lo, 1, counts};

  auto make = [&](double dtheta) {
    Plant p(pc, seed);
    p.set_shutters({true, true, false});
    p.set_attenuation(PolPath::Probe, transmission_for(p.state(), PolPath::Probe, power_w));
    p.set_attenuation(PolPath::Lo, transmission_for(p.state(), PolPath::Lo, power_w));
    // mismatch lives on the probe so the modulated LO keeps its reference axis
    auto& s = p.state();
    const Vec3d m = s.modulation_axis(PolPath::Lo, 1);
    const Vec3d sl = stokes_from_jones(s.lo.pol).vector();
    Vec3d perp = m - m.dot(sl) * sl;
    perp.normalize();
    s.probe_install = jones_rotation<double>(perp, 2 * dtheta) * s.probe_install;
    s.refresh();
    return p;
  };

  const double level = hd_level(make(0).state(), power_w, power_w);
  const LockInConfig lc = calibrated_lockin(st, PolTarget::Homodyne, level);

  ScenarioResult res;
  std::filesystem::create_directories(dir);
  std::vector<double> xs, ys;
  {
    Csv f(dir, "error_sweep.csv", "delta_theta_rad,beta", res);
    for (int i = 0; i < sc.sweep_points; ++i) {
      const double x = -sc.sweep_max_rad + 2 * sc.sweep_max_rad * i / (sc.sweep_points - 1);
      Plant p = make(x);
      LockInChain chain(lc);
      const double b = settled_beta(p, chain, mod, false, sc.sweep_settle_s, sc.sweep_average_s);
      xs.push_back(x);
      ys.push_back(b);
      f.os << fmt(x) << ',' << fmt(b) << '\n';
    }
  }
  std::vector<double> phis, betas;
  {
    Csv f(dir, "phase_immunity.csv", "delta_phi_rad,beta", res);
    for (int i = 0; i < sc.immunity_points; ++i) {
      const double phi = 2 * kPi * i / sc.immunity_points;
      Plant p = make(sc.immunity_theta_rad);
      auto& s = p.state();
      s.stretcher_lo.voltage = s.stretcher_lo.center() - phi / s.stretcher_lo.rad_per_volt;
      if (s.stretcher_lo.voltage < 0) s.stretcher_lo.voltage += 2 * kPi / s.stretcher_lo.rad_per_volt;
      s.refresh();
      const double phase = s.hd_phase();
      LockInChain chain(lc);
      const double b = settled_beta(p, chain, mod, false, sc.sweep_settle_s, sc.sweep_average_s);
      phis.push_back(phase);
      betas.push_back(b);
      f.os << fmt(phi) << ',' << fmt(b) << '\n';
    }
  }

  std::vector<double> sx;
  for (double x : xs) sx.push_back(std::sin(x));
  const auto fit = fit_proportional(sx, ys);
  check(res, "sine_fit_r2", fit.r2 > 0.999, "R2=" + fmt(fit.r2) + " k=" + fmt(fit.k));
  const double z = zero_crossing(xs, ys, 0.0);
  check(res, "zero_crossing", std::abs(z) < 1e-3, "crossing at " + fmt(z) + " rad");
  double worst = 0;
  for (std::size_t i = 0; i < xs.size() / 2; ++i) {
    const std::size_t j = xs.size() - 1 - i;
    worst = std::max(worst, std::abs(ys[i] + ys[j]) / (0.5 * (std::abs(ys[i]) + std::abs(ys[j]))));
  }
  check(res, "antisymmetry", worst < 0.02, "worst relative asymmetry " + fmt(worst));
  const auto [lo, hi] = std::minmax_element(betas.begin(), betas.end());
  const double spread = (*hi - *lo) / std::abs(mean(betas));
  check(res, "phase_immunity", spread < 0.01, "relative spread " + fmt(spread));
  return res;
}

ScenarioResult scenario_opa_sweep(const Settings& st, std::uint64_t seed, const std::filesystem::path& dir) {
  const auto& sc = st.scenario;
  const PlantConfig pc = quiet(st.sim.plant);
  const double probe_w = st.sim.seq.targets.probe_opa_align_w;
  const Modulation mod{PolPath::Probe, 1, st.sim.seq.pol.modulation_counts};

  auto make = [&](double theta) {
    Plant p(pc, seed);
    p.set_shutters({true, false, true});
    p.set_attenuation(PolPath::Probe, transmission_for(p.state(), PolPath::Probe, probe_w));
    offset_along_piezo(p, PolPath::Probe, 1, 2 * theta);
    return p;
  };
  const double level = opa_level(make(0).state(), probe_w);
  const LockInConfig lc = calibrated_lockin(st, PolTarget::Opa, level);

  ScenarioResult res;
  std::filesystem::create_directories(dir);
  std::vector<double> xs, ys;
  {
    Csv f(dir, "opa_sweep.csv", "theta_rad,beta", res);
    for (int i = 0; i < sc.opa_points; ++i) {
      const double x = sc.opa_min_rad + (sc.opa_max_rad - sc.opa_min_rad) * i / (sc.opa_points - 1);
      Plant p = make(x);
      LockInChain chain(lc);
      const double b = settled_beta(p, chain, mod, true, sc.sweep_settle_s, sc.sweep_average_s);
      xs.push_back(x);
      ys.push_back(b);
      f.os << fmt(x) << ',' << fmt(b) << '\n';
    }
  }
  std::vector<double> s2;
  for (double x : xs) s2.push_back(std::sin(2 * x));
  const auto fit = fit_proportional(s2, ys);
  check(res, "sin2theta_fit_r2", fit.r2 > 0.999, "R2=" + fmt(fit.r2) + " k=" + fmt(fit.k));
  const double step = (sc.opa_max_rad - sc.opa_min_rad) / (sc.opa_points - 1);
  const double z0 = zero_crossing(xs, ys, 0.0), z1 = zero_crossing(xs, ys, kPi / 2);
  check(res, "zero_at_0", std::abs(z0) < 0.1 * step, "crossing at " + fmt(z0));
  check(res, "zero_at_half_pi", std::abs(z1 - kPi / 2) < 0.1 * step, "crossing at " + fmt(z1));
  return res;
}

ScenarioResult scenario_pol_compare(const Settings& st, std::uint64_t seed, const std::filesystem::path& dir) {
  const auto& sc = st.scenario;
  PlantConfig pc = quiet(st.sim.plant);
  pc.power_noise_rms = sc.compare_power_noise;
  const double power_w = 1e-4;
  const double duration = sc.compare_steps / sc.compare_rate_hz;

  auto make = [&](std::uint64_t sd) {
    Plant p(pc, sd);
    p.set_shutters({true, true, false});
    p.set_attenuation(PolPath::Probe, transmission_for(p.state(), PolPath::Probe, power_w));
    p.set_attenuation(PolPath::Lo, transmission_for(p.state(), PolPath::Lo, power_w));
    return p;
  };

  ScenarioResult res;
  std::filesystem::create_directories(dir);

  // modulation method, sampled at the step rate
  std::vector<std::array<int, kPiezoCount>> mod_trace;
  {
    Plant p = make(seed);
    const double level = hd_level(p.state(), power_w, power_w);
    LockInConfig lc = calibrated_lockin(st, PolTarget::Homodyne, level);
    const double sigma = calibrate_noise_floor(lc, level, pc.power_noise_rms / std::numbers::sqrt2, pc.power_noise_tau_s,
                                               pc.beat_noise_v, seed ^ 0x9e3779b9u);
    LockInChain chain(lc);
    PolLoopCfg cfg = st.sim.seq.pol;
    cfg.expected_level = level;
    cfg.threshold = cfg.threshold > 0 ? cfg.threshold : cfg.threshold_factor * sigma;
    cfg.cycles = 1 << 20;
    cfg.max_total_s = duration;
    const double t0 = p.time();
    PolHooks hooks;
    hooks.on_tick = [&](double) {
      while (static_cast<int>(mod_trace.size()) < sc.compare_steps &&
             p.time() - t0 >= (mod_trace.size() + 1) / sc.compare_rate_hz - 1e-12)
        mod_trace.push_back(p.bank(PolPath::Lo).values);
    };
    pol_optimize(cfg, chain, p, PolTarget::Homodyne, hooks);
    while (static_cast<int>(mod_trace.size()) < sc.compare_steps) mod_trace.push_back(p.bank(PolPath::Lo).values);
  }
  write_codes(dir, "pol_modulation.csv", mod_trace, res);

  std::vector<std::array<int, kPiezoCount>> rw_trace;
  {
    Plant p = make(seed ^ 0x5bd1e995u);
    std::seed_seq sq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32), 0x77u};
    std::mt19937_64 rng(sq);
    rw_trace = random_walk_optimize({sc.walk_step_counts, sc.compare_steps, sc.compare_rate_hz}, p, PolTarget::Homodyne, rng);
  }
  write_codes(dir, "pol_random_walk.csv", rw_trace, res);

  const auto ms = piezo_std(mod_trace), rs = piezo_std(rw_trace);
  const double mod_max = *std::max_element(ms.begin(), ms.end());
  check(res, "modulation_std", mod_max < 2, "per-piezo std " + triple(ms));
  // a piezo that never moves has zero std; compare against a floor so the ratio stays meaningful
  const double floor = std::max(mod_max, 0.2);
  const double rw_min = *std::min_element(rs.begin(), rs.end());
  check(res, "random_walk_ratio", rw_min >= 10 * floor, "per-piezo std " + triple(rs) + " vs 10 x " + fmt(floor));
  return res;
}

ScenarioResult scenario_pol_basin(const Settings& st, std::uint64_t seed, const std::filesystem::path& dir) {
  const auto& sc = st.scenario;
  const double power_w = 1e-4;
  ScenarioResult res;
  std::filesystem::create_directories(dir);
  Csv f(dir, "pol_basin.csv", "offset_rad,converged,mismatch_loss,beta_max,duration_s", res);
  LockInConfig lc;
  double thr = 0;
  bool origin_ok = false;
  for (int i = 0; i < sc.basin_points; ++i) {
    PlantConfig pc = quiet(st.sim.plant);
    pc.lo_pol_offset_rad = sc.basin_max_rad * i / (sc.basin_points - 1);
    Plant p(pc, seed);
    p.set_shutters({true, true, false});
    p.set_attenuation(PolPath::Probe, transmission_for(p.state(), PolPath::Probe, power_w));
    p.set_attenuation(PolPath::Lo, transmission_for(p.state(), PolPath::Lo, power_w));
    const double level = hd_level(p.state(), power_w, power_w);
    if (i == 0) {
      lc = calibrated_lockin(st, PolTarget::Homodyne, level);
      thr = st.sim.seq.pol.threshold_factor * calibrate_noise_floor(lc, level, pc.power_noise_rms / std::numbers::sqrt2,
                                                                    pc.power_noise_tau_s, pc.beat_noise_v, seed ^ 0x9e3779b9u);
    }
    LockInChain chain(lc);
    PolLoopCfg cfg = st.sim.seq.pol;
    cfg.expected_level = level;
    if (!(cfg.threshold > 0)) cfg.threshold = thr;
    const double t0 = p.time();
    const PolResult r = pol_optimize(cfg, chain, p, PolTarget::Homodyne);
    const auto& s = p.state();
    const double loss = 1 - mode_overlap(s.lo.pol, s.probe.pol);
    double bmax = 0;
    for (double b : r.final_beta) bmax = std::max(bmax, std::abs(b));
    const bool ok = r.converged && loss <= 1e-3;
    if (i == 0) origin_ok = ok;
    f.os << fmt(pc.lo_pol_offset_rad) << ',' << ok << ',' << fmt(loss) << ',' << fmt(bmax) << ',' << fmt(p.time() - t0)
         << '\n';
  }
  check(res, "optimum_is_stable", origin_ok, "zero offset stays converged");
  return res;
}

ScenarioResult scenario_coupling_lock(const Settings& st, std::uint64_t seed, const std::filesystem::path& dir) {
  const auto& sc = st.scenario;
  const double comp = st.sim.seq.compression;
  ScenarioResult res;
  std::filesystem::create_directories(dir);

  auto run = [&](bool hold, const std::string& name) {
    Plant p(st.sim.plant, seed);
    p.set_shutters({false, true, false});
    p.set_attenuation(PolPath::Lo, transmission_for(p.state(), PolPath::Lo, st.sim.seq.targets.lo_measure_w));
    CouplingLoopCfg cc = st.sim.seq.coupling;
    cc.thermistor_hold = hold;
    CouplingLoop loop(cc, p.state().peltier_command_c);
    Csv f(dir, name, "t_s,ratio,temperature_c,dc_volts", res);
    std::vector<double> ratios;
    const double read = st.sim.seq.dc_read_interval_s;
    double next_step = sc.coupling_tick_s, next_out = 0;
    DcReading last{};
    while (true) {
      const double t = p.time();
      if (t >= next_out - 1e-9) {
        const auto& s = p.state();
        const double r = splitter_ratio(s.bs_hd, s.lo.pol);
        ratios.push_back(r);
        f.os << fmt(t / comp) << ',' << fmt(r) << ',' << fmt(s.bs_hd.temperature_c) << ',' << fmt(last.volts) << '\n';
        next_out += sc.coupling_output_s;
      }
      if (t >= sc.coupling_horizon_s - 1e-9) break;
      last = p.read_homodyne_dc();
      loop.add_sample(last);
      p.advance_seconds(read);
      if (p.time() >= next_step - 1e-9) {
        p.state().peltier_command_c = loop.step(sc.coupling_tick_s);
        next_step += sc.coupling_tick_s;
      }
    }
    return ratios;
  };

  const auto fb = run(false, "coupling_feedback.csv");
  const auto hd = run(true, "coupling_hold.csv");
  double exc = 0;
  for (double r : fb) exc = std::max(exc, std::abs(r - 0.5));
  const auto [lo, hi] = std::minmax_element(hd.begin(), hd.end());
  check(res, "feedback_std", stdev(fb) <= 2e-4, "ratio std " + fmt(stdev(fb)));
  check(res, "feedback_excursion", exc <= 1e-3, "max |ratio - 0.5| " + fmt(exc));
  check(res, "hold_excursion", *hi - *lo >= 5e-3, "peak-to-peak " + fmt(*hi - *lo));
  bool bounded = true;
  for (const auto* v : {&fb, &hd})
    for (double r : *v) bounded = bounded && r >= 0 && r <= 1;
  check(res, "bounded", bounded, "all ratios in [0, 1]");
  return res;
}

namespace {

/// Mean non-outlier sq over the first / last `frac` of the records.
std::pair<double, double> window_means(const std::vector<MeasurementRecord>& recs, double frac) {
  const std::size_t n = std::max<std::size_t>(1, static_cast<std::size_t>(std::llround(recs.size() * frac)));
  auto avg = [&](std::size_t b, std::size_t e) {
    std::vector<double> v;
    for (std::size_t i = b; i < e; ++i)
      if (!recs[i].outlier) v.push_back(recs[i].sq_db);
    return v.empty() ? std::numeric_limits<double>::quiet_NaN() : mean(v);
  };
  return {avg(0, n), avg(recs.size() - n, recs.size())};
}

}  // namespace

ScenarioResult scenario_longrun(const Settings& st, std::uint64_t seed, const std::filesystem::path& dir) {
  Sequencer seq(st.sim, seed);
  seq.run_schedule();
  ScenarioResult res;
  res.files = seq.write(dir);
  const auto& recs = seq.records();
  const int expect = st.sim.seq.measurement_count();
  check(res, "record_count", static_cast<int>(recs.size()) == expect,
        std::to_string(recs.size()) + " of " + std::to_string(expect));
  if (!st.sim.seq.loops_off) {
    int outl = 0;
    for (const auto& r : recs) outl += r.outlier;
    const double frac = recs.empty() ? 1.0 : static_cast<double>(outl) / recs.size();
    check(res, "outlier_fraction", frac < 0.05, fmt(frac));
    try {
      const auto s = summarize(recs);
      check(res, "sq_std", s.std_sq <= 0.1, "std " + fmt(s.std_sq) + " dB around " + fmt(s.mean_sq));
      check(res, "loss_std", s.std_loss <= 0.01, "std " + fmt(s.std_loss));
      check(res, "loss_mean", std::abs(s.mean_loss - 0.27) <= 0.02, "mean " + fmt(s.mean_loss));
    } catch (const AnalysisError& e) {
      check(res, "summary", false, e.what());
    }
    check(res, "no_stretcher_moves_in_alignment", seq.alignment_stretcher_moves() == 0,
          std::to_string(seq.alignment_stretcher_moves()));
  } else {
    const auto [first, last] = window_means(recs, 0.1);
    check(res, "degradation", last - first >= 0.5,
          "initial " + fmt(first) + " dB, final " + fmt(last) + " dB, change " + fmt(last - first));
  }
  return res;
}

ScenarioResult scenario_power(const Settings& st, std::uint64_t seed, const std::filesystem::path& dir) {
  const auto& sc = st.scenario;
  const auto& tg = st.sim.seq.targets;
  struct Target {
    PolPath path;
    double w;
  };
  const Target targets[] = {{PolPath::Probe, tg.probe_opa_align_w},
                            {PolPath::Probe, tg.probe_hd_align_w},
                            {PolPath::Probe, tg.probe_measure_w},
                            {PolPath::Lo, tg.lo_align_w},
                            {PolPath::Lo, tg.lo_measure_w}};
  PlantConfig pc = quiet(st.sim.plant);
  for (auto ch : {DriftChannel::PowerProbe, DriftChannel::PowerLo}) {
    auto& d = pc.drifts[static_cast<int>(ch)];
    d.sine_amplitude = sc.power_drift_pp / 2;
    d.sine_period_s = sc.power_period_s;
  }
  const double dt = st.sim.seq.tick_s;
  const int n = static_cast<int>(std::llround(sc.power_duration_s / dt));
  const int n_settle = static_cast<int>(std::llround(sc.power_settle_s / dt));
  const int every = std::max(1, static_cast<int>(std::llround(0.1 / dt)));

  ScenarioResult res;
  std::filesystem::create_directories(dir);
  Csv f(dir, "power.csv", "path,target_w,loop,t_s,power_w,transmission", res);
  Csv g(dir, "power_summary.csv", "path,target_w,loop,residual_std,saturated", res);
  for (const auto& tgt : targets) {
    const char* pname = tgt.path == PolPath::Probe ? "probe" : "lo";
    for (bool on : {true, false}) {
      Plant p(pc, seed);
      p.set_shutters({tgt.path == PolPath::Probe, tgt.path == PolPath::Lo, false});
      PowerLoopCfg cfg = st.sim.seq.power;
      cfg.target_w = tgt.w;
      PowerLoop loop(cfg, transmission_for(p.state(), tgt.path, tgt.w));
      p.set_attenuation(tgt.path, loop.transmission());
      std::vector<double> rel;
      bool sat = false;
      for (int i = 0; i < n; ++i) {
        const auto& s = p.state();
        const double truth = tgt.path == PolPath::Probe ? s.probe_power() : s.lo_power();
        if (i >= n_settle) rel.push_back(truth / tgt.w - 1);
        if (i % every == 0)
          f.os << pname << ',' << fmt(tgt.w) << ',' << (on ? "on" : "off") << ',' << fmt(p.time() / st.sim.seq.compression) << ',' << fmt(truth) << ','
               << fmt(on ? loop.transmission() : (tgt.path == PolPath::Probe ? s.att_probe : s.att_lo)) << '\n';
        if (on) {
          p.set_attenuation(tgt.path, loop.step(p.read_power(tgt.path), dt));
          sat = sat || loop.saturated();
        }
        p.advance_seconds(dt);
      }
      const double sd = stdev(rel);
      g.os << pname << ',' << fmt(tgt.w) << ',' << (on ? "on" : "off") << ',' << fmt(sd) << ',' << sat << '\n';
      const std::string tag = std::string(pname) + "_" + fmt(tgt.w) + (on ? "_on" : "_off");
      if (on)
        check(res, tag, sd <= 1e-3 && !sat, "residual std " + fmt(sd));
      else
        check(res, tag, sd >= 0.2 * sc.power_drift_pp, "open-loop std " + fmt(sd));
    }
  }
  return res;
}

ScenarioResult scenario_stretcher_reset(const Settings& st, std::uint64_t seed, const std::filesystem::path& dir) {
  SimConfig cfg = st.sim;
  cfg.seq.horizon_s = st.scenario.ramp_horizon_s;
  cfg.plant.drifts[static_cast<int>(DriftChannel::PhaseProbe)].ramp = st.scenario.ramp_rad_per_s;
  Sequencer seq(cfg, seed);
  seq.run_schedule();
  ScenarioResult res;
  res.files = seq.write(dir);

  const double total = std::abs(st.scenario.ramp_rad_per_s) * cfg.seq.horizon_s;
  const auto& iv = seq.relock().intervals();
  int resets = seq.opa_lock().resets() + seq.hd_lock().resets();
  check(res, "ramp_exceeds_6pi", total > 6 * kPi, "total ramp " + fmt(total) + " rad");
  check(res, "resets", resets >= 1, std::to_string(resets) + " resets, " + std::to_string(iv.size()) + " intervals");
  double longest = 0;
  for (const auto& i : iv) longest = std::max(longest, i.open() ? 1e9 : i.end_s - i.start_s);
  check(res, "relock_time", longest < 0.2, "longest relock " + fmt(longest) + " s");
  const auto& recs = seq.records();
  const auto& wins = seq.windows();
  int flagged = 0, missed = 0;
  for (std::size_t k = 0; k < recs.size(); ++k) {
    const bool hit = seq.relock().overlaps(wins[k].sample_start, wins[k].sample_end);
    flagged += hit;
    if (hit && !recs[k].outlier) ++missed;
  }
  check(res, "overlaps_flagged", missed == 0,
        std::to_string(flagged) + " overlapping measurements, " + std::to_string(missed) + " unflagged");
  try {
    const auto s = summarize(recs);
    int outl = 0;
    std::vector<double> clean;
    for (const auto& r : recs) {
      outl += r.outlier;
      if (!r.outlier) clean.push_back(r.sq_db);
    }
    const bool ok = s.n_outliers == outl && s.n_total == static_cast<int>(recs.size()) && std::abs(s.mean_sq - mean(clean)) < 1e-12;
    check(res, "summary_excludes_outliers", ok, std::to_string(s.n_outliers) + " excluded of " + std::to_string(s.n_total));
  } catch (const AnalysisError& e) {
    check(res, "summary_excludes_outliers", false, e.what());
  }
  return res;
}

// ---------------------------------------------------------------------------

const std::vector<ScenarioInfo>& scenario_catalog() {
  static const std::vector<ScenarioInfo> cat = {
      {"error_sweep", "polarization error signal against probe/LO mismatch, and its optical-phase immunity",
       {"error_sweep.csv: delta_theta_rad,beta", "phase_immunity.csv: delta_phi_rad,beta"}},
      {"opa_sweep", "OPA-path error signal against the probe angle to the crystal axis", {"opa_sweep.csv: theta_rad,beta"}},
      {"pol_compare", "modulation method against the random-walk baseline at the optimum",
       {"pol_modulation.csv: step,piezo1,piezo2,piezo3", "pol_random_walk.csv: step,piezo1,piezo2,piezo3"}},
      {"pol_basin", "convergence of the modulation method against the initial LO offset",
       {"pol_basin.csv: offset_rad,converged,mismatch_loss,beta_max,duration_s"}},
      {"coupling_lock", "homodyne splitting ratio under DC feedback and under thermistor hold",
       {"coupling_feedback.csv: t_s,ratio,temperature_c,dc_volts", "coupling_hold.csv: t_s,ratio,temperature_c,dc_volts"}},
      {"longrun", "full measurement campaign (set seq.loops_off=1 for the uncontrolled reference)",
       {"records.csv: t_s,sq_db,asq_db,shot_ref,loss_est,outlier,reason",
        "summary.csv: n_total,n_outliers,mean_sq_db,std_sq_db,mean_asq_db,std_asq_db,mean_loss,std_loss,max_dev_sq_db,"
        "max_dev_loss",
        "windows.csv: t_s,sample_start_s,sample_end_s,shot_start_s,shot_end_s,t_end_s",
        "alignment.csv: alignment,stage,name,t_start_s,t_end_s,converged,skipped,beta1..3,code1..3,mismatch_loss,"
        "coupling_ratio,diagnostic",
        "relock.csv: start_s,end_s,loop", "shutters.csv: t_s,probe,lo,pump",
        "loops_phase.csv: t_s,loop,error_rad,voltage_v,amplitude_v,idle,reset",
        "loops_power.csv: t_s,path,target_w,measured_w,transmission,saturated",
        "loops_coupling.csv: t_s,dc_mean_v,ratio,command_c,coupler_c,saturated"}},
      {"power", "power stabilization at every target under injected source drift",
       {"power.csv: path,target_w,loop,t_s,power_w,transmission", "power_summary.csv: path,target_w,loop,residual_std,saturated"}},
      {"stretcher_reset", "campaign with a forced phase ramp; stretcher resets and outlier flagging",
       {"same files as longrun"}},
  };
  return cat;
}

bool scenario_exists(const std::string& name) {
  const auto& c = scenario_catalog();
  return std::any_of(c.begin(), c.end(), [&](const ScenarioInfo& i) { return i.name == name; });
}

ScenarioResult run_scenario(const std::string& name, const Settings& settings, std::uint64_t seed,
                            const std::filesystem::path& dir) {
  if (!scenario_exists(name)) throw ConfigError("unknown scenario: " + name);
  validate(settings);
  if (name == "error_sweep") return scenario_error_sweep(settings, seed, dir);
  if (name == "opa_sweep") return scenario_opa_sweep(settings, seed, dir);
  if (name == "pol_compare") return scenario_pol_compare(settings, seed, dir);
  if (name == "pol_basin") return scenario_pol_basin(settings, seed, dir);
  if (name == "coupling_lock") return scenario_coupling_lock(settings, seed, dir);
  if (name == "longrun") return scenario_longrun(settings, seed, dir);
  if (name == "power") return scenario_power(settings, seed, dir);
  return scenario_stretcher_reset(settings, seed, dir);
}

}  // namespace sqz
