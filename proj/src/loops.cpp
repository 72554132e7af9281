#include "sqz/loops.hpp"

#include <algorithm>
#include <cmath>
#include <complex>
#include <limits>
#include <numbers>

namespace sqz {

namespace {
constexpr double kPi = std::numbers::pi;

double wrap(double x) {
  x = std::remainder(x, 2 * kPi);
  return x <= -kPi ? x + 2 * kPi : x;
}
}  // namespace

// ---------------------------------------------------------------------------

PowerLoop::PowerLoop(const PowerLoopCfg& cfg, double transmission) : cfg_(cfg) {
  if (!(cfg.target_w > 0)) throw DspError("power target must be positive");
  if (!(cfg.loop_gain > 0)) throw DspError("power loop gain must be positive");
  transmission_ = std::clamp(transmission, cfg.min_transmission, 1.0);
}

void PowerLoop::set_target(double w) {
  if (!(w > 0)) throw DspError("power target must be positive");
  cfg_.target_w = w;
}

double PowerLoop::step(double measured_w, double dt) {
  if (!(dt > 0)) throw DspError("power loop step requires dt > 0");
  const double m = std::max(measured_w, cfg_.target_w * 1e-6);
  const double lt = std::log(transmission_) + cfg_.loop_gain * dt * std::log(cfg_.target_w / m);
  transmission_ = std::clamp(std::exp(lt), cfg_.min_transmission, 1.0);
  saturated_ = transmission_ >= 1.0 && measured_w < cfg_.target_w * (1 - 1e-3);
  return transmission_;
}

// ---------------------------------------------------------------------------

std::int64_t PhaseLoop::block_length(double fs) const {
  return std::max<std::int64_t>(1, std::llround(cfg_.block_cycles * fs / cfg_.carrier_hz));
}

std::pair<double, double> PhaseLoop::demodulate(std::span<const double> block, std::int64_t first, double fs) const {
  std::complex<double> z = 0;
  const double sgn = cfg_.carrier_sign > 0 ? -1.0 : 1.0;
  for (std::size_t i = 0; i < block.size(); ++i)
    z += block[i] * std::polar(1.0, sgn * clock_phase(first + static_cast<std::int64_t>(i), cfg_.carrier_hz, fs));
  z *= 2.0 / static_cast<double>(block.size());
  return {std::arg(z), std::abs(z)};
}

PhaseTick PhaseLoop::step(std::span<const double> block, std::int64_t first, double fs, double dt, StretcherModel& st) {
  if (!(dt > 0)) throw DspError("phase loop step requires dt > 0");
  const auto [phase, amp] = demodulate(block, first, fs);
  PhaseTick t;
  t.amplitude = amp;
  t.voltage = st.voltage;
  if (!(amp >= cfg_.min_amplitude)) {
    t.idle = true;
    last_ = t;
    return t;
  }
  t.error = wrap(phase - cfg_.lock_point - cfg_.lock_quadrature);
  const double dv = -cfg_.loop_gain * t.error * dt / (cfg_.phase_per_stretcher_rad * st.rad_per_volt);
  double v = st.voltage + dv;
  if (v < 0 || v > st.max_voltage) {
    v = st.center();
    t.reset = true;
    ++resets_;
  }
  st.voltage = v;
  t.voltage = v;
  last_ = t;
  return t;
}

void RelockTracker::on_reset(double t, const std::string& loop) {
  good_ = 0;
  if (relocking()) {
    // a second reset while relocking extends the same interval
    intervals_.back().loop += "+" + loop;
    return;
  }
  intervals_.push_back({t, -1.0, loop});
  intervals_.back().end_s = t - 1;
}

void RelockTracker::on_tick(double t, std::span<const double> errors) {
  if (!relocking()) return;
  const bool ok = std::all_of(errors.begin(), errors.end(), [&](double e) { return std::abs(e) < tol_; });
  good_ = ok ? good_ + 1 : 0;
  if (good_ >= need_) {
    intervals_.back().end_s = t;
    good_ = 0;
  }
}

void RelockTracker::release(double t) {
  if (relocking()) intervals_.back().end_s = t;
  good_ = 0;
}

bool RelockTracker::overlaps(double t0, double t1) const {
  for (const auto& iv : intervals_) {
    const double end = iv.open() ? std::numeric_limits<double>::infinity() : iv.end_s;
    if (iv.start_s <= t1 && end >= t0) return true;
  }
  return false;
}

// ---------------------------------------------------------------------------

PolPath pol_path(PolTarget t) { return t == PolTarget::Opa ? PolPath::Probe : PolPath::Lo; }

LockInConfig lockin_for(PolTarget t, const LockInConfig& base, const PlantConfig& plant) {
  LockInConfig c = base;
  c.sample_rate_hz = plant.sample_rate_hz;
  c.carrier_hz = t == PolTarget::Opa ? 2 * plant.beat_hz : plant.beat_hz;
  c.demod_hz = plant.modulation_hz;
  return c;
}

double pol_sensitivity(PolTarget t, double level, double modulation_rad) {
  const double aj = modulation_rad / 2;
  return t == PolTarget::Opa ? level * aj : level * aj / 2;
}

namespace {

struct PolRunner {
  const PolLoopCfg& cfg;
  LockInChain& chain;
  Plant& plant;
  PolTarget target;
  const PolHooks& hooks;
  std::vector<double> buf;
  std::int64_t tick_samples;
  std::int64_t ticks = 0;
  PolResult* out;

  void tick(const Modulation& mod) {
    const std::int64_t n0 = plant.clock();
    if (target == PolTarget::Opa)
      plant.render_opa_monitor(buf, mod);
    else
      plant.render_hd_beat(buf, mod);
    chain.process(buf, n0);
    plant.advance(tick_samples);
    const double dt = static_cast<double>(tick_samples) / plant.sample_rate();
    if (hooks.on_tick) hooks.on_tick(dt);
    ++ticks;
    if (hooks.trace_every > 0 && ticks % hooks.trace_every == 0) {
      PolTraceSample s;
      s.t = plant.time();
      s.modulated = mod.active() ? mod.piezo : -1;
      s.beta = chain.error();
      s.codes = plant.bank(pol_path(target)).values;
      out->trace.push_back(s);
    }
  }
};

}  // namespace

PolResult pol_optimize(const PolLoopCfg& cfg, LockInChain& chain, Plant& plant, PolTarget target, const PolHooks& hooks) {
  if (!(cfg.modulation_counts > 0)) throw DspError("modulation amplitude must be positive");
  if (cfg.cycles < 1) throw DspError("pol loop needs at least one cycle");
  if (!(cfg.tick_s > 0) || !(cfg.settle_s >= 0) || !(cfg.max_integrate_s > 0)) throw DspError("pol loop timing invalid");
  const PolPath path = pol_path(target);
  PolResult res;
  const std::int64_t tick_samples = std::max<std::int64_t>(1, std::llround(cfg.tick_s * plant.sample_rate()));
  const double dt = static_cast<double>(tick_samples) / plant.sample_rate();
  PolRunner run{cfg, chain, plant, target, hooks, std::vector<double>(tick_samples), tick_samples, 0, &res};
  const Modulation off{path, -1, 0};
  const double t_begin = plant.time();

  res.converged = true;
  bool stop = false;
  for (int cycle = 0; cycle < cfg.cycles && !stop; ++cycle) {
    for (int k = 0; k < kPiezoCount; ++k) {
      if (cfg.max_total_s > 0 && plant.time() - t_begin >= cfg.max_total_s) {
        stop = true;
        break;
      }
      const Modulation mod{path, k, cfg.modulation_counts};
      PolSubLoop sub;
      sub.cycle = cycle;
      sub.piezo = k;
      sub.t_start = plant.time();
      sub.code_start = plant.bank(path).values[k];
      chain.reset();
      const int settle_ticks = static_cast<int>(std::llround(cfg.settle_s / dt));
      for (int i = 0; i < settle_ticks; ++i) run.tick(mod);
      sub.beta_start = chain.error();

      const double rpc = plant.bank(path).rad_per_count(k);
      const double level = cfg.expected_level > 0 ? cfg.expected_level : chain.carrier_level();
      const double sens = pol_sensitivity(target, level, cfg.modulation_counts * rpc);
      const double thr = std::max(cfg.threshold, sens * rpc / 2);
      res.threshold = thr;
      sub.converged = std::abs(sub.beta_start) < thr;
      double beta = sub.beta_start;
      if (!sub.converged && sens > 0) {
        const double gain = 2 * kPi * cfg.bandwidth_hz / (sens * rpc);
        double acc = sub.code_start;
        const int max_ticks = static_cast<int>(std::llround(cfg.max_integrate_s / dt));
        for (int i = 0; i < max_ticks; ++i) {
          acc += cfg.polarity * gain * beta * dt;
          acc = std::clamp(acc, 0.0, static_cast<double>(kPiezoMax));
          const int code = PiezoBank::clamp_code(acc);
          if (code != plant.bank(path).values[k]) plant.set_piezo(path, k, code);
          run.tick(mod);
          beta = chain.error();
          if (std::abs(beta) < thr) {
            sub.converged = true;
            break;
          }
        }
      }
      // hold, then drop the modulation
      sub.beta_end = beta;
      sub.code_end = plant.bank(path).values[k];
      sub.t_end = plant.time();
      res.final_beta[k] = beta;
      if (!sub.converged && cycle == cfg.cycles - 1) res.converged = false;
      res.subloops.push_back(sub);
      run.tick(off);
    }
  }
  res.bank = plant.bank(path);
  if (!res.converged) {
    res.diagnostic = "not converged; final |beta| per piezo:";
    for (double b : res.final_beta) res.diagnostic += " " + std::to_string(std::abs(b));
  }
  return res;
}

std::vector<std::array<int, kPiezoCount>> random_walk_optimize(const RandomWalkCfg& cfg, Plant& plant, PolTarget target,
                                                               std::mt19937_64& rng) {
  if (cfg.steps < 0 || cfg.step_counts <= 0 || !(cfg.rate_hz > 0)) throw DspError("random walk parameters invalid");
  const PolPath path = pol_path(target);
  auto amplitude = [&] { return target == PolTarget::Opa ? plant.opa_beat_amplitude() : plant.hd_beat_amplitude(); };
  std::uniform_int_distribution<int> pick(0, kPiezoCount - 1);
  std::bernoulli_distribution dir(0.5);
  const double half = 0.5 / cfg.rate_hz;
  std::vector<std::array<int, kPiezoCount>> trace;
  trace.reserve(cfg.steps);
  for (int i = 0; i < cfg.steps; ++i) {
    const double before = amplitude();
    const int k = pick(rng);
    const int old = plant.bank(path).values[k];
    plant.set_piezo(path, k, old + (dir(rng) ? cfg.step_counts : -cfg.step_counts));
    plant.advance_seconds(half);
    if (!(amplitude() > before)) plant.set_piezo(path, k, old);
    plant.advance_seconds(half);
    trace.push_back(plant.bank(path).values);
  }
  return trace;
}

double calibrate_noise_floor(const LockInConfig& cfg, double level, double noise_rms, double noise_tau_s, double white_v,
                             std::uint64_t seed, double duration_s) {
  if (!(duration_s > 0.2)) throw DspError("noise floor calibration needs more than 0.2 s");
  LockInChain chain(cfg);
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> g(0.0, 1.0);
  const double fs = cfg.sample_rate_hz;
  const std::int64_t block = std::max<std::int64_t>(1, std::llround(1e-3 * fs));
  const std::int64_t total = std::llround(duration_s * fs);
  const double e = std::exp(-static_cast<double>(block) / fs / noise_tau_s);
  const double k = noise_rms * std::sqrt(1 - e * e);
  double n = noise_rms * g(rng);
  std::vector<double> buf(block), out;
  for (std::int64_t n0 = 0; n0 + block <= total; n0 += block) {
    const double a = level * (1 + n);
    for (std::int64_t i = 0; i < block; ++i) {
      buf[i] = a * std::cos(clock_phase(n0 + i, cfg.carrier_hz, fs));
      if (white_v > 0) buf[i] += white_v * g(rng);
    }
    chain.process(buf, n0);
    if (n0 >= total / 2) out.push_back(chain.error());
    n = n * e + k * g(rng);
  }
  double mean = 0, var = 0;
  for (double v : out) mean += v;
  mean /= static_cast<double>(out.size());
  for (double v : out) var += (v - mean) * (v - mean);
  return std::sqrt(var / static_cast<double>(out.size()) + mean * mean);
}

// ---------------------------------------------------------------------------

void CouplingLoop::add_sample(const DcReading& r) {
  sum_ += r.volts;
  ++count_;
  any_saturated_ = any_saturated_ || r.saturated;
}

double CouplingLoop::step(double dt) {
  if (!(dt > 0)) throw DspError("coupling loop step requires dt > 0");
  last_mean_ = count_ ? sum_ / count_ : 0.0;
  last_saturated_ = any_saturated_;
  sum_ = 0;
  count_ = 0;
  any_saturated_ = false;
  if (cfg_.thermistor_hold) return command_;
  double err = last_mean_ - cfg_.setpoint_v;
  if (last_saturated_) err = std::copysign(cfg_.saturation_v, err);
  const double lim = cfg_.slew_c_per_s * dt;
  command_ += std::clamp(-cfg_.loop_gain * err * dt, -lim, lim);
  return command_;
}

}  // namespace sqz
