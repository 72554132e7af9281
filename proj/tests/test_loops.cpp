#include "oracles.hpp"
#include "sqz/loops.hpp"

#include <doctest.h>

using namespace sqz;
using oracle::pi;

namespace {

PlantConfig quiet_config() {
  PlantConfig c;
  c.drifts = DriftSpecs{};
  return c;
}

void set_power(Plant& p, PolPath path, double watts) {
  const auto& s = p.state();
  const auto& c = s.cfg;
  const double avail = path == PolPath::Probe ? c.probe_source_w * s.source_factor_probe() * c.probe_monitor.through()
                                              : c.lo_source_w * s.source_factor_lo() * c.lo_monitor.through();
  p.set_attenuation(path, watts / avail);
}

struct PolSetup {
  Plant plant;
  LockInConfig lockin;
  PolLoopCfg cfg;
};

PolSetup hd_setup(double lo_offset, std::uint64_t seed = 1) {
  PlantConfig pc = quiet_config();
  pc.lo_pol_offset_rad = lo_offset;
  Plant p(pc, seed);
  p.set_shutters({true, true, false});
  set_power(p, PolPath::Probe, 1e-4);
  set_power(p, PolPath::Lo, 1e-4);
  const double level = p.state().hd_beat_gain() * 2 * 1e-4;
  LockInConfig lc = lockin_for(PolTarget::Homodyne, LockInConfig{}, pc);
  lc.demod_allpass_phase = calibrate_allpass_phase(lc, level);
  PolLoopCfg cfg;
  cfg.expected_level = level;
  cfg.threshold = cfg.threshold_factor *
                  calibrate_noise_floor(lc, level, pc.power_noise_rms / std::sqrt(2.0), pc.power_noise_tau_s, 0, seed + 99);
  return {std::move(p), lc, cfg};
}

PolSetup opa_setup(double probe_offset, std::uint64_t seed = 1) {
  PlantConfig pc = quiet_config();
  pc.probe_pol_offset_rad = probe_offset;
  Plant p(pc, seed);
  p.set_shutters({true, false, true});
  set_power(p, PolPath::Probe, 1e-6);
  const auto& s = p.state();
  const double level = s.pd5_gain() * 1e-6 * std::sinh(2 * s.opa.squeeze_parameter(pc.pump_power_w));
  LockInConfig lc = lockin_for(PolTarget::Opa, LockInConfig{}, pc);
  lc.demod_allpass_phase = calibrate_allpass_phase(lc, level);
  PolLoopCfg cfg;
  cfg.expected_level = level;
  cfg.threshold = cfg.threshold_factor *
                  calibrate_noise_floor(lc, level, pc.power_noise_rms / std::sqrt(2.0), pc.power_noise_tau_s, 0, seed + 99);
  return {std::move(p), lc, cfg};
}

double hd_mismatch(const Plant& p) { return 1 - mode_overlap(p.state().lo.pol, p.state().probe.pol); }

/// Drive one phase lock directly against a plant for `seconds`; returns the ticks.
std::vector<PhaseTick> run_lock(Plant& p, PhaseLoop& loop, bool opa, double seconds) {
  const double fs = p.sample_rate();
  const std::int64_t n = std::llround(1e-3 * fs);
  std::vector<double> buf(static_cast<std::size_t>(loop.block_length(fs)));
  std::vector<PhaseTick> ticks;
  auto& st = opa ? p.state().stretcher_probe : p.state().stretcher_lo;
  for (int i = 0; i < static_cast<int>(std::llround(seconds / 1e-3)); ++i) {
    if (opa)
      p.render_opa_monitor(buf, Modulation{});
    else
      p.render_hd_beat(buf, Modulation{});
    ticks.push_back(loop.step(buf, p.clock(), fs, n / fs, st));
    p.advance(n);
  }
  return ticks;
}

}  // namespace

TEST_CASE("power loop") {
  PowerLoop loop({1e-6, 50, 1e-9}, 0.01);
  CHECK(loop.step(1e-6, 1e-3) == doctest::Approx(0.01).epsilon(1e-15));

  // constant 15% disturbance: the integral removes it
  double t = 0.01;
  const double source = 1e-4 * 0.85;
  for (int i = 0; i < 2000; ++i) t = loop.step(source * t, 1e-3);
  CHECK(std::abs(source * t / 1e-6 - 1) < 1e-3);
  CHECK_FALSE(loop.saturated());

  PowerLoop starved({1e-3, 50, 1e-9}, 0.5);
  for (int i = 0; i < 2000; ++i) starved.step(1e-4 * starved.transmission(), 1e-3);
  CHECK(starved.transmission() == 1.0);
  CHECK(starved.saturated());
  CHECK_THROWS_AS(PowerLoop({-1, 50, 1e-9}, 0.5), DspError);
}

TEST_CASE("power loop on a drifting plant") {
  PlantConfig pc = quiet_config();
  pc.drifts[static_cast<int>(DriftChannel::PowerProbe)] = DriftSpec{0, 0, 0.075, 60, 0};
  Plant p(pc, 3);
  p.set_shutters({true, false, false});
  PowerLoop loop({1e-6, 50, 1e-9}, p.state().att_probe);
  std::vector<double> resid;
  for (int i = 0; i < 120000; ++i) {
    p.set_attenuation(PolPath::Probe, loop.step(p.read_power(PolPath::Probe), 1e-3));
    p.advance_seconds(1e-3);
    if (i > 5000 && i % 10 == 0) resid.push_back(p.state().probe_power() / 1e-6 - 1);
  }
  CHECK(oracle::pstd(resid) <= 1e-3);
}

TEST_CASE("phase lock holds a quiet plant") {
  Plant p(quiet_config(), 1);
  p.set_shutters({true, true, false});
  set_power(p, PolPath::Probe, 1e-7);
  set_power(p, PolPath::Lo, 16e-3);
  PhaseLoopCfg cfg{200e3, -1, 0, 0, 250, -1, 5e-2, 1};
  // start exactly at the lock point
  PhaseLoop probe(cfg);
  std::vector<double> buf(static_cast<std::size_t>(probe.block_length(p.sample_rate())));
  p.render_hd_beat(buf, Modulation{});
  cfg.lock_point = probe.demodulate(buf, p.clock(), p.sample_rate()).first;
  PhaseLoop loop(cfg);
  const double v0 = p.state().stretcher_lo.voltage;
  const auto ticks = run_lock(p, loop, false, 0.5);
  for (const auto& t : ticks) CHECK(std::abs(t.voltage - v0) < 1e-9);
}

TEST_CASE("opa phase lock under default drift") {
  Plant p(PlantConfig{}, 4);
  p.set_shutters({true, false, true});
  set_power(p, PolPath::Probe, 1e-7);
  PhaseLoop loop({400e3, +1, 0, 0, 100, -2, 5e-3, 2});
  const auto ticks = run_lock(p, loop, true, 30);
  std::vector<double> err;
  for (std::size_t i = 5000; i < ticks.size(); ++i) {
    REQUIRE_FALSE(ticks[i].idle);
    err.push_back(ticks[i].error);
  }
  const double rms = std::sqrt(oracle::mean([&] {
    std::vector<double> sq;
    for (double e : err) sq.push_back(e * e);
    return sq;
  }()));
  CHECK(rms * 180 / pi <= 2.0);
}

TEST_CASE("phase lock resets and relocks on a ramp") {
  PlantConfig pc = quiet_config();
  pc.drifts[static_cast<int>(DriftChannel::PhaseLo)].ramp = 10;
  Plant p(pc, 2);
  p.set_shutters({true, true, false});
  set_power(p, PolPath::Probe, 1e-7);
  set_power(p, PolPath::Lo, 16e-3);
  PhaseLoop loop({200e3, -1, 0, 0, 250, -1, 5e-2, 1});
  RelockTracker tracker(0.1, 10);
  const auto ticks = run_lock(p, loop, false, 3);
  for (std::size_t i = 0; i < ticks.size(); ++i) {
    const double t = i * 1e-3;
    if (ticks[i].reset) tracker.on_reset(t, "hd");
    const double e = ticks[i].error;
    tracker.on_tick(t, std::span<const double>(&e, 1));
  }
  CHECK(10 * 3.0 > 6 * pi);
  CHECK(loop.resets() >= 1);
  REQUIRE_FALSE(tracker.intervals().empty());
  for (const auto& iv : tracker.intervals()) {
    REQUIRE_FALSE(iv.open());
    CHECK(iv.end_s - iv.start_s < 0.2);
  }
}

TEST_CASE("relock tracker") {
  RelockTracker tr(0.1, 3);
  const double good = 0.01, bad = 1.0;
  tr.on_reset(1.0, "opa");
  CHECK(tr.relocking());
  tr.on_tick(1.001, std::span<const double>(&bad, 1));
  tr.on_reset(1.002, "hd");
  for (int i = 0; i < 3; ++i) tr.on_tick(1.003 + i * 1e-3, std::span<const double>(&good, 1));
  CHECK_FALSE(tr.relocking());
  REQUIRE(tr.intervals().size() == 1);
  CHECK(tr.intervals()[0].loop == "opa+hd");
  CHECK(tr.overlaps(0.5, 1.0));
  CHECK_FALSE(tr.overlaps(2.0, 3.0));
}

TEST_CASE("pol optimize at the optimum") {
  auto [p, lc, cfg] = hd_setup(0.0);
  LockInChain chain(lc);
  const auto start = p.bank(PolPath::Lo).values;
  PolHooks hooks;
  hooks.trace_every = 1;
  const auto r = pol_optimize(cfg, chain, p, PolTarget::Homodyne, hooks);
  CHECK(r.converged);
  for (int k = 0; k < kPiezoCount; ++k) CHECK(std::abs(r.bank.values[k] - start[k]) < 2);
  // one piezo at a time, cycling 1 -> 2 -> 3
  for (std::size_t i = 0; i < r.subloops.size(); ++i) {
    CHECK(r.subloops[i].piezo == static_cast<int>(i % kPiezoCount));
    if (i > 0) CHECK(r.subloops[i].t_start >= r.subloops[i - 1].t_end);
  }
  for (const auto& tr : r.trace) {
    if (tr.modulated < 0) continue;
    for (const auto& sl : r.subloops)
      if (tr.t > sl.t_start + 1e-9 && tr.t < sl.t_end - 1e-9) CHECK(tr.modulated == sl.piezo);
  }
}

TEST_CASE("pol optimize removes an offset") {
  auto [p, lc, cfg] = hd_setup(0.15);
  const double before = hd_mismatch(p);
  REQUIRE(before > 1e-3);
  LockInChain chain(lc);
  const auto r = pol_optimize(cfg, chain, p, PolTarget::Homodyne);
  CHECK(r.converged);
  CHECK(hd_mismatch(p) < 1e-3);
  // every sub-loop that started well above threshold reduced its error
  for (const auto& sl : r.subloops)
    if (std::abs(sl.beta_start) > 3 * r.threshold) CHECK(std::abs(sl.beta_end) < std::abs(sl.beta_start));
}

TEST_CASE("pol optimize on the OPA target") {
  SUBCASE("normal polarity aligns to the crystal axis") {
    auto [p, lc, cfg] = opa_setup(0.3);
    LockInChain chain(lc);
    pol_optimize(cfg, chain, p, PolTarget::Opa);
    CHECK(mode_overlap(p.state().probe.pol, p.state().opa.crystal_axis) > 0.999);
  }
  SUBCASE("inverted polarity runs to the orthogonal branch") {
    auto [p, lc, cfg] = opa_setup(0.3);
    cfg.polarity = -1;
    cfg.cycles = 8;
    LockInChain chain(lc);
    pol_optimize(cfg, chain, p, PolTarget::Opa);
    CHECK(mode_overlap(p.state().probe.pol, p.state().opa.crystal_axis) < 0.5);
  }
}

TEST_CASE("random walk") {
  auto make = [] {
    PlantConfig pc = quiet_config();
    pc.power_noise_rms = 0;
    Plant p(pc, 8);
    p.set_shutters({true, true, false});
    set_power(p, PolPath::Probe, 1e-4);
    set_power(p, PolPath::Lo, 1e-4);
    return p;
  };
  Plant a = make();
  const auto start = a.bank(PolPath::Lo).values;
  std::mt19937_64 ra(5);
  const auto ta = random_walk_optimize({8, 300, 30}, a, PolTarget::Homodyne, ra);
  REQUIRE(ta.size() == 300);
  for (const auto& row : ta)
    for (int k = 0; k < kPiezoCount; ++k) CHECK(std::abs(row[k] - start[k]) <= 8);

  Plant b = make();
  std::mt19937_64 rb(5);
  CHECK(random_walk_optimize({8, 300, 30}, b, PolTarget::Homodyne, rb) == ta);
}

TEST_CASE("coupling loop") {
  CouplingLoopCfg cfg;
  CouplingLoop loop(cfg, 25);
  for (int k = 0; k < 5; ++k) {
    for (int i = 0; i < 10; ++i) loop.add_sample(DcReading{});
    CHECK(loop.step(1.0) == 25);
  }

  DcReading hi;
  hi.volts = 1.0;
  hi.saturated = true;
  DcReading lo = hi;
  lo.volts = -1.0;
  CouplingLoop a(cfg, 25), b(cfg, 25);
  a.add_sample(hi);
  b.add_sample(hi);
  b.add_sample(hi);
  CHECK(a.step(1.0) == b.step(1.0));  // sign only while clipped
  CHECK(a.last_saturated());
  CouplingLoop c(cfg, 25);
  c.add_sample(lo);
  CHECK(c.step(1.0) - 25 == doctest::Approx(25 - a.command()));

  CouplingLoopCfg slow = cfg;
  slow.loop_gain = 100;
  CouplingLoop s(slow, 25);
  DcReading big;
  big.volts = 0.5;
  s.add_sample(big);
  CHECK(std::abs(s.step(2.0) - 25) == doctest::Approx(slow.slew_c_per_s * 2.0));

  CouplingLoopCfg hold = cfg;
  hold.thermistor_hold = true;
  CouplingLoop h(hold, 25);
  h.add_sample(big);
  CHECK(h.step(1.0) == 25);
}
