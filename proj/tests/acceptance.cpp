// End-to-end acceptance run. Drives the command-line tool, then re-reads its
// CSV output with the test-side oracles. One PASS/FAIL line per criterion.
//
//   acceptance <path-to-sqzfiber> <scratch-dir>

#include "oracles.hpp"
#include "sqz/analysis.hpp"
#include "sqz/dsp.hpp"
#include "sqz/loops.hpp"
#include "sqz/sequencer.hpp"

#include <json.hpp>

#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <map>
#include <set>

#include <sys/wait.h>

namespace fs = std::filesystem;
using oracle::Table;

namespace {

std::string g_tool;
fs::path g_root;
int g_failures = 0;

struct Run {
  fs::path dir;
  int code = -1;
  double wall_s = 0;
};

std::string quote(const std::string& s) { return "'" + s + "'"; }

Run run(const std::string& scenario, std::uint64_t seed, const std::string& tag, const std::string& extra = "") {
  Run r;
  r.dir = g_root / tag;
  fs::remove_all(r.dir);
  const std::string cmd = quote(g_tool) + " run " + scenario + " --seed " + std::to_string(seed) +
                          " --compression 3600 --out " + quote(r.dir.string()) + " " + extra + " > " +
                          quote((g_root / (tag + ".log")).string()) + " 2>&1";
  const auto t0 = std::chrono::steady_clock::now();
  const int rc = std::system(cmd.c_str());
  r.wall_s = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  r.code = rc == -1 ? -1 : WEXITSTATUS(rc);
  return r;
}

Table table(const Run& r, const std::string& name) { return oracle::read_csv((r.dir / name).string()); }

std::string num(double x) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.6g", x);
  return buf;
}

void report(int id, bool pass, const std::string& detail) {
  std::cout << (pass ? "PASS " : "FAIL ") << id << "  " << detail << std::endl;
  if (!pass) ++g_failures;
}

/// Linear-interpolated x where y crosses zero, closest to `near`.
double crossing(const std::vector<double>& x, const std::vector<double>& y, double near) {
  double best = NAN;
  for (std::size_t i = 0; i + 1 < x.size(); ++i) {
    if ((y[i] <= 0 && y[i + 1] >= 0) || (y[i] >= 0 && y[i + 1] <= 0)) {
      const double z = y[i] == y[i + 1] ? x[i] : x[i] - y[i] * (x[i + 1] - x[i]) / (y[i + 1] - y[i]);
      if (std::isnan(best) || std::abs(z - near) < std::abs(best - near)) best = z;
    }
  }
  return best;
}

double col_std(const std::vector<double>& v) { return oracle::pstd(v); }

// ---------------------------------------------------------------------------

Run c1_run;

void criterion_1() {
  c1_run = run("error_sweep", 1, "c1");
  const auto t = table(c1_run, "error_sweep.csv");
  const auto x = t.num("delta_theta_rad"), y = t.num("beta");
  bool ok = c1_run.code == 0 && x.size() >= 3;
  double r2 = NAN, z = NAN;
  if (ok) {
    std::vector<double> s;
    for (double v : x) s.push_back(std::sin(v));
    r2 = oracle::fit_origin(s, y).second;
    z = crossing(x, y, 0);
  }
  ok = ok && r2 > 0.999 && std::abs(z) < 1e-3 && c1_run.wall_s < 60;
  report(1, ok, "error sweep: R2=" + num(r2) + " zero=" + num(z) + " rad runtime=" + num(c1_run.wall_s) + " s");
}

void criterion_2() {
  const auto t = table(c1_run, "phase_immunity.csv");
  const auto b = t.num("beta");
  bool ok = b.size() >= 2;
  double spread = NAN;
  if (ok) {
    const auto [lo, hi] = std::minmax_element(b.begin(), b.end());
    spread = (*hi - *lo) / std::abs(oracle::mean(b));
  }
  ok = ok && spread < 0.01;
  report(2, ok, "LO phase immunity: relative spread=" + num(spread) + " over " + std::to_string(b.size()) + " phases");
}

void criterion_3() {
  const auto r = run("opa_sweep", 3, "c3");
  const auto t = table(r, "opa_sweep.csv");
  const auto x = t.num("theta_rad"), y = t.num("beta");
  bool ok = r.code == 0 && x.size() >= 3;
  double r2 = NAN, z0 = NAN, z1 = NAN, step = NAN;
  if (ok) {
    std::vector<double> s;
    for (double v : x) s.push_back(std::sin(2 * v));
    r2 = oracle::fit_origin(s, y).second;
    step = x[1] - x[0];
    z0 = crossing(x, y, 0);
    z1 = crossing(x, y, oracle::pi / 2);
  }
  ok = ok && r2 > 0.999 && std::abs(z0) < 0.1 * step && std::abs(z1 - oracle::pi / 2) < 0.1 * step;
  report(3, ok, "OPA sweep: R2=" + num(r2) + " zeros at " + num(z0) + ", " + num(z1) + " (step " + num(step) + ")");
}

void criterion_4() {
  double worst = 0;
  for (int i = 0; i < 20; ++i)
    for (int j = 0; j < 20; ++j) {
      const double r = 0.05 + 1.95 * i / 19, L = 0.9 * j / 19;
      const auto [sq, asq] = oracle::levels(r, L);
      worst = std::max(worst, std::abs(sqz::loss_from_levels({sq, asq}) - L));
    }
  const double l = sqz::loss_from_levels({-4.42, 7.85});
  const double l_or = oracle::loss_by_search(-4.42, 7.85);
  const bool ok = worst < 1e-12 && std::abs(l - 0.270) <= 0.001 && std::abs(l - l_or) < 1e-9;
  report(4, ok, "loss algebra: grid worst=" + num(worst) + " L(-4.42,7.85)=" + num(l) + " search=" + num(l_or));
}

Run c5_run;

void criterion_5() {
  c5_run = run("coupling_lock", 5, "c5");
  const auto fb = table(c5_run, "coupling_feedback.csv").num("ratio");
  const auto hd = table(c5_run, "coupling_hold.csv").num("ratio");
  bool ok = c5_run.code == 0 && !fb.empty() && !hd.empty();
  double sd = NAN, exc = 0, pp = NAN;
  if (ok) {
    sd = col_std(fb);
    for (double r : fb) exc = std::max(exc, std::abs(r - 0.5));
    const auto [lo, hi] = std::minmax_element(hd.begin(), hd.end());
    pp = *hi - *lo;
  }
  ok = ok && sd <= 2e-4 && exc <= 1e-3 && pp >= 5e-3 && c5_run.wall_s < 120;
  report(5, ok, "coupling: feedback std=" + num(sd) + " max|r-0.5|=" + num(exc) + " hold p-p=" + num(pp) +
                    " runtime=" + num(c5_run.wall_s) + " s");
}

Run c6_run;

std::array<double, 3> piezo_std(const Table& t) {
  std::array<double, 3> out{};
  for (int k = 0; k < 3; ++k) out[k] = col_std(t.num("piezo" + std::to_string(k + 1)));
  return out;
}

void criterion_6() {
  c6_run = run("pol_compare", 6, "c6");
  const auto ms = piezo_std(table(c6_run, "pol_modulation.csv"));
  const auto rs = piezo_std(table(c6_run, "pol_random_walk.csv"));
  const double mod_max = *std::max_element(ms.begin(), ms.end());
  const double rw_min = *std::min_element(rs.begin(), rs.end());
  const bool ok = c6_run.code == 0 && mod_max < 2 && rw_min >= 10 * std::max(mod_max, 0.2) && c6_run.wall_s < 60;
  report(6, ok, "polarization stability: modulation max std=" + num(mod_max) + " counts, random walk min std=" +
                    num(rw_min) + " counts runtime=" + num(c6_run.wall_s) + " s");
}

Run c7_full, c7_off;

void criterion_7() {
  c7_full = run("longrun", 7, "c7_full");
  c7_off = run("longrun", 7, "c7_off", "--set seq.loops_off=1");
  const auto t = table(c7_full, "records.csv");
  const auto sq = t.num("sq_db"), asq = t.num("asq_db"), out = t.num("outlier");
  std::vector<double> keep_sq, keep_loss;
  int n_out = 0;
  for (std::size_t i = 0; i < sq.size(); ++i) {
    if (out[i] != 0) {
      ++n_out;
      continue;
    }
    keep_sq.push_back(sq[i]);
    keep_loss.push_back(oracle::loss_by_search(sq[i], asq[i]));
  }
  const double frac = sq.empty() ? 1 : static_cast<double>(n_out) / sq.size();
  const double sd = keep_sq.size() > 1 ? col_std(keep_sq) : NAN;
  const double lsd = keep_loss.size() > 1 ? col_std(keep_loss) : NAN;

  const auto off = table(c7_off, "records.csv").num("sq_db");
  double degr = NAN;
  if (off.size() >= 10) {
    const std::size_t m = off.size() / 10;
    const std::vector<double> first(off.begin(), off.begin() + m), last(off.end() - m, off.end());
    degr = oracle::mean(last) - oracle::mean(first);
  }
  const double wall = c7_full.wall_s + c7_off.wall_s;
  const bool ok = c7_full.code == 0 && c7_off.code == 0 && sq.size() == 720 && frac < 0.05 && sd <= 0.1 &&
                  lsd <= 0.01 && degr >= 0.5 && wall < 300;
  report(7, ok, "24 h campaign: records=" + std::to_string(sq.size()) + " outliers=" + num(frac) + " sq std=" +
                    num(sd) + " dB loss std=" + num(lsd) + " loops-off drift=" + num(degr) + " dB runtime=" +
                    num(wall) + " s");
}

void criterion_8() {
  const auto r = run("stretcher_reset", 8, "c8");
  bool ok = r.code == 0;
  double ramp = NAN;
  try {
    std::ifstream is(r.dir / "manifest.json");
    const auto j = nlohmann::json::parse(is);
    const auto& cfg = j.at("config");
    ramp = std::abs(std::stod(cfg.at("scenario.ramp_rad_per_s").get<std::string>())) *
           std::stod(cfg.at("scenario.ramp_horizon_s").get<std::string>());
  } catch (const std::exception&) {
    ok = false;
  }
  const auto rel = table(r, "relock.csv");
  const auto starts = rel.num("start_s"), ends = rel.num("end_s");
  const auto win = table(r, "windows.csv");
  const auto ws = win.num("sample_start_s"), we = win.num("sample_end_s");
  const auto rec = table(r, "records.csv");
  const auto out = rec.num("outlier"), sq = rec.num("sq_db");
  int overlapping = 0, unflagged = 0, n_out = 0;
  std::vector<double> keep;
  ok = ok && ws.size() == out.size();
  for (std::size_t k = 0; k < out.size() && k < ws.size(); ++k) {
    bool hit = false;
    for (std::size_t i = 0; i < starts.size(); ++i) {
      const double e = std::isnan(ends[i]) ? INFINITY : ends[i];
      hit = hit || (starts[i] <= we[k] && e >= ws[k]);
    }
    overlapping += hit;
    if (hit && out[k] == 0) ++unflagged;
    if (out[k] != 0)
      ++n_out;
    else
      keep.push_back(sq[k]);
  }
  const auto sum = table(r, "summary.csv");
  const auto s_out = sum.num("n_outliers"), s_mean = sum.num("mean_sq_db");
  const bool summary_ok = s_out.size() == 1 && s_out[0] == n_out && !keep.empty() &&
                          std::abs(s_mean[0] - oracle::mean(keep)) < 1e-6;
  ok = ok && ramp > 6 * oracle::pi && !starts.empty() && unflagged == 0 && summary_ok;
  report(8, ok, "stretcher reset: ramp=" + num(ramp) + " rad intervals=" + std::to_string(starts.size()) +
                    " overlapping records=" + std::to_string(overlapping) + " unflagged=" +
                    std::to_string(unflagged) + " summary " + (summary_ok ? "consistent" : "inconsistent"));
}

// ---------------------------------------------------------------------------

struct FilterCheck {
  bool ok = true;
  std::string worst;
  void fail(const std::string& what) {
    ok = false;
    if (worst.empty()) worst = what;
  }
};

double db(const sqz::BiquadCoefficients& c, double f, double fs) {
  return 20 * std::log10(oracle::biquad_mag(c.b0, c.b1, c.b2, c.a1, c.a2, f, fs));
}

void check_corner(FilterCheck& fc, const sqz::FilterSpec& s, const std::string& name) {
  const auto c = sqz::design_biquad(s);
  const double g = db(c, s.frequency_hz, s.sample_rate_hz);
  if (std::abs(g + 3) > 0.5) fc.fail(name + " corner " + num(g) + " dB");
}

void check_impulse(FilterCheck& fc, const sqz::FilterSpec& s, const std::string& name, oracle::Gen& gen) {
  const auto c = sqz::design_biquad(s);
  const int n = 400;
  const auto ref = oracle::biquad_impulse(c.b0, c.b1, c.b2, c.a1, c.a2, n);
  sqz::Biquad b(c);
  double err = 0, scale = 0;
  for (int k = 0; k < n; ++k) {
    const double y = b.step(k == 0 ? 1 : 0);
    err = std::max(err, std::abs(y - ref[k]));
    scale = std::max(scale, std::abs(ref[k]));
  }
  if (err > 1e-9 * std::max(1.0, scale)) fc.fail(name + " impulse error " + num(err));

  std::vector<double> x(n), y(n);
  for (int k = 0; k < n; ++k) {
    x[k] = gen.normal();
    y[k] = gen.normal();
  }
  const double a = gen.uniform(-2, 2), bb = gen.uniform(-2, 2);
  sqz::Biquad fx(c), fy(c), fz(c);
  double lin = 0, mag = 0;
  for (int k = 0; k < n; ++k) {
    const double ox = fx.step(x[k]), oy = fy.step(y[k]), oz = fz.step(a * x[k] + bb * y[k]);
    lin = std::max(lin, std::abs(oz - (a * ox + bb * oy)));
    mag = std::max(mag, std::abs(oz));
  }
  if (lin > 1e-9 * std::max(1.0, mag)) fc.fail(name + " linearity error " + num(lin));
}

void criterion_9() {
  using sqz::FilterKind;
  using sqz::FilterSpec;
  const sqz::SimConfig sim;
  FilterCheck fc;
  oracle::Gen gen(9);
  int sections = 0;
  for (auto target : {sqz::PolTarget::Homodyne, sqz::PolTarget::Opa}) {
    const auto lc = sqz::lockin_for(target, sim.lockin, sim.plant);
    const std::string tn = target == sqz::PolTarget::Opa ? "opa" : "hd";
    const double fs = lc.sample_rate_hz, fd = lc.decimated_rate();
    const std::vector<std::pair<std::string, FilterSpec>> specs{
        {tn + " carrier", {FilterKind::BandPass, lc.carrier_hz, fs, lc.carrier_q}},
        {tn + " post-square lpf", {FilterKind::LowPass, lc.post_square_lpf_hz, fs, 0}},
        {tn + " dc block", {FilterKind::HighPass, lc.dc_block_hz, fd, 0}},
        {tn + " reference hpf", {FilterKind::HighPass, lc.demod_hpf_hz, fd, 0}},
        {tn + " notch", {FilterKind::BandReject, lc.second_harmonic_br_hz, fd, lc.second_harmonic_q}},
        {tn + " output lpf", {FilterKind::LowPass, lc.output_lpf_hz, fd, 0}},
        {tn + " all-pass", sqz::allpass_for_phase(lc.demod_allpass_phase, lc.demod_hz, fd)},
    };
    for (const auto& [name, s] : specs) {
      ++sections;
      const auto c = sqz::design_biquad(s);
      switch (s.kind) {
        case FilterKind::LowPass:
        case FilterKind::HighPass:
          check_corner(fc, s, name);
          break;
        case FilterKind::BandPass: {
          // analog half-power edges around the center
          const double q = s.effective_q(), f0 = s.frequency_hz;
          const double w = std::sqrt(1 + 1 / (4 * q * q));
          if (std::abs(db(c, f0, s.sample_rate_hz)) > 0.1) fc.fail(name + " center gain");
          for (double fe : {f0 * (w - 1 / (2 * q)), f0 * (w + 1 / (2 * q))})
            if (std::abs(db(c, fe, s.sample_rate_hz) + 3) > 0.5) fc.fail(name + " edge " + num(fe));
          break;
        }
        case FilterKind::BandReject: {
          const double depth = -db(c, s.frequency_hz, s.sample_rate_hz);
          if (depth < 20) fc.fail(name + " depth " + num(depth) + " dB");
          break;
        }
        case FilterKind::AllPass:
          for (int k = 1; k <= 200; ++k) {
            const double f = s.sample_rate_hz / 2 * k / 201.0;
            if (std::abs(db(c, f, s.sample_rate_hz)) > 0.1) {
              fc.fail(name + " ripple at " + num(f) + " Hz");
              break;
            }
          }
          break;
      }
      check_impulse(fc, s, name, gen);
    }
  }
  report(9, fc.ok, "DSP sections: " + std::to_string(sections) + " designs checked" +
                       (fc.ok ? std::string() : " first failure: " + fc.worst));
}

void criterion_10() {
  const auto r = run("power", 10, "c10");
  const auto t = table(r, "power.csv");
  const auto path = t.str("path"), loop = t.str("loop");
  const auto target = t.num("target_w"), power = t.num("power_w");
  std::map<std::pair<std::string, double>, std::vector<double>> on, off;
  std::map<std::pair<std::string, double>, int> seen_on, seen_off;
  for (std::size_t i = 0; i < power.size(); ++i) {
    const auto key = std::make_pair(path[i], target[i]);
    auto& seen = loop[i] == "on" ? seen_on : seen_off;
    if (seen[key]++ < 10) continue;
    (loop[i] == "on" ? on : off)[key].push_back(power[i] / target[i] - 1);
  }
  double worst_on = 0, best_off = INFINITY;
  for (const auto& [k, v] : on) worst_on = std::max(worst_on, col_std(v));
  for (const auto& [k, v] : off) best_off = std::min(best_off, col_std(v));
  const bool ok = r.code == 0 && on.size() == 5 && worst_on <= 1e-3;
  report(10, ok, "power: " + std::to_string(on.size()) + " targets, worst closed-loop std=" + num(worst_on) +
                     " smallest open-loop std=" + num(best_off));
}

// ---------------------------------------------------------------------------

std::string slurp(const fs::path& p) {
  std::ifstream is(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(is), std::istreambuf_iterator<char>()};
}

/// Names of differing or missing CSVs between two output directories.
std::vector<std::string> diff_csvs(const fs::path& a, const fs::path& b) {
  std::set<std::string> names;
  for (const auto* d : {&a, &b})
    if (fs::exists(*d))
      for (const auto& e : fs::directory_iterator(*d))
        if (e.path().extension() == ".csv") names.insert(e.path().filename().string());
  std::vector<std::string> bad;
  for (const auto& n : names)
    if (!fs::exists(a / n) || !fs::exists(b / n) || slurp(a / n) != slurp(b / n)) bad.push_back(n);
  if (names.empty()) bad.emplace_back("<no csv files>");
  return bad;
}

void criterion_11() {
  struct Again {
    const Run* first;
    std::string scenario;
    std::uint64_t seed;
    std::string extra;
  };
  const std::vector<Again> again{{&c1_run, "error_sweep", 1, ""},
                                 {&c5_run, "coupling_lock", 5, ""},
                                 {&c6_run, "pol_compare", 6, ""},
                                 {&c7_full, "longrun", 7, ""},
                                 {&c7_off, "longrun", 7, "--set seq.loops_off=1"}};
  bool ok = true;
  int files = 0;
  std::string detail;
  for (const auto& a : again) {
    const auto r = run(a.scenario, a.seed, a.first->dir.filename().string() + "_again", a.extra);
    const auto bad = diff_csvs(a.first->dir, r.dir);
    for (const auto& e : fs::directory_iterator(r.dir)) files += e.path().extension() == ".csv";
    if (!bad.empty() || r.code != a.first->code) {
      ok = false;
      detail += " " + a.first->dir.filename().string() + ":" + (bad.empty() ? "exit code" : bad.front());
    }
  }
  report(11, ok, "determinism: " + std::to_string(files) + " CSV files byte-identical across reruns" + detail);
}

}  // namespace

int main(int argc, char** argv) {
  if (argc != 3) {
    std::cerr << "usage: acceptance <sqzfiber> <scratch-dir>\n";
    return 2;
  }
  g_tool = fs::absolute(argv[1]).string();
  g_root = fs::absolute(argv[2]);
  fs::create_directories(g_root);

  criterion_1();
  criterion_2();
  criterion_3();
  criterion_4();
  criterion_5();
  criterion_6();
  criterion_7();
  criterion_8();
  criterion_9();
  criterion_10();
  criterion_11();

  std::cout << (g_failures == 0 ? "all criteria passed" : std::to_string(g_failures) + " criteria failed") << std::endl;
  return g_failures == 0 ? 0 : 1;
}
