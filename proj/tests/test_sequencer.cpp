#include "oracles.hpp"
#include "sqz/sequencer.hpp"

#include <doctest.h>

using namespace sqz;

namespace {

SimConfig short_run(double horizon_s = 360, double compression = 1) {
  SimConfig c;
  c.seq.horizon_s = horizon_s;
  c.seq.compression = compression;
  return c;
}

bool inside(double t, double a, double b) { return t > a + 1e-12 && t < b - 1e-12; }

}  // namespace

TEST_CASE("schedule arithmetic") {
  SequencerConfig q;
  q.compression = 3600;
  CHECK(q.measurement_count() == 24 * 60 / 2);
  CHECK(q.alignment_count() == 24 * 60 / 30);
  q.horizon_s = 360;
  q.compression = 1;
  CHECK(q.measurement_count() == 3);
  CHECK(q.alignment_count() == 1);  // the start-up alignment only
}

TEST_CASE("six minutes at compression 1") {
  Sequencer seq(short_run(), 11);
  seq.run_schedule();
  REQUIRE(seq.records().size() == 3);
  CHECK(seq.alignments().size() == 1);
  // the start-up alignment runs first in slot 0
  CHECK(seq.records()[0].t_s > 0);
  CHECK(seq.records()[0].t_s < 120);
  CHECK(seq.records()[1].t_s >= 120);
  CHECK(seq.records()[2].t_s >= 240);
  CHECK(seq.records()[2].t_s < 360);
}

TEST_CASE("alignment of an aligned system") {
  Sequencer seq(short_run(), 3);
  const auto lo0 = seq.plant().bank(PolPath::Lo).values;
  const auto pr0 = seq.plant().bank(PolPath::Probe).values;
  const auto rep = seq.run_alignment();
  CHECK(rep.converged());
  REQUIRE(rep.stages.size() == 3);
  for (int k = 0; k < kPiezoCount; ++k) {
    CHECK(std::abs(rep.stages[0].bank[k] - pr0[k]) < 2);
    CHECK(std::abs(rep.stages[1].bank[k] - lo0[k]) < 2);
  }
  // stage order: coupling after both polarization stages
  CHECK(rep.stages[0].id == 1);
  CHECK(rep.stages[1].id == 2);
  CHECK(rep.stages[2].id == 3);
  CHECK(rep.stages[2].t_start >= rep.stages[0].t_end);
  CHECK(rep.stages[2].t_start >= rep.stages[1].t_end);
  CHECK(rep.stages[1].t_start >= rep.stages[0].t_end);
  CHECK(seq.alignment_stretcher_moves() == 0);
}

TEST_CASE("alignment removes an LO polarization error") {
  SimConfig c = short_run();
  c.plant.lo_pol_offset_rad = 0.1;
  Sequencer seq(c, 4);
  const auto& s = seq.plant().state();
  REQUIRE(1 - mode_overlap(s.lo.pol, s.probe.pol) > 1e-3);
  const auto rep = seq.run_alignment();
  CHECK(rep.stages[1].converged);
  CHECK(rep.stages[1].mismatch_loss < 1e-3);
}

TEST_CASE("default measurement levels") {
  Sequencer seq(short_run(3600, 3600), 5);
  seq.run_alignment();
  std::vector<double> sq, asq;
  for (int i = 0; i < 6; ++i) {
    const auto r = seq.run_measurement();
    CHECK_FALSE(r.outlier);
    sq.push_back(r.sq_db);
    asq.push_back(r.asq_db);
  }
  CHECK(oracle::mean(sq) == doctest::Approx(-4.42).epsilon(0.15 / 4.42));
  CHECK(oracle::mean(asq) == doctest::Approx(7.85).epsilon(0.15 / 7.85));
}

TEST_CASE("pump held closed gives vacuum") {
  SimConfig c = short_run(3600, 3600);
  c.seq.pump_disabled = true;
  Sequencer seq(c, 6);
  const auto r = seq.run_measurement();
  CHECK(std::abs(r.sq_db) < 0.2);
  CHECK(std::abs(r.asq_db) < 0.2);
}

TEST_CASE("relock during sampling marks the record") {
  SimConfig c = short_run(3600, 3600);
  c.plant.drifts[static_cast<int>(DriftChannel::PhaseProbe)].ramp = 10;
  c.seq.opa_lock.loop_gain = 500;
  Sequencer seq(c, 7);
  bool flagged = false;
  for (int i = 0; i < 4 && !flagged; ++i) {
    const auto r = seq.run_measurement();
    CHECK(r.reason != OutlierReason::LockFailure);
    CHECK(r.outlier == (r.reason != OutlierReason::None));
    if (r.reason == OutlierReason::RelockOverlap) {
      flagged = true;
      const auto& w = seq.windows().back();
      CHECK(seq.relock().overlaps(w.sample_start, w.sample_end));
    }
  }
  CHECK(flagged);
}

TEST_CASE("shutter discipline") {
  Sequencer seq(short_run(), 8);
  seq.run_alignment();
  seq.run_measurement();
  const auto& w = seq.windows().back();
  for (const auto& e : seq.shutter_log()) {
    CHECK_FALSE(inside(e.t, w.sample_start, w.sample_end));
    CHECK_FALSE(inside(e.t, w.shot_start, w.shot_end));
  }
  // state in force at the start of each window
  auto at = [&](double t) {
    ShutterState s;
    for (const auto& e : seq.shutter_log())
      if (e.t <= t + 1e-12) s = e.state;
    return s;
  };
  CHECK(at(w.sample_start) == ShutterState{true, true, true});
  CHECK(at(w.shot_start) == ShutterState{false, true, false});
}

TEST_CASE("identical seeds give identical records") {
  auto run = [](std::uint64_t seed) {
    Sequencer seq(short_run(), seed);
    seq.run_schedule();
    return seq.records();
  };
  const auto a = run(21), b = run(21);
  REQUIRE(a.size() == b.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    CHECK(a[i].sq_db == b[i].sq_db);
    CHECK(a[i].asq_db == b[i].asq_db);
    CHECK(a[i].t_s == b[i].t_s);
  }
}
