#pragma once

// Automation: shutter choreography, the periodic alignment sequence, the
// measurement sequence and the campaign schedule, plus the run store.
//
// Internally everything runs on the campaign clock (seconds of the modelled
// experiment). Output timestamps are divided by the compression factor.

#include "sqz/analysis.hpp"
#include "sqz/dsp.hpp"
#include "sqz/loops.hpp"
#include "sqz/plant.hpp"

#include <array>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

namespace sqz {

struct PowerTargets {
  double probe_opa_align_w = 1e-6;
  double probe_hd_align_w = 1e-4;
  double probe_measure_w = 1e-7;
  double lo_align_w = 1e-4;
  double lo_measure_w = 16e-3;
};

struct SequencerConfig {
  double horizon_s = 86400;
  double measurement_period_s = 120;
  double alignment_period_s = 1800;
  double compression = 3600;

  double tick_s = 1e-3;
  double background_tick_s = 1.0;
  double dc_read_interval_s = 0.1;  // homodyne DC cadence outside fast ticks
  double power_settle_s = 0.2;
  double thermal_wait_s = 10;       // at compression 1; floored at 5 OPA time constants
  double lock_timeout_s = 0.5;
  int samples_per_level = 64;
  double sample_spacing_s = 5e-3;
  double phase_jitter_rms = 0.01;   // fast phase noise inside one evaluation
  double level_noise = 0.08;        // fractional scatter of one evaluation
  double coupling_stage_s = 30;
  double log_interval_s = 0.5;
  double coupling_log_interval_s = 10;

  bool loops_off = false;           // reference run: no pol / coupling control after t = 0
  bool pump_disabled = false;       // keep the pump shutter closed

  PowerTargets targets{};
  PowerLoopCfg power{};
  PhaseLoopCfg opa_lock{400e3, +1, 0, 0, 100, -2, 5e-3, 2};
  PhaseLoopCfg hd_lock{200e3, -1, 0, 0, 250, -1, 5e-2, 1};
  PolLoopCfg pol{};
  CouplingLoopCfg coupling{};
  double relock_tolerance_rad = 0.1;
  int relock_ticks = 10;

  void validate() const;
  /// Waiting time after opening the pump.
  double thermal_wait(double opa_tau_s) const;
  int measurement_count() const;
  int alignment_count() const;
};

struct SimConfig {
  PlantConfig plant{};
  LockInConfig lockin{};
  SequencerConfig seq{};

  void validate() const;
};

struct AlignmentStage {
  int id = 0;  // 1 OPA polarization, 2 HD polarization, 3 coupling ratio
  std::string name;
  double t_start = 0, t_end = 0;
  bool converged = false;
  bool skipped = false;
  std::array<double, kPiezoCount> final_beta{};
  std::array<int, kPiezoCount> bank{};
  double mismatch_loss = 0;
  double coupling_ratio = 0;
  std::string diagnostic;
};

struct AlignmentReport {
  int index = 0;
  double t_start = 0;
  std::vector<AlignmentStage> stages;

  bool converged() const;
  /// First non-convergent stage id, 0 if none.
  int failed_stage() const;
};

struct MeasurementWindow {
  double t_start = 0;
  double sample_start = 0, sample_end = 0;
  double shot_start = 0, shot_end = 0;
  double t_end = 0;
};

struct ShutterEvent {
  double t = 0;
  ShutterState state;
};

struct PhaseLogRow {
  double t;
  const char* loop;
  PhaseTick tick;
};

struct PowerLogRow {
  double t;
  const char* path;
  double target, measured, transmission;
  bool saturated;
};

struct CouplingLogRow {
  double t, dc_mean, ratio, command, coupler_c;
  bool saturated;
};

class Sequencer {
 public:
  Sequencer(const SimConfig& cfg, std::uint64_t seed);

  AlignmentReport run_alignment(bool full = true);
  MeasurementRecord run_measurement();
  /// Full campaign: background ticks, alignments and one measurement per slot.
  void run_schedule();

  /// Write every log under `dir` (created if missing). Returns the file names.
  std::vector<std::string> write(const std::filesystem::path& dir) const;

  Plant& plant() { return plant_; }
  const SimConfig& config() const { return cfg_; }
  const std::vector<MeasurementRecord>& records() const { return records_; }
  const std::vector<MeasurementWindow>& windows() const { return windows_; }
  const std::vector<AlignmentReport>& alignments() const { return alignments_; }
  const std::vector<ShutterEvent>& shutter_log() const { return shutters_; }
  const RelockTracker& relock() const { return relock_; }
  const std::vector<PhaseLogRow>& phase_log() const { return phase_log_; }
  CouplingLoop& coupling() { return coupling_; }
  PhaseLoop& opa_lock() { return opa_lock_; }
  PhaseLoop& hd_lock() { return hd_lock_; }
  double campaign_time() const { return plant_.time(); }
  /// Output timestamp for a campaign time.
  double out_time(double t) const { return t / cfg_.seq.compression; }
  /// Number of stretcher resets during alignment stages (must stay 0).
  int alignment_stretcher_moves() const { return alignment_stretcher_moves_; }

  /// Background time: LO open, coupling loop on, coarse ticks until campaign time `t`.
  void idle_until(double t);

 private:
  struct FastMode {
    bool power = true;
    bool opa_lock = false;
    bool hd_lock = false;
    bool coupling = false;
  };

  void set_shutters(const ShutterState& s);
  void set_power_targets(double probe_w, double lo_w);
  void fast_ticks(int n, const FastMode& m);
  void fast_tick(const FastMode& m);
  void power_step(double dt);
  void coupling_sample();
  void coupling_step(double dt);
  bool wait_locked(const FastMode& m, bool need_opa, bool need_hd);
  double measured_level(double quadrature, double r, double loss, bool squeezed);
  AlignmentStage pol_stage(PolTarget target, bool run);
  AlignmentStage coupling_stage(bool run);
  double allpass_for(PolTarget t, double level);
  double threshold_for(PolTarget t, double level);

  SimConfig cfg_;
  std::uint64_t seed_;
  Plant plant_;
  PowerLoop power_probe_, power_lo_;
  PhaseLoop opa_lock_, hd_lock_;
  CouplingLoop coupling_;
  RelockTracker relock_;
  std::mt19937_64 meas_rng_;
  std::normal_distribution<double> gauss_{0.0, 1.0};

  std::map<int, double> allpass_cache_, threshold_cache_;
  std::vector<double> tick_buf_;
  double next_coupling_step_ = 0;
  double next_log_ = 0;
  double next_coupling_log_ = 0;
  bool dc_saturated_ = false;
  int alignment_stretcher_moves_ = 0;

  std::vector<MeasurementRecord> records_;
  std::vector<MeasurementWindow> windows_;
  std::vector<AlignmentReport> alignments_;
  std::vector<ShutterEvent> shutters_;
  std::vector<PhaseLogRow> phase_log_;
  std::vector<PowerLogRow> power_log_;
  std::vector<CouplingLogRow> coupling_log_;
};

}  // namespace sqz
