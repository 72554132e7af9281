#pragma once

// Feedback controllers: power stabilization, beat-note phase locks driving
// the fiber stretchers, polarization optimization (dither/lock-in and the
// random-walk baseline) and the splitter temperature lock.

#include "sqz/dsp.hpp"
#include "sqz/plant.hpp"

#include <array>
#include <cstdint>
#include <functional>
#include <random>
#include <span>
#include <string>
#include <vector>

namespace sqz {

// ---------------------------------------------------------------------------
// Power

struct PowerLoopCfg {
  double target_w = 1e-6;
  double loop_gain = 50;  // 1/s, on the log of the transmission
  double min_transmission = 1e-9;
};

/// Integral control of an attenuator in the log domain.
class PowerLoop {
 public:
  PowerLoop() = default;
  PowerLoop(const PowerLoopCfg& cfg, double transmission);

  /// Returns the new attenuator transmission.
  double step(double measured_w, double dt);

  double transmission() const { return transmission_; }
  bool saturated() const { return saturated_; }
  const PowerLoopCfg& config() const { return cfg_; }
  void set_target(double w);

 private:
  PowerLoopCfg cfg_{};
  double transmission_ = 1;
  bool saturated_ = false;
};

// ---------------------------------------------------------------------------
// Phase

struct PhaseLoopCfg {
  double carrier_hz = 200e3;
  /// +1 when the beat reads sin/cos(+wt + phase), -1 for cos(-wt + phase).
  int carrier_sign = -1;
  double lock_point = 0;
  double lock_quadrature = 0;
  double loop_gain = 250;  // 1/s
  /// Beat-phase change per radian of stretcher phase (HD: -1, OPA: -2).
  double phase_per_stretcher_rad = -1;
  double min_amplitude = 5e-2;  // V
  int block_cycles = 1;         // carrier periods per demodulation block
};

struct PhaseTick {
  double error = 0;      // rad, wrapped
  double amplitude = 0;  // V
  double voltage = 0;    // stretcher voltage after the step
  bool idle = false;
  bool reset = false;
};

class PhaseLoop {
 public:
  PhaseLoop() = default;
  explicit PhaseLoop(const PhaseLoopCfg& cfg) : cfg_(cfg) {}

  /// Samples per demodulation block at a plant rate.
  std::int64_t block_length(double sample_rate_hz) const;
  /// Demodulate one block (starting at plant clock `first_sample`) and drive the stretcher.
  PhaseTick step(std::span<const double> block, std::int64_t first_sample, double sample_rate_hz, double dt,
                 StretcherModel& stretcher);
  /// I/Q phase of a block, in (-pi, pi], and its amplitude.
  std::pair<double, double> demodulate(std::span<const double> block, std::int64_t first_sample, double sample_rate_hz) const;

  PhaseLoopCfg& config() { return cfg_; }
  const PhaseLoopCfg& config() const { return cfg_; }
  const PhaseTick& last() const { return last_; }
  int resets() const { return resets_; }

 private:
  PhaseLoopCfg cfg_{};
  PhaseTick last_{};
  int resets_ = 0;
};

struct RelockInterval {
  double start_s = 0;
  double end_s = -1;  // < start while open
  std::string loop;
  bool open() const { return end_s < start_s; }
};

/// Opens an interval on every stretcher reset and closes it once all active
/// locks have stayed within tolerance for `settle_ticks` consecutive ticks.
class RelockTracker {
 public:
  explicit RelockTracker(double tolerance_rad = 0.1, int settle_ticks = 10) : tol_(tolerance_rad), need_(settle_ticks) {}

  void on_reset(double t, const std::string& loop);
  /// `errors` holds the current error of every active lock.
  void on_tick(double t, std::span<const double> errors);
  /// Close any open interval (locks released).
  void release(double t);

  bool relocking() const { return !intervals_.empty() && intervals_.back().open(); }
  const std::vector<RelockInterval>& intervals() const { return intervals_; }
  bool overlaps(double t0, double t1) const;

 private:
  double tol_;
  int need_;
  int good_ = 0;
  std::vector<RelockInterval> intervals_;
};

// ---------------------------------------------------------------------------
// Polarization

enum class PolTarget { Opa, Homodyne };

struct PolLoopCfg {
  double modulation_counts = 32;
  int cycles = 3;
  double threshold = 0;        // |beta| below which a piezo is done; 0 -> calibrate
  double threshold_factor = 3;
  double settle_s = 0.5;
  double max_integrate_s = 5;
  double tick_s = 1e-3;
  double bandwidth_hz = 0.5;
  int polarity = +1;           // +1 maximizes the beat envelope
  double expected_level = 0;   // full-contrast envelope (V); 0 -> read from the chain
  double max_total_s = 0;      // stop after this long regardless of cycles; 0 = no limit
};

struct PolSubLoop {
  int cycle = 0;
  int piezo = 0;
  double t_start = 0, t_end = 0;
  double beta_start = 0, beta_end = 0;
  int code_start = 0, code_end = 0;
  bool converged = false;
};

struct PolTraceSample {
  double t = 0;
  int modulated = -1;  // piezo being modulated, -1 none
  double beta = 0;
  std::array<int, kPiezoCount> codes{};
};

struct PolResult {
  PiezoBank bank;
  std::vector<PolSubLoop> subloops;
  std::vector<PolTraceSample> trace;
  std::array<double, kPiezoCount> final_beta{};
  double threshold = 0;
  bool converged = false;
  std::string diagnostic;
};

struct PolHooks {
  /// Called after every control tick (plant already advanced).
  std::function<void(double dt)> on_tick;
  /// Trace decimation (every n ticks); 0 disables the trace.
  int trace_every = 0;
};

PolPath pol_path(PolTarget t);
LockInConfig lockin_for(PolTarget t, const LockInConfig& base, const PlantConfig& plant);
/// Envelope slope per sphere radian of mismatch along the modulation axis.
double pol_sensitivity(PolTarget t, double level, double modulation_rad);

/// Dither / lock-in optimization cycling piezo 1 -> 2 -> 3.
PolResult pol_optimize(const PolLoopCfg& cfg, LockInChain& chain, Plant& plant, PolTarget target,
                       const PolHooks& hooks = {});

struct RandomWalkCfg {
  int step_counts = 8;
  int steps = 1000;
  double rate_hz = 30;
};

/// Hill-climb baseline: move one random piezo, keep the move only if the measured
/// beat amplitude rose. Returns the bank after every step.
std::vector<std::array<int, kPiezoCount>> random_walk_optimize(const RandomWalkCfg& cfg, Plant& plant, PolTarget target,
                                                               std::mt19937_64& rng);

/// RMS of the settled output for a noisy, unmodulated carrier.
double calibrate_noise_floor(const LockInConfig& cfg, double level, double amplitude_noise_rms, double noise_tau_s,
                             double white_noise_v, std::uint64_t seed, double duration_s = 1.2);

// ---------------------------------------------------------------------------
// Coupling ratio

struct CouplingLoopCfg {
  double setpoint_v = 0;
  double loop_gain = 0.0072;  // degC / (V s)
  double window_s = 1.0;
  double slew_c_per_s = 0.1;
  bool thermistor_hold = false;
  double saturation_v = 1.0;  // error magnitude used when the DC reading clips
};

class CouplingLoop {
 public:
  CouplingLoop() = default;
  CouplingLoop(const CouplingLoopCfg& cfg, double command_c) : cfg_(cfg), command_(command_c) {}

  void add_sample(const DcReading& r);
  /// Integrate the windowed mean and return the Peltier command.
  double step(double dt);
  double command() const { return command_; }
  double last_mean() const { return last_mean_; }
  bool last_saturated() const { return last_saturated_; }
  CouplingLoopCfg& config() { return cfg_; }

 private:
  CouplingLoopCfg cfg_{};
  double command_ = 25;
  double sum_ = 0;
  int count_ = 0;
  bool any_saturated_ = false;
  double last_mean_ = 0;
  bool last_saturated_ = false;
};

}  // namespace sqz
