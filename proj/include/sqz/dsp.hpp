#pragma once

// Digital controller signal chain: second-order IIR sections, the three-process
// lock-in cascade that turns an amplitude-modulated beat note into a
// polarization error, and the track-and-hold integrator.

#include <cmath>
#include <complex>
#include <cstdint>
#include <functional>
#include <iosfwd>
#include <numbers>
#include <span>
#include <stdexcept>
#include <string>

namespace sqz {

class DspError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Phase in [0, 2pi) of a tone at `freq_hz` on the shared plant sample clock.
inline double clock_phase(std::int64_t n, double freq_hz, double sample_rate_hz) {
  const double cycles = static_cast<double>(n) * (freq_hz / sample_rate_hz);
  return 2 * std::numbers::pi * (cycles - std::floor(cycles));
}

enum class FilterKind { LowPass, HighPass, BandPass, BandReject, AllPass };

std::string to_string(FilterKind k);

/// Second-order section request. `q` defaults per kind (Butterworth 1/sqrt2
/// for LP/HP/AP, 10 for the carrier band-pass, 2 for the notch).
struct FilterSpec {
  FilterKind kind = FilterKind::LowPass;
  double frequency_hz = 0;
  double sample_rate_hz = 0;
  double q = 0;  // 0 -> kind default

  static double default_q(FilterKind k);
  double effective_q() const { return q > 0 ? q : default_q(kind); }
};

/// Normalized biquad coefficients (a0 == 1).
struct BiquadCoefficients {
  double b0 = 1, b1 = 0, b2 = 0;
  double a1 = 0, a2 = 0;

  std::complex<double> response(double freq_hz, double sample_rate_hz) const;
  double magnitude_db(double freq_hz, double sample_rate_hz) const;
  /// Largest pole modulus.
  double pole_radius() const;
};

/// Bilinear-transform design with frequency prewarping at the corner/center.
BiquadCoefficients design_biquad(const FilterSpec& spec);

/// Transposed direct-form II section.
class Biquad {
 public:
  Biquad() = default;
  explicit Biquad(const BiquadCoefficients& c) : c_(c) {}
  explicit Biquad(const FilterSpec& spec) : c_(design_biquad(spec)) {}

  double step(double x) {
    const double y = c_.b0 * x + z1_;
    z1_ = c_.b1 * x - c_.a1 * y + z2_;
    z2_ = c_.b2 * x - c_.a2 * y;
    return y;
  }
  void reset() { z1_ = z2_ = 0; }
  const BiquadCoefficients& coefficients() const { return c_; }

 private:
  BiquadCoefficients c_{};
  double z1_ = 0, z2_ = 0;
};

/// All-pass center frequency whose phase at `at_hz` equals `phase_rad`
/// (a second-order all-pass spans (-2pi, 0)).
FilterSpec allpass_for_phase(double phase_rad, double at_hz, double sample_rate_hz, double q = 0);
/// Unwrapped phase of a second-order all-pass, in (-2pi, 0].
double allpass_phase(const BiquadCoefficients& c, double freq_hz, double sample_rate_hz);

enum class EnvelopeDetector {
  /// Square, low-pass, then root: tracks the carrier amplitude linearly.
  Magnitude,
  /// Square and low-pass only: tracks carrier power.
  SquareLaw,
};

struct LockInConfig {
  double sample_rate_hz = 5e6;
  double carrier_hz = 200e3;
  double carrier_q = 10;
  double post_square_lpf_hz = 30e3;
  double dc_block_hz = 10;
  double demod_hz = 300;
  double demod_hpf_hz = 10;
  double demod_allpass_phase = -std::numbers::pi / 2;
  double second_harmonic_br_hz = 600;
  double second_harmonic_q = 2;
  double output_lpf_hz = 10;
  int downsample = 16;
  EnvelopeDetector detector = EnvelopeDetector::Magnitude;

  double decimated_rate() const { return sample_rate_hz / downsample; }
  void validate() const;
};

enum class ChainStage { CarrierBpf, Envelope, DcBlock, Reference, Mixed, Output };

/// Streaming lock-in cascade.
///  1. carrier band-pass at the plant rate
///  2. square, 30 kHz low-pass, downsample, 10 Hz DC block
///  3. mix with the (high-passed, all-passed) modulation reference,
///     notch the second harmonic, 10 Hz low-pass
/// The output `error()` is the modulation amplitude of the carrier envelope
/// projected on the reference, in the units of the envelope.
class LockInChain {
 public:
  using Tap = std::function<void(ChainStage, std::int64_t, double)>;

  explicit LockInChain(const LockInConfig& cfg);

  /// `first_sample` is the plant clock index of samples[0]; the reference is
  /// generated from the same clock so the chain stays synchronous.
  void process(std::span<const double> samples, std::int64_t first_sample);

  double error() const { return output_; }
  double carrier_level() const { return level_; }
  std::int64_t outputs() const { return outputs_; }

  void set_allpass_phase(double phase_rad);
  double allpass_phase() const { return cfg_.demod_allpass_phase; }
  const LockInConfig& config() const { return cfg_; }

  void reset();
  void set_tap(Tap tap) { tap_ = std::move(tap); }

 private:
  LockInConfig cfg_;
  Biquad carrier_bpf_, post_square_lpf_, dc_block_, ref_hpf_, ref_allpass_, notch_, output_lpf_, level_lpf_;
  double output_ = 0;
  double level_ = 0;
  std::int64_t outputs_ = 0;
  Tap tap_;
};

/// Demodulation all-pass phase that maximizes the output for an injected
/// carrier `level * (1 + depth sin(wm t)) cos(wc t)`: two runs in quadrature.
double calibrate_allpass_phase(const LockInConfig& cfg, double level, double depth = 0.02, double settle_s = 0.6);

/// Settled output for a synthetic AM carrier; mean over the last `average_s`.
double synthetic_am_response(const LockInConfig& cfg, double level, double depth, double carrier_phase,
                             double settle_s, double average_s);

/// Debug sink writing `stage,sample,value` rows (header emitted on creation).
LockInChain::Tap csv_tap(std::ostream& os);
std::string to_string(ChainStage s);

/// Track-and-hold integrator.
struct Integrator {
  double gain = 1.0;
  double state = 0.0;
  bool held = false;

  double step(double err, double dt) {
    if (dt <= 0) throw DspError("integrator step requires dt > 0");
    if (!held) state += gain * err * dt;
    return state;
  }
  void hold() { held = true; }
  void release() { held = false; }
};

}  // namespace sqz
