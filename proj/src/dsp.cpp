#include "sqz/dsp.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <ostream>
#include <vector>

namespace sqz {

namespace {
constexpr double kPi = std::numbers::pi;
constexpr double kMaxPoleRadius = 1.0 - 1e-6;
}  // namespace

std::string to_string(FilterKind k) {
  switch (k) {
    case FilterKind::LowPass: return "low-pass";
    case FilterKind::HighPass: return "high-pass";
    case FilterKind::BandPass: return "band-pass";
    case FilterKind::BandReject: return "band-reject";
    case FilterKind::AllPass: return "all-pass";
  }
  return "?";
}

std::string to_string(ChainStage s) {
  switch (s) {
    case ChainStage::CarrierBpf: return "carrier_bpf";
    case ChainStage::Envelope: return "envelope";
    case ChainStage::DcBlock: return "dc_block";
    case ChainStage::Reference: return "reference";
    case ChainStage::Mixed: return "mixed";
    case ChainStage::Output: return "output";
  }
  return "?";
}

double FilterSpec::default_q(FilterKind k) {
  switch (k) {
    case FilterKind::BandPass: return 10.0;
    case FilterKind::BandReject: return 2.0;
    default: return 1.0 / std::numbers::sqrt2;
  }
}

std::complex<double> BiquadCoefficients::response(double freq_hz, double sample_rate_hz) const {
  const std::complex<double> z1 = std::polar(1.0, -2 * kPi * freq_hz / sample_rate_hz);
  const std::complex<double> z2 = z1 * z1;
  return (b0 + b1 * z1 + b2 * z2) / (1.0 + a1 * z1 + a2 * z2);
}

double BiquadCoefficients::magnitude_db(double freq_hz, double sample_rate_hz) const {
  return 20 * std::log10(std::abs(response(freq_hz, sample_rate_hz)));
}

double BiquadCoefficients::pole_radius() const {
  const double disc = a1 * a1 - 4 * a2;
  if (disc < 0) return std::sqrt(a2);
  const double s = std::sqrt(disc);
  return std::max(std::abs((-a1 + s) / 2), std::abs((-a1 - s) / 2));
}

BiquadCoefficients design_biquad(const FilterSpec& spec) {
  const double fs = spec.sample_rate_hz;
  const double f0 = spec.frequency_hz;
  if (!(fs > 0) || !std::isfinite(fs)) throw DspError("sample rate must be positive");
  if (!(f0 > 0) || !std::isfinite(f0)) throw DspError(to_string(spec.kind) + " corner must be positive");
  if (f0 >= fs / 2) throw DspError(to_string(spec.kind) + " corner at or above Nyquist");
  const double q = spec.effective_q();
  if (!(q > 0)) throw DspError("filter Q must be positive");

  const double w0 = 2 * kPi * f0 / fs;
  const double cw = std::cos(w0);
  const double alpha = std::sin(w0) / (2 * q);

  double b0 = 0, b1 = 0, b2 = 0;
  const double a0 = 1 + alpha, a1 = -2 * cw, a2 = 1 - alpha;
  switch (spec.kind) {
    case FilterKind::LowPass:
      b0 = (1 - cw) / 2, b1 = 1 - cw, b2 = (1 - cw) / 2;
      break;
    case FilterKind::HighPass:
      b0 = (1 + cw) / 2, b1 = -(1 + cw), b2 = (1 + cw) / 2;
      break;
    case FilterKind::BandPass:
      b0 = alpha, b1 = 0, b2 = -alpha;
      break;
    case FilterKind::BandReject:
      b0 = 1, b1 = -2 * cw, b2 = 1;
      break;
    case FilterKind::AllPass:
      b0 = 1 - alpha, b1 = -2 * cw, b2 = 1 + alpha;
      break;
  }
  BiquadCoefficients c{b0 / a0, b1 / a0, b2 / a0, a1 / a0, a2 / a0};
  if (!(c.pole_radius() < kMaxPoleRadius)) throw DspError(to_string(spec.kind) + " design is not stable");
  return c;
}

double allpass_phase(const BiquadCoefficients& c, double freq_hz, double sample_rate_hz) {
  double p = std::arg(c.response(freq_hz, sample_rate_hz));
  if (p > 0) p -= 2 * kPi;
  return p;
}

FilterSpec allpass_for_phase(double phase_rad, double at_hz, double sample_rate_hz, double q) {
  if (!(phase_rad < 0 && phase_rad > -2 * kPi)) throw DspError("all-pass phase must lie in (-2pi, 0)");
  FilterSpec spec{FilterKind::AllPass, 0, sample_rate_hz, q};
  auto phase_at = [&](double log_f0) {
    spec.frequency_hz = std::exp(log_f0);
    return allpass_phase(design_biquad(spec), at_hz, sample_rate_hz);
  };
  // Phase rises monotonically from -2pi toward 0 as the center moves up.
  double lo = std::log(at_hz * 1e-2);
  double hi = std::log(sample_rate_hz * 0.499);
  if (phase_rad < phase_at(lo) || phase_rad > phase_at(hi)) throw DspError("all-pass phase not reachable at this rate");
  for (int i = 0; i < 200 && hi - lo > 1e-14; ++i) {
    const double mid = 0.5 * (lo + hi);
    (phase_at(mid) < phase_rad ? lo : hi) = mid;
  }
  spec.frequency_hz = std::exp(0.5 * (lo + hi));
  return spec;
}

void LockInConfig::validate() const {
  if (!(sample_rate_hz > 0)) throw DspError("lock-in sample rate must be positive");
  if (downsample < 1) throw DspError("downsample factor must be >= 1");
  const double fd = decimated_rate();
  if (carrier_hz >= sample_rate_hz / 2) throw DspError("carrier above plant Nyquist");
  if (post_square_lpf_hz >= sample_rate_hz / 2) throw DspError("post-square low-pass above plant Nyquist");
  for (double f : {dc_block_hz, demod_hz, demod_hpf_hz, second_harmonic_br_hz, output_lpf_hz})
    if (!(f > 0) || f >= fd / 2) throw DspError("decimated-stage frequency outside (0, fs/(2*downsample))");
  if (carrier_hz + post_square_lpf_hz >= sample_rate_hz / 2) throw DspError("carrier too close to Nyquist for envelope recovery");
}

LockInChain::LockInChain(const LockInConfig& cfg) : cfg_(cfg) {
  cfg_.validate();
  const double fs = cfg_.sample_rate_hz;
  const double fd = cfg_.decimated_rate();
  carrier_bpf_ = Biquad(FilterSpec{FilterKind::BandPass, cfg_.carrier_hz, fs, cfg_.carrier_q});
  post_square_lpf_ = Biquad(FilterSpec{FilterKind::LowPass, cfg_.post_square_lpf_hz, fs});
  dc_block_ = Biquad(FilterSpec{FilterKind::HighPass, cfg_.dc_block_hz, fd});
  ref_hpf_ = Biquad(FilterSpec{FilterKind::HighPass, cfg_.demod_hpf_hz, fd});
  notch_ = Biquad(FilterSpec{FilterKind::BandReject, cfg_.second_harmonic_br_hz, fd, cfg_.second_harmonic_q});
  output_lpf_ = Biquad(FilterSpec{FilterKind::LowPass, cfg_.output_lpf_hz, fd});
  level_lpf_ = Biquad(FilterSpec{FilterKind::LowPass, cfg_.output_lpf_hz, fd});
  set_allpass_phase(cfg_.demod_allpass_phase);
}

void LockInChain::set_allpass_phase(double phase_rad) {
  ref_allpass_ = Biquad(allpass_for_phase(phase_rad, cfg_.demod_hz, cfg_.decimated_rate()));
  cfg_.demod_allpass_phase = phase_rad;
}

void LockInChain::reset() {
  for (Biquad* b : {&carrier_bpf_, &post_square_lpf_, &dc_block_, &ref_hpf_, &ref_allpass_, &notch_, &output_lpf_, &level_lpf_})
    b->reset();
  output_ = level_ = 0;
  outputs_ = 0;
}

void LockInChain::process(std::span<const double> samples, std::int64_t first_sample) {
  const std::int64_t d = cfg_.downsample;
  const bool magnitude = cfg_.detector == EnvelopeDetector::Magnitude;
  for (std::size_t i = 0; i < samples.size(); ++i) {
    const std::int64_t n = first_sample + static_cast<std::int64_t>(i);
    const double y = carrier_bpf_.step(samples[i]);
    const double p = post_square_lpf_.step(y * y);
    if (tap_) tap_(ChainStage::CarrierBpf, n, y);
    if (n % d != 0) continue;

    // y^2 low-passed is half the squared amplitude
    const double env = magnitude ? std::sqrt(2 * std::max(p, 0.0)) : 2 * p;
    level_ = level_lpf_.step(env);
    const double ac = dc_block_.step(env);
    const double ref = ref_allpass_.step(ref_hpf_.step(std::sin(clock_phase(n, cfg_.demod_hz, cfg_.sample_rate_hz))));
    const double mixed = ac * ref;
    output_ = 2 * output_lpf_.step(notch_.step(mixed));
    ++outputs_;
    if (tap_) {
      tap_(ChainStage::Envelope, n, env);
      tap_(ChainStage::DcBlock, n, ac);
      tap_(ChainStage::Reference, n, ref);
      tap_(ChainStage::Mixed, n, mixed);
      tap_(ChainStage::Output, n, output_);
    }
  }
}

double synthetic_am_response(const LockInConfig& cfg, double level, double depth, double carrier_phase,
                             double settle_s, double average_s) {
  LockInChain chain(cfg);
  const double fs = cfg.sample_rate_hz;
  const std::int64_t total = std::llround(settle_s * fs);
  const std::int64_t avg_from = total - std::llround(average_s * fs);
  constexpr std::int64_t kBlock = 4096;
  std::vector<double> buf(kBlock);
  double sum = 0;
  std::int64_t count = 0;
  for (std::int64_t n0 = 0; n0 < total; n0 += kBlock) {
    const std::int64_t len = std::min(kBlock, total - n0);
    for (std::int64_t i = 0; i < len; ++i) {
      const std::int64_t n = n0 + i;
      const double m = std::sin(clock_phase(n, cfg.demod_hz, fs));
      buf[i] = level * (1 + depth * m) * std::cos(clock_phase(n, cfg.carrier_hz, fs) + carrier_phase);
    }
    const std::int64_t before = chain.outputs();
    chain.process(std::span<const double>(buf.data(), len), n0);
    if (n0 + len > avg_from && chain.outputs() > before) {
      // one output per decimated sample inside the block; sample the last
      sum += chain.error();
      ++count;
    }
  }
  return count ? sum / count : chain.error();
}

double calibrate_allpass_phase(const LockInConfig& cfg, double level, double depth, double settle_s) {
  LockInConfig c = cfg;
  const double psi1 = -kPi / 2;
  c.demod_allpass_phase = psi1;
  const double b1 = synthetic_am_response(c, level, depth, 0.0, settle_s, 0.2);
  c.demod_allpass_phase = psi1 - kPi / 2;
  const double b2 = synthetic_am_response(c, level, depth, 0.0, settle_s, 0.2);
  double psi = psi1 + std::atan2(-b2, b1);
  while (psi >= 0) psi -= 2 * kPi;
  while (psi <= -2 * kPi) psi += 2 * kPi;
  return psi;
}

LockInChain::Tap csv_tap(std::ostream& os) {
  os << "stage,sample,value\n";
  return [&os](ChainStage s, std::int64_t n, double v) { os << to_string(s) << ',' << n << ',' << v << '\n'; };
}

}  // namespace sqz
