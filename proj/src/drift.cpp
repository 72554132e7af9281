#include "sqz/drift.hpp"

#include <cmath>
#include <numbers>
#include <stdexcept>

namespace sqz {

std::string_view to_string(DriftChannel c) {
  switch (c) {
    case DriftChannel::PhaseProbe: return "phase_probe";
    case DriftChannel::PhaseLo: return "phase_lo";
    case DriftChannel::PhasePump: return "phase_pump";
    case DriftChannel::PolProbeA: return "pol_probe_a";
    case DriftChannel::PolProbeB: return "pol_probe_b";
    case DriftChannel::PolLoA: return "pol_lo_a";
    case DriftChannel::PolLoB: return "pol_lo_b";
    case DriftChannel::PowerProbe: return "power_probe";
    case DriftChannel::PowerLo: return "power_lo";
    case DriftChannel::TempCoupler: return "temp_coupler";
    case DriftChannel::Count: break;
  }
  return "?";
}

DriftGenerator::DriftGenerator(const DriftSpec& spec, std::uint64_t seed, int channel) : spec_(spec) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(channel), 0x5eedu};
  rng_.seed(seq);
}

void DriftGenerator::step(double dt) {
  if (!(dt > 0)) throw std::invalid_argument("drift step requires dt > 0");
  if (spec_.walk != 0) walk_ += spec_.walk * std::sqrt(dt) * gauss_(rng_);
  t_ += dt;
}

double DriftGenerator::value() const {
  double v = walk_ + spec_.ramp * t_;
  if (spec_.sine_amplitude != 0 && spec_.sine_period_s > 0)
    v += spec_.sine_amplitude * std::sin(2 * std::numbers::pi * t_ / spec_.sine_period_s + spec_.sine_phase);
  return v;
}

DriftSpecs default_drift_specs() {
  DriftSpecs s{};
  auto at = [&](DriftChannel c) -> DriftSpec& { return s[static_cast<int>(c)]; };
  at(DriftChannel::PhaseProbe).walk = 0.05;
  at(DriftChannel::PhaseLo).walk = 0.05;
  at(DriftChannel::PhasePump).walk = 0.05;
  for (auto c : {DriftChannel::PolProbeA, DriftChannel::PolProbeB, DriftChannel::PolLoA, DriftChannel::PolLoB})
    at(c).walk = 5e-4;
  at(DriftChannel::PolLoA).ramp = 1.2e-5;
  at(DriftChannel::PowerProbe) = DriftSpec{0, 0, 0.01, 600, 0};
  at(DriftChannel::PowerLo) = DriftSpec{0, 0, 0.01, 600, 1.0};
  at(DriftChannel::TempCoupler) = DriftSpec{0, 0, 0.5, 3600, 0};
  return s;
}

DriftSuite::DriftSuite(const DriftSpecs& specs, std::uint64_t seed) {
  for (int i = 0; i < kDriftChannels; ++i) gens_[i] = DriftGenerator(specs[i], seed, i);
}

void DriftSuite::step(double dt) {
  for (auto& g : gens_) g.step(dt);
}

}  // namespace sqz
