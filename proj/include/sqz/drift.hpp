#pragma once

// Seeded slow disturbances: each channel is a random walk plus a ramp plus a
// sinusoid. Channels draw from independent streams so that changing one
// channel's parameters never perturbs another's trajectory.

#include <array>
#include <cstdint>
#include <random>
#include <string_view>

namespace sqz {

enum class DriftChannel : int {
  PhaseProbe,   // rad
  PhaseLo,      // rad
  PhasePump,    // rad
  PolProbeA,    // rad on the sphere, rotation about S2
  PolProbeB,    // rad on the sphere, rotation about S3
  PolLoA,
  PolLoB,
  PowerProbe,   // fractional
  PowerLo,      // fractional
  TempCoupler,  // degC, ambient pull on the homodyne splitter
  Count
};

inline constexpr int kDriftChannels = static_cast<int>(DriftChannel::Count);

std::string_view to_string(DriftChannel c);

struct DriftSpec {
  double walk = 0;           // units / sqrt(s)
  double ramp = 0;           // units / s
  double sine_amplitude = 0; // units
  double sine_period_s = 0;  // 0 disables the sinusoid
  double sine_phase = 0;     // rad

  bool is_zero() const { return walk == 0 && ramp == 0 && (sine_amplitude == 0 || sine_period_s == 0); }
};

class DriftGenerator {
 public:
  DriftGenerator() = default;
  DriftGenerator(const DriftSpec& spec, std::uint64_t seed, int channel);

  void step(double dt);
  double value() const;
  double time() const { return t_; }
  const DriftSpec& spec() const { return spec_; }

 private:
  DriftSpec spec_{};
  std::mt19937_64 rng_{};
  std::normal_distribution<double> gauss_{0.0, 1.0};
  double walk_ = 0;
  double t_ = 0;
};

using DriftSpecs = std::array<DriftSpec, kDriftChannels>;

DriftSpecs default_drift_specs();

class DriftSuite {
 public:
  DriftSuite() = default;
  DriftSuite(const DriftSpecs& specs, std::uint64_t seed);

  void step(double dt);
  double value(DriftChannel c) const { return gens_[static_cast<int>(c)].value(); }
  double time() const { return gens_[0].time(); }

 private:
  std::array<DriftGenerator, kDriftChannels> gens_{};
};

}  // namespace sqz
