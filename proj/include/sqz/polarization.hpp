#pragma once

// Polarization of fully polarized light: Jones vectors, Stokes points on the
// unit Poincare sphere, sphere rotations, and the three-piezo fiber
// polarization controller.
//
// Conventions
//   S1 = |ex|^2 - |ey|^2      (+S1 is V, the x polarization)
//   S2 = 2 Re(conj(ex) ey)
//   S3 = 2 Im(ex conj(ey))    (+S3 is right circular, seen from the receiver)
// so (cos t, -i sin t) sits 2t from V along the V-R great circle.

#include <Eigen/Dense>

#include <array>
#include <cmath>
#include <complex>
#include <stdexcept>

namespace sqz {

template <typename Scalar>
using Vec3 = Eigen::Matrix<Scalar, 3, 1>;
template <typename Scalar>
using Mat3 = Eigen::Matrix<Scalar, 3, 3>;
template <typename Scalar>
using JonesVector = Eigen::Matrix<std::complex<Scalar>, 2, 1>;
template <typename Scalar>
using JonesMatrix = Eigen::Matrix<std::complex<Scalar>, 2, 2>;

class PolarizationError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Unit-norm Jones vector. Every constructor normalizes; a zero vector throws.
template <typename Scalar>
class JonesState {
 public:
  using Complex = std::complex<Scalar>;

  JonesState() : v_(Complex(1), Complex(0)) {}
  JonesState(Complex ex, Complex ey) : v_(ex, ey) { normalize(); }
  explicit JonesState(const JonesVector<Scalar>& v) : v_(v) { normalize(); }

  const Complex& ex() const { return v_(0); }
  const Complex& ey() const { return v_(1); }
  const JonesVector<Scalar>& vector() const { return v_; }

  /// Apply a 2x2 Jones operator and renormalize.
  JonesState transformed(const JonesMatrix<Scalar>& m) const { return JonesState(JonesVector<Scalar>(m * v_)); }

 private:
  void normalize() {
    const Scalar n = v_.norm();
    if (!(n > Scalar(0)) || !std::isfinite(n)) throw PolarizationError("Jones vector has zero or non-finite norm");
    v_ /= n;
  }

  JonesVector<Scalar> v_;
};

/// Point on the unit Poincare sphere.
template <typename Scalar>
class StokesState {
 public:
  StokesState() : s_(1, 0, 0) {}
  StokesState(Scalar s1, Scalar s2, Scalar s3) : s_(s1, s2, s3) { normalize(); }
  explicit StokesState(const Vec3<Scalar>& s) : s_(s) { normalize(); }

  Scalar s1() const { return s_(0); }
  Scalar s2() const { return s_(1); }
  Scalar s3() const { return s_(2); }
  const Vec3<Scalar>& vector() const { return s_; }

  /// Great-circle angle to another sphere point.
  Scalar angle_to(const StokesState& o) const {
    return std::atan2(s_.cross(o.s_).norm(), s_.dot(o.s_));
  }

 private:
  void normalize() {
    const Scalar n = s_.norm();
    if (!(n > Scalar(0)) || !std::isfinite(n)) throw PolarizationError("Stokes vector has zero or non-finite norm");
    s_ /= n;
  }

  Vec3<Scalar> s_;
};

using Jones = JonesState<double>;
using Stokes = StokesState<double>;
using Vec3d = Vec3<double>;
using Mat3d = Mat3<double>;
using JonesMatrixd = JonesMatrix<double>;

namespace poles {
inline Stokes V() { return Stokes(1, 0, 0); }
inline Stokes H() { return Stokes(-1, 0, 0); }
inline Stokes D() { return Stokes(0, 1, 0); }
inline Stokes A() { return Stokes(0, -1, 0); }
inline Stokes R() { return Stokes(0, 0, 1); }
inline Stokes L() { return Stokes(0, 0, -1); }
}  // namespace poles

// Pauli-like generators ordered so that s_k = j^H * sigma_k * j.
template <typename Scalar>
std::array<JonesMatrix<Scalar>, 3> stokes_generators() {
  using C = std::complex<Scalar>;
  JonesMatrix<Scalar> g1, g2, g3;
  g1 << C(1), C(0), C(0), C(-1);
  g2 << C(0), C(1), C(1), C(0);
  g3 << C(0), C(0, -1), C(0, 1), C(0);
  g3 = -g3;
  return {g1, g2, g3};
}

template <typename Scalar>
JonesMatrix<Scalar> generator_along(const Vec3<Scalar>& n) {
  using C = std::complex<Scalar>;
  JonesMatrix<Scalar> m;
  m << C(n(0)), C(n(1), n(2)), C(n(1), -n(2)), C(-n(0));
  return m;
}

/// Polarization on the V-R great circle, 2*theta from V toward R.
template <typename Scalar>
JonesState<Scalar> great_circle_state(Scalar theta) {
  using C = std::complex<Scalar>;
  return JonesState<Scalar>(C(std::cos(theta)), C(0, -std::sin(theta)));
}

template <typename Scalar>
StokesState<Scalar> stokes_from_jones(const JonesState<Scalar>& j) {
  const auto ex = j.ex();
  const auto ey = j.ey();
  const Scalar s1 = std::norm(ex) - std::norm(ey);
  const Scalar s2 = Scalar(2) * std::real(std::conj(ex) * ey);
  const Scalar s3 = Scalar(2) * std::imag(ex * std::conj(ey));
  return StokesState<Scalar>(s1, s2, s3);
}

/// One Jones representative of a sphere point (global phase fixed so ex is real, >= 0).
template <typename Scalar>
JonesState<Scalar> jones_from_stokes(const StokesState<Scalar>& s) {
  using C = std::complex<Scalar>;
  const Scalar a = std::sqrt(std::max(Scalar(0), (Scalar(1) + s.s1()) / Scalar(2)));
  const Scalar b = std::sqrt(std::max(Scalar(0), (Scalar(1) - s.s1()) / Scalar(2)));
  // ey phase chosen so that S2 = 2ab cos(p), S3 = -2ab sin(p)
  const Scalar p = std::atan2(-s.s3(), s.s2());
  if (b == Scalar(0)) return JonesState<Scalar>(C(1), C(0));
  return JonesState<Scalar>(C(a), std::polar(b, p));
}

template <typename Scalar>
void require_unit_axis(const Vec3<Scalar>& axis) {
  if (!(std::abs(axis.norm() - Scalar(1)) < Scalar(1e-9))) throw PolarizationError("rotation axis must be unit norm");
}

/// Right-handed rigid rotation of a sphere point about `axis` by `angle`.
template <typename Scalar>
StokesState<Scalar> rotate_stokes(const StokesState<Scalar>& s, const Vec3<Scalar>& axis, Scalar angle) {
  require_unit_axis(axis);
  const Eigen::AngleAxis<Scalar> rot(angle, axis);
  return StokesState<Scalar>(Vec3<Scalar>(rot * s.vector()));
}

/// SU(2) Jones operator whose action on the sphere is rotate_stokes(axis, angle).
template <typename Scalar>
JonesMatrix<Scalar> jones_rotation(const Vec3<Scalar>& axis, Scalar angle) {
  require_unit_axis(axis);
  using C = std::complex<Scalar>;
  const JonesMatrix<Scalar> id = JonesMatrix<Scalar>::Identity();
  // The generator triple above is left-handed, hence the + sign.
  return std::cos(angle / 2) * id + C(0, std::sin(angle / 2)) * generator_along(axis);
}

/// Rotation matrix on the sphere induced by a Jones operator: R_ij = tr(s_i U s_j U^H) / 2.
template <typename Scalar>
Mat3<Scalar> sphere_rotation(const JonesMatrix<Scalar>& u) {
  static const auto g = stokes_generators<Scalar>();
  Mat3<Scalar> r;
  for (int i = 0; i < 3; ++i)
    for (int k = 0; k < 3; ++k) r(i, k) = std::real((g[i] * u * g[k] * u.adjoint()).trace()) / Scalar(2);
  return r;
}

/// Power coupling between two polarization modes, |<j1, j2>|^2.
template <typename Scalar>
Scalar mode_overlap(const JonesState<Scalar>& j1, const JonesState<Scalar>& j2) {
  const Scalar o = std::norm(j1.vector().dot(j2.vector()));
  return std::min(Scalar(1), std::max(Scalar(0), o));
}

// ---------------------------------------------------------------------------
// Three-piezo fiber squeezer.

inline constexpr int kPiezoMax = 4095;
inline constexpr int kPiezoCount = 3;

/// DAC codes driving the three squeezers (0..4095 <-> 0..140 V).
struct PiezoBank {
  std::array<int, kPiezoCount> values{2048, 2048, 2048};
  double volts_per_count = 140.0 / 4095.0;
  std::array<double, kPiezoCount> rad_per_volt{0.02, 0.02, 0.02};

  static PiezoBank centered() { return PiezoBank{}; }

  void validate() const {
    for (int v : values)
      if (v < 0 || v > kPiezoMax) throw PolarizationError("piezo code outside [0, 4095]");
  }
  double voltage(int k) const { return values[k] * volts_per_count; }
  double angle(int k) const { return voltage(k) * rad_per_volt[k]; }
  double rad_per_count(int k) const { return volts_per_count * rad_per_volt[k]; }

  static int clamp_code(double v) {
    const long r = std::lround(v);
    return static_cast<int>(std::clamp<long>(r, 0, kPiezoMax));
  }
};

/// Squeezer rotation axes on the sphere. Piezo 2 sits at 45 degrees in the
/// fiber frame, i.e. 90 degrees on the sphere, from the parallel pair 1 and 3.
struct ControllerGeometry {
  std::array<Vec3d, kPiezoCount> axes{Vec3d(1, 0, 0), Vec3d(0, -1, 0), Vec3d(1, 0, 0)};

  static ControllerGeometry standard() { return ControllerGeometry{}; }
};

/// Jones operator of the controller for explicit rotation angles.
inline JonesMatrixd controller_matrix(const ControllerGeometry& g, const std::array<double, kPiezoCount>& angles) {
  JonesMatrixd m = JonesMatrixd::Identity();
  for (int k = 0; k < kPiezoCount; ++k) m = jones_rotation<double>(g.axes[k], angles[k]) * m;
  return m;
}

inline std::array<double, kPiezoCount> bank_angles(const PiezoBank& p) {
  return {p.angle(0), p.angle(1), p.angle(2)};
}

/// Piezo 1, 2, 3 rotations applied in order to the input state.
inline Jones controller_transform(const ControllerGeometry& g, const PiezoBank& p, const Jones& j_in) {
  p.validate();
  return j_in.transformed(controller_matrix(g, bank_angles(p)));
}

}  // namespace sqz
