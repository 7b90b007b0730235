#pragma once

// Physical constants and unit conversions.
//
// Internal units: energies in cm^-1, times in ps, frequencies in GHz.
// An energy E in cm^-1 corresponds to a frequency E*c in GHz, and to an
// angular frequency 2*pi*1e-3*E*c in rad/ps.

#include <numbers>
#include <stdexcept>

namespace centrifuge::physkit {

struct PhysicalConstants {
  /// 1 cm^-1 expressed in GHz (speed of light in units of cm*GHz).
  static constexpr double c_GHz_per_wavenumber = 29.9792458;
  /// Boltzmann constant in cm^-1 per kelvin (CODATA 2018).
  static constexpr double kB_wavenumber_per_K = 0.695034800;
  /// Atomic unit of intensity, W/cm^2 (field amplitude of 1 a.u.).
  static constexpr double atomic_intensity_W_per_cm2 = 3.50944506e16;
  /// Atomic unit of energy (hartree) in cm^-1.
  static constexpr double hartree_wavenumber = 219474.6313632;
  /// 1 GHz expressed as a rate in ps^-1.
  static constexpr double per_ps_per_GHz = 1e-3;
};

inline constexpr double two_pi = 2.0 * std::numbers::pi;

constexpr double wavenumber_to_ghz(double e) {
  return e * PhysicalConstants::c_GHz_per_wavenumber;
}

constexpr double ghz_to_wavenumber(double f) {
  return f / PhysicalConstants::c_GHz_per_wavenumber;
}

/// Angular frequency in rad/ps of an energy given in cm^-1.
constexpr double wavenumber_to_rad_per_ps(double e) {
  return two_pi * PhysicalConstants::per_ps_per_GHz * wavenumber_to_ghz(e);
}

/// Angular frequency in rad/ps of a frequency given in GHz.
constexpr double ghz_to_rad_per_ps(double f) {
  return two_pi * PhysicalConstants::per_ps_per_GHz * f;
}

inline double thermal_energy(double kelvin) {
  if (!(kelvin >= 0.0)) {
    throw std::invalid_argument("thermal_energy: temperature must be >= 0");
  }
  return PhysicalConstants::kB_wavenumber_per_K * kelvin;
}

}  // namespace centrifuge::physkit
