#pragma once

// Centrifuge field: intensity envelope plus the polarization-angle law of a
// linearly polarized field rotating in the lab XZ plane.
//
// The polarization direction is (cos phi, 0, sin phi). Only the
// cycle-averaged envelope and the polarization direction enter the
// dynamics; the optical carrier is never represented.

#include <cmath>
#include <numbers>
#include <stdexcept>
#include <string>

#include "centrifuge/physkit.hpp"

namespace centrifuge::field {

enum class EnvelopeShape { gaussian, cos2_flat_top };
enum class FieldKind { cfcfg, accelerated, linear_static };

inline std::string to_string(EnvelopeShape s) {
  return s == EnvelopeShape::gaussian ? "gaussian" : "cos2-flat-top";
}

inline EnvelopeShape envelope_shape_from_string(const std::string& s) {
  if (s == "gaussian") return EnvelopeShape::gaussian;
  if (s == "cos2-flat-top") return EnvelopeShape::cos2_flat_top;
  throw std::invalid_argument("unknown envelope shape '" + s + "'");
}

inline std::string to_string(FieldKind k) {
  switch (k) {
    case FieldKind::cfcfg: return "cfCFG";
    case FieldKind::accelerated: return "accelerated";
    case FieldKind::linear_static: return "linear-static";
  }
  return "?";
}

inline FieldKind field_kind_from_string(const std::string& s) {
  if (s == "cfCFG") return FieldKind::cfcfg;
  if (s == "accelerated") return FieldKind::accelerated;
  if (s == "linear-static") return FieldKind::linear_static;
  throw std::invalid_argument("unknown field kind '" + s + "'");
}

/// Intensity envelope. For the Gaussian shape the pulse is truncated at
/// center +/- truncation_fwhm * fwhm. The cos^2 flat-top shape has a flat
/// top of length fwhm - ramp and cos^2 ramps of length `ramp` on each side,
/// so that its half-maximum points are fwhm apart.
struct EnvelopeSpec {
  EnvelopeShape shape = EnvelopeShape::gaussian;
  double peak_intensity = 2e12;  // W/cm^2
  double fwhm = 200.0;           // ps
  double center = 0.0;           // ps
  double truncation_fwhm = 2.5;  // gaussian only, in units of fwhm
  double ramp = 100.0;           // cos2-flat-top only, ps

  void validate() const {
    if (!(peak_intensity >= 0.0)) throw std::invalid_argument("envelope: peak_intensity must be >= 0");
    if (!(fwhm > 0.0)) throw std::invalid_argument("envelope: fwhm must be > 0");
    if (shape == EnvelopeShape::gaussian && !(truncation_fwhm > 0.0))
      throw std::invalid_argument("envelope: truncation must be > 0");
    if (shape == EnvelopeShape::cos2_flat_top && !(ramp > 0.0 && ramp <= fwhm))
      throw std::invalid_argument("envelope: ramp must lie in (0, fwhm]");
  }

  double start() const { return center - half_extent(); }
  double end() const { return center + half_extent(); }

  double half_extent() const {
    if (shape == EnvelopeShape::gaussian) return truncation_fwhm * fwhm;
    return 0.5 * (fwhm + ramp);
  }

  /// Envelope normalized to 1 at its peak.
  double normalized(double t) const {
    const double x = t - center;
    if (std::abs(x) > half_extent()) return 0.0;
    if (shape == EnvelopeShape::gaussian) {
      return std::exp(-4.0 * std::numbers::ln2 * (x / fwhm) * (x / fwhm));
    }
    const double flat = 0.5 * (fwhm - ramp);
    const double ax = std::abs(x);
    if (ax <= flat) return 1.0;
    const double c = std::cos(0.5 * std::numbers::pi * (ax - flat) / ramp);
    return c * c;
  }

  double intensity(double t) const { return peak_intensity * normalized(t); }

  /// Time integral of the normalized envelope over its support (ps).
  double normalized_area() const {
    if (shape == EnvelopeShape::gaussian) {
      const double s = fwhm / (2.0 * std::sqrt(2.0 * std::numbers::ln2));
      const double half = half_extent() / (std::sqrt(2.0) * s);
      return s * std::sqrt(2.0 * std::numbers::pi) * std::erf(half);
    }
    return fwhm;
  }
};

struct FieldWaveform {
  EnvelopeSpec envelope;
  double f0 = 0.0;          // GHz, polarization rotation frequency at the center
  double drift_rate = 0.0;  // GHz/ps, linear frequency drift
  double phase0 = 0.0;      // rad
  FieldKind kind = FieldKind::cfcfg;

  void validate() const {
    envelope.validate();
    if (kind == FieldKind::linear_static && (f0 != 0.0 || drift_rate != 0.0)) {
      throw std::invalid_argument("linear-static field requires f0 = 0 and drift_rate = 0");
    }
    if (!std::isfinite(f0) || !std::isfinite(drift_rate) || !std::isfinite(phase0)) {
      throw std::invalid_argument("field parameters must be finite");
    }
  }

  /// Instantaneous rotation frequency in GHz.
  double frequency(double t) const {
    if (kind == FieldKind::linear_static) return 0.0;
    return f0 + drift_rate * (t - envelope.center);
  }

  double normalized_envelope(double t) const { return envelope.normalized(t); }
};

inline double polarization_angle(const FieldWaveform& field, double t) {
  if (field.kind == FieldKind::linear_static) return field.phase0;
  const double x = t - field.envelope.center;
  return field.phase0 +
         physkit::two_pi * physkit::PhysicalConstants::per_ps_per_GHz *
             (field.f0 * x + 0.5 * field.drift_rate * x * x);
}

/// Angular velocity d(phi)/dt in rad/ps.
inline double polarization_angular_velocity(const FieldWaveform& field, double t) {
  return physkit::ghz_to_rad_per_ps(field.frequency(t));
}

/// Rotation frequency of a centrifuge made by interfering two copies of a
/// chirped pulse delayed by `delay`: half their instantaneous frequency
/// difference.
inline double cfcfg_from_interferometer(double chirp_rate_ghz_per_ps, double delay_ps) {
  if (!(delay_ps >= 0.0)) throw std::invalid_argument("cfcfg_from_interferometer: delay must be >= 0");
  return 0.5 * chirp_rate_ghz_per_ps * delay_ps;
}

/// Squared field amplitude in atomic units for an intensity in W/cm^2.
inline double intensity_to_field_squared(double intensity) {
  if (!(intensity >= 0.0)) throw std::invalid_argument("intensity must be >= 0");
  return intensity / physkit::PhysicalConstants::atomic_intensity_W_per_cm2;
}

/// Depth of the cycle-averaged polarizability potential, U0 = Δα E0^2 / 4,
/// in cm^-1. delta_alpha is in atomic units.
inline double coupling_depth(double intensity, double delta_alpha) {
  if (!(delta_alpha >= 0.0)) throw std::invalid_argument("delta_alpha must be >= 0");
  return 0.25 * delta_alpha * intensity_to_field_squared(intensity) *
         physkit::PhysicalConstants::hartree_wavenumber;
}

/// Polarizability anisotropy (a.u.) giving depth `u0` (cm^-1) at `intensity`.
inline double delta_alpha_for_depth(double u0, double intensity) {
  if (!(intensity > 0.0)) throw std::invalid_argument("intensity must be > 0");
  return 4.0 * u0 /
         (intensity_to_field_squared(intensity) * physkit::PhysicalConstants::hartree_wavenumber);
}

/// Drift rate that sweeps the frequency by `spread` GHz across the whole
/// envelope support.
inline double drift_rate_for_spread(const EnvelopeSpec& env, double spread_ghz) {
  return spread_ghz / (env.end() - env.start());
}

inline FieldWaveform make_cfcfg(const EnvelopeSpec& env, double f0, double drift_rate = 0.0) {
  FieldWaveform f;
  f.envelope = env;
  f.f0 = f0;
  f.drift_rate = drift_rate;
  f.kind = FieldKind::cfcfg;
  f.validate();
  return f;
}

inline FieldWaveform make_linear_static(const EnvelopeSpec& env, double angle = 0.0) {
  FieldWaveform f;
  f.envelope = env;
  f.phase0 = angle;
  f.kind = FieldKind::linear_static;
  f.validate();
  return f;
}

}  // namespace centrifuge::field
