#pragma once

// Rotational structure of a near-prolate rotor: molecular constants,
// the |J,K,M> basis, energies, angle operators for the most polarizable
// axis u, and the thermal ensemble.
//
// The lab quantization axis is Z. The molecular axis u has polar angle
// theta from Z and azimuth phi from X. Axis-distribution functions of the
// linear-rotor model are the spherical harmonics Y_JM(theta, phi).

#include <algorithm>
#include <cmath>
#include <complex>
#include <map>
#include <numbers>
#include <stdexcept>
#include <string>
#include <tuple>
#include <vector>

#include <Eigen/Dense>

#include "centrifuge/angular.hpp"
#include "centrifuge/physkit.hpp"

namespace centrifuge::rotor {

enum class Environment { gas, droplet };

inline std::string to_string(Environment e) { return e == Environment::gas ? "gas" : "droplet"; }

inline Environment environment_from_string(const std::string& s) {
  if (s == "gas") return Environment::gas;
  if (s == "droplet") return Environment::droplet;
  throw std::invalid_argument("unknown environment '" + s + "'");
}

/// Rotational constants in cm^-1 with B_x >= B_y >= B_z (x is the a axis,
/// the most polarizable axis of the dimer).
struct RotorParams {
  double B_x = 0.86;
  double B_y = 0.19;
  double B_z = 0.15;
  double D = 1e-6;
  double delta_alpha = 0.0;  // atomic units
  double T = 0.0;            // K
  Environment environment = Environment::gas;

  double B_yz() const { return 0.5 * (B_y + B_z); }

  void validate() const {
    for (double v : {B_x, B_y, B_z, D, delta_alpha, T}) {
      if (!(v >= 0.0) || !std::isfinite(v)) {
        throw std::invalid_argument("rotor parameters must be finite and >= 0");
      }
    }
    if (!(B_x >= B_y && B_y >= B_z)) {
      throw std::invalid_argument("rotor parameters must satisfy B_x >= B_y >= B_z");
    }
  }
};

/// Helium-induced reduction of the rotational constants of (NO)2.
inline constexpr double droplet_renormalization = 1.9;

inline RotorParams gas_preset() {
  RotorParams p;
  p.B_x = 0.86;
  p.B_y = 0.19;
  p.B_z = 0.15;
  p.D = 1e-6;
  p.environment = Environment::gas;
  return p;
}

/// Droplet constants: B_y = B_z = 0.092 cm^-1; B_x scaled by the same
/// renormalization factor as B_yz. The distortion constant keeps the gas
/// value.
inline RotorParams droplet_preset() {
  RotorParams p = gas_preset();
  p.B_y = 0.092;
  p.B_z = 0.092;
  p.B_x = gas_preset().B_x / droplet_renormalization;
  p.environment = Environment::droplet;
  return p;
}

struct BasisState {
  int J = 0;
  int K = 0;
  int M = 0;
  auto operator<=>(const BasisState&) const = default;
};

enum class BasisMode { linear_rotor, symmetric_top };

/// Ordered |J,K,M> basis, lexicographic in (J, K, M).
class Basis {
 public:
  Basis(int j_max, BasisMode mode = BasisMode::linear_rotor) : j_max_(j_max), mode_(mode) {
    if (j_max < 0) throw std::invalid_argument("Basis: J_max must be >= 0");
    for (int j = 0; j <= j_max; ++j) {
      const int kmax = mode == BasisMode::linear_rotor ? 0 : j;
      for (int k = -kmax; k <= kmax; ++k) {
        for (int m = -j; m <= j; ++m) {
          index_.emplace(BasisState{j, k, m}, states_.size());
          states_.push_back({j, k, m});
        }
      }
    }
  }

  int j_max() const { return j_max_; }
  BasisMode mode() const { return mode_; }
  std::size_t size() const { return states_.size(); }
  const BasisState& operator[](std::size_t i) const { return states_[i]; }
  const std::vector<BasisState>& states() const { return states_; }

  /// Index of |J,K,M>, or size() if not present.
  std::size_t find(int J, int K, int M) const {
    const auto it = index_.find(BasisState{J, K, M});
    return it == index_.end() ? states_.size() : it->second;
  }

  std::size_t index_of(int J, int M) const {
    const auto i = find(J, 0, M);
    if (i == size()) throw std::out_of_range("Basis: state not present");
    return i;
  }

 private:
  int j_max_;
  BasisMode mode_;
  std::vector<BasisState> states_;
  std::map<BasisState, std::size_t> index_;
};

inline void check_quantum_numbers(int J, int K) {
  if (J < 0 || std::abs(K) > J) throw std::invalid_argument("invalid quantum numbers: need J >= 0 and |K| <= J");
}

/// Prolate-limit energy B_yz J(J+1) + (B_x - B_yz) K^2 - D [J(J+1)]^2, cm^-1.
inline double prolate_energy(int J, int K, const RotorParams& p) {
  check_quantum_numbers(J, K);
  const double jj = static_cast<double>(J) * (J + 1);
  return p.B_yz() * jj + (p.B_x - p.B_yz()) * K * K - p.D * jj * jj;
}

/// Eigenvalues (ascending, cm^-1) of the rigid asymmetric-top Hamiltonian
/// B_x Jx^2 + B_y Jy^2 + B_z Jz^2 for a given J, built in the symmetric-top
/// basis quantized along the body x axis.
inline std::vector<double> asymmetric_levels(int J, const RotorParams& p) {
  if (J < 0) throw std::invalid_argument("asymmetric_levels: J must be >= 0");
  const int n = 2 * J + 1;
  const double jj = static_cast<double>(J) * (J + 1);
  const double b_avg = 0.5 * (p.B_y + p.B_z);
  const double b_diff = 0.25 * (p.B_y - p.B_z);
  Eigen::MatrixXd h = Eigen::MatrixXd::Zero(n, n);
  for (int k = -J; k <= J; ++k) {
    const int i = k + J;
    h(i, i) = p.B_x * k * k + b_avg * (jj - static_cast<double>(k) * k);
    if (k + 2 <= J) {
      const double up = std::sqrt((jj - k * (k + 1.0)) * (jj - (k + 1.0) * (k + 2.0)));
      h(i + 2, i) = b_diff * up;
      h(i, i + 2) = b_diff * up;
    }
  }
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> solver(h, Eigen::EigenvaluesOnly);
  const auto& ev = solver.eigenvalues();
  return {ev.data(), ev.data() + n};
}

/// Frequency f_CFG (GHz) of the J -> J+2, K = 0 two-photon resonance:
/// 2 f_CFG = [E(J+2) - E(J)] c.
inline double resonance_frequency(int J, const RotorParams& p) {
  if (J < 0) throw std::invalid_argument("resonance_frequency: J must be >= 0");
  return 0.5 * physkit::wavenumber_to_ghz(prolate_energy(J + 2, 0, p) - prolate_energy(J, 0, p));
}

enum class AngleKind { xx, yy, zz, xz };

inline std::string to_string(AngleKind k) {
  switch (k) {
    case AngleKind::xx: return "xx";
    case AngleKind::yy: return "yy";
    case AngleKind::zz: return "zz";
    case AngleKind::xz: return "xz";
  }
  return "?";
}

/// Linear-rotor matrix element <J' M'| f |J M> of f = u_x^2, u_y^2, u_z^2
/// or u_x u_z, expanded in Racah tensors:
///   u_z^2   = 1/3 + 2/3 C2_0
///   u_x^2   = 1/3 - 1/3 C2_0 + (C2_2 + C2_-2)/sqrt6
///   u_y^2   = 1/3 - 1/3 C2_0 - (C2_2 + C2_-2)/sqrt6
///   u_x u_z = (C2_-1 - C2_1)/sqrt6
inline double angle_element(AngleKind kind, int jp, int mp, int j, int m) {
  using angular::racah_element;
  const double isotropic = (jp == j && mp == m) ? 1.0 / 3.0 : 0.0;
  const double inv_sqrt6 = 1.0 / std::sqrt(6.0);
  switch (kind) {
    case AngleKind::zz:
      return isotropic + 2.0 / 3.0 * racah_element(jp, mp, 2, 0, j, m);
    case AngleKind::xx:
    case AngleKind::yy: {
      const double sign = kind == AngleKind::xx ? 1.0 : -1.0;
      return isotropic - racah_element(jp, mp, 2, 0, j, m) / 3.0 +
             sign * inv_sqrt6 * (racah_element(jp, mp, 2, 2, j, m) + racah_element(jp, mp, 2, -2, j, m));
    }
    case AngleKind::xz:
      return inv_sqrt6 * (racah_element(jp, mp, 2, -1, j, m) - racah_element(jp, mp, 2, 1, j, m));
  }
  return 0.0;
}

inline void require_linear_rotor(const Basis& basis, const char* what) {
  if (basis.mode() != BasisMode::linear_rotor) {
    throw std::invalid_argument(std::string(what) + ": only the linear-rotor basis is supported");
  }
}

/// Real symmetric matrix of an angle operator over a linear-rotor basis.
inline Eigen::MatrixXd angle_operator(AngleKind kind, const Basis& basis) {
  require_linear_rotor(basis, "angle_operator");
  const auto n = static_cast<Eigen::Index>(basis.size());
  Eigen::MatrixXd op = Eigen::MatrixXd::Zero(n, n);
  for (Eigen::Index r = 0; r < n; ++r) {
    const auto& a = basis[static_cast<std::size_t>(r)];
    for (Eigen::Index c = 0; c < n; ++c) {
      const auto& b = basis[static_cast<std::size_t>(c)];
      if (std::abs(a.J - b.J) > 2 || std::abs(a.M - b.M) > 2) continue;
      op(r, c) = angle_element(kind, a.J, a.M, b.J, b.M);
    }
  }
  return op;
}

/// Lab-frame angular momentum component J_Y over a linear-rotor basis.
/// Purely imaginary and Hermitian.
inline Eigen::MatrixXcd angular_momentum_y(const Basis& basis) {
  require_linear_rotor(basis, "angular_momentum_y");
  const auto n = static_cast<Eigen::Index>(basis.size());
  Eigen::MatrixXcd jy = Eigen::MatrixXcd::Zero(n, n);
  for (std::size_t c = 0; c < basis.size(); ++c) {
    const auto [J, K, M] = basis[c];
    if (M + 1 > J) continue;
    const auto r = basis.index_of(J, M + 1);
    // <J,M+1| J+ |J,M>; J_Y = (J+ - J-) / 2i.
    const double jp = std::sqrt(static_cast<double>(J) * (J + 1) - static_cast<double>(M) * (M + 1));
    const std::complex<double> v(0.0, -0.5 * jp);
    jy(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) = v;
    jy(static_cast<Eigen::Index>(c), static_cast<Eigen::Index>(r)) = std::conj(v);
  }
  return jy;
}

/// Independent quadrature evaluation of <J' M'| f_kind |J M> using
/// std::sph_legendre spherical harmonics on a Gauss-Legendre x uniform
/// azimuth product grid. The grid is exact for these band-limited
/// integrands.
inline double quadrature_oracle(AngleKind kind, int jp, int mp, int j, int m) {
  if (jp < 0 || j < 0 || std::abs(mp) > jp || std::abs(m) > j) {
    throw std::invalid_argument("quadrature_oracle: invalid quantum numbers");
  }
  const int n_theta = (jp + j) / 2 + 4;
  const int n_phi = 2 * (jp + j) + 8;
  const auto gl = angular::gauss_legendre(n_theta);
  // Y_lm(theta, 0) for any sign of m.
  auto ytheta = [](int l, int mm, double theta) {
    const double v = std::sph_legendre(static_cast<unsigned>(l), static_cast<unsigned>(std::abs(mm)), theta);
    return (mm < 0 && (std::abs(mm) % 2)) ? -v : v;
  };
  std::complex<double> total = 0.0;
  for (std::size_t i = 0; i < gl.nodes.size(); ++i) {
    const double ct = gl.nodes[i];
    const double theta = std::acos(ct);
    const double st = std::sqrt(1.0 - ct * ct);
    const double radial = ytheta(jp, mp, theta) * ytheta(j, m, theta);
    for (int k = 0; k < n_phi; ++k) {
      const double phi = 2.0 * std::numbers::pi * k / n_phi;
      const double ux = st * std::cos(phi), uy = st * std::sin(phi), uz = ct;
      double f = 0.0;
      switch (kind) {
        case AngleKind::xx: f = ux * ux; break;
        case AngleKind::yy: f = uy * uy; break;
        case AngleKind::zz: f = uz * uz; break;
        case AngleKind::xz: f = ux * uz; break;
      }
      total += gl.weights[i] * (2.0 * std::numbers::pi / n_phi) * radial * f *
               std::polar(1.0, static_cast<double>(m - mp) * phi);
    }
  }
  return total.real();
}

/// Field-free energy of a basis state, cm^-1.
inline double state_energy(const BasisState& s, const RotorParams& p) { return prolate_energy(s.J, s.K, p); }

/// Boltzmann weights exp(-E/kT) over the basis, normalized to 1. At T = 0
/// the weight is shared equally by the lowest-energy states.
inline std::vector<double> thermal_weights(const Basis& basis, const RotorParams& p) {
  if (!(p.T >= 0.0)) throw std::invalid_argument("thermal_weights: T must be >= 0");
  std::vector<double> e(basis.size());
  for (std::size_t i = 0; i < basis.size(); ++i) e[i] = state_energy(basis[i], p);
  const double e_min = *std::min_element(e.begin(), e.end());
  const double kt = physkit::thermal_energy(p.T);
  std::vector<double> w(basis.size(), 0.0);
  for (std::size_t i = 0; i < basis.size(); ++i) {
    const double de = e[i] - e_min;
    if (kt == 0.0) {
      w[i] = de <= 1e-12 ? 1.0 : 0.0;
    } else {
      w[i] = std::exp(-de / kt);
    }
  }
  double sum = 0.0;
  for (double x : w) sum += x;
  for (double& x : w) x /= sum;
  return w;
}

}  // namespace centrifuge::rotor
