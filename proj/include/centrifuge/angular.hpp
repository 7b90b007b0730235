#pragma once

// Angular-momentum helpers: Wigner 3j symbols, Racah-normalized spherical
// tensor matrix elements, normalized associated Legendre functions and
// Gauss-Legendre nodes.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdlib>
#include <numbers>
#include <utility>
#include <stdexcept>
#include <vector>

namespace centrifuge::angular {

namespace detail {

inline double factorial(int n) {
  static const std::array<double, 171> table = [] {
    std::array<double, 171> t{};
    t[0] = 1.0;
    for (int i = 1; i < 171; ++i) t[i] = t[i - 1] * i;
    return t;
  }();
  if (n < 0 || n > 170) throw std::out_of_range("factorial argument out of range");
  return table[static_cast<std::size_t>(n)];
}

}  // namespace detail

/// Wigner 3j symbol (j1 j2 j3; m1 m2 m3) for integer arguments, via the
/// Racah formula.
inline double wigner_3j(int j1, int j2, int j3, int m1, int m2, int m3) {
  using detail::factorial;
  if (m1 + m2 + m3 != 0) return 0.0;
  if (j1 < 0 || j2 < 0 || j3 < 0) return 0.0;
  if (std::abs(m1) > j1 || std::abs(m2) > j2 || std::abs(m3) > j3) return 0.0;
  if (j3 < std::abs(j1 - j2) || j3 > j1 + j2) return 0.0;

  const int kmin = std::max({0, j2 - j3 - m1, j1 - j3 + m2});
  const int kmax = std::min({j1 + j2 - j3, j1 - m1, j2 + m2});
  double sum = 0.0;
  for (int k = kmin; k <= kmax; ++k) {
    const double den = factorial(k) * factorial(j1 + j2 - j3 - k) * factorial(j1 - m1 - k) *
                       factorial(j2 + m2 - k) * factorial(j3 - j2 + m1 + k) *
                       factorial(j3 - j1 - m2 + k);
    sum += ((k % 2) ? -1.0 : 1.0) / den;
  }
  const double triangle = factorial(j1 + j2 - j3) * factorial(j1 - j2 + j3) *
                          factorial(-j1 + j2 + j3) / factorial(j1 + j2 + j3 + 1);
  const double pre = std::sqrt(triangle * factorial(j1 + m1) * factorial(j1 - m1) *
                               factorial(j2 + m2) * factorial(j2 - m2) * factorial(j3 + m3) *
                               factorial(j3 - m3));
  const int phase = j1 - j2 - m3;
  return ((phase % 2) ? -1.0 : 1.0) * pre * sum;
}

/// <J' M'| C^k_q |J M> for the Racah-normalized spherical harmonic
/// C^k_q = sqrt(4 pi / (2k+1)) Y_kq, with Condon-Shortley phases.
inline double racah_element(int jp, int mp, int k, int q, int j, int m) {
  if (mp != m + q) return 0.0;
  const double reduced = std::sqrt((2.0 * jp + 1.0) * (2.0 * j + 1.0)) * wigner_3j(jp, k, j, 0, 0, 0);
  if (reduced == 0.0) return 0.0;
  const double sign = (mp % 2) ? -1.0 : 1.0;
  return sign * reduced * wigner_3j(jp, k, j, -mp, q, m);
}

/// Gauss-Legendre nodes and weights on [-1, 1], nodes ascending.
struct GaussLegendre {
  std::vector<double> nodes;
  std::vector<double> weights;
};

inline GaussLegendre gauss_legendre(int n) {
  if (n < 1) throw std::invalid_argument("gauss_legendre: n must be >= 1");
  // Returns (P_n(x), P_n'(x)).
  auto legendre = [n](double x) {
    double p0 = 1.0, p1 = x;
    for (int l = 2; l <= n; ++l) {
      const double p2 = ((2.0 * l - 1.0) * x * p1 - (l - 1.0) * p0) / l;
      p0 = p1;
      p1 = p2;
    }
    return std::pair{p1, n * (x * p1 - p0) / (x * x - 1.0)};
  };
  GaussLegendre gl;
  gl.nodes.assign(static_cast<std::size_t>(n), 0.0);
  gl.weights.assign(static_cast<std::size_t>(n), 0.0);
  for (int i = 0; i < (n + 1) / 2; ++i) {
    double x = std::cos(std::numbers::pi * (i + 0.75) / (n + 0.5));
    for (int iter = 0; iter < 100; ++iter) {
      const auto [p, dp] = legendre(x);
      const double dx = p / dp;
      x -= dx;
      if (std::abs(dx) < 1e-16) break;
    }
    const double dp = legendre(x).second;
    const double w = 2.0 / ((1.0 - x * x) * dp * dp);
    const auto lo = static_cast<std::size_t>(i);
    const auto hi = static_cast<std::size_t>(n - 1 - i);
    gl.nodes[lo] = -x;
    gl.nodes[hi] = x;
    gl.weights[lo] = w;
    gl.weights[hi] = w;
  }
  if (n % 2 == 1) gl.nodes[static_cast<std::size_t>(n / 2)] = 0.0;
  return gl;
}

/// Table of theta-parts of the spherical harmonics,
/// Y_lm(theta, phi) = value(l, m) * exp(i m phi), for 0 <= m <= l <= lmax
/// evaluated at x = cos(theta). Includes the Condon-Shortley phase.
class LegendreTable {
 public:
  explicit LegendreTable(int lmax) : lmax_(lmax), values_(size(lmax), 0.0) {}

  void evaluate(double x) {
    const double s = std::sqrt(std::max(0.0, 1.0 - x * x));
    // Y_mm by the sectoral recurrence.
    at(0, 0) = 1.0 / std::sqrt(4.0 * std::numbers::pi);
    for (int m = 1; m <= lmax_; ++m) {
      at(m, m) = -std::sqrt((2.0 * m + 1.0) / (2.0 * m)) * s * at(m - 1, m - 1);
    }
    for (int m = 0; m <= lmax_; ++m) {
      if (m + 1 <= lmax_) at(m + 1, m) = std::sqrt(2.0 * m + 3.0) * x * at(m, m);
      for (int l = m + 2; l <= lmax_; ++l) {
        const double a = std::sqrt((4.0 * l * l - 1.0) / (static_cast<double>(l) * l - m * m));
        const double b = std::sqrt(((l - 1.0) * (l - 1.0) - m * m) / (4.0 * (l - 1.0) * (l - 1.0) - 1.0));
        at(l, m) = a * (x * at(l - 1, m) - b * at(l - 2, m));
      }
    }
  }

  /// Theta part for any m in [-l, l].
  double value(int l, int m) const {
    if (m >= 0) return values_[index(l, m)];
    const double v = values_[index(l, -m)];
    return ((-m) % 2) ? -v : v;
  }

  int lmax() const { return lmax_; }

 private:
  static std::size_t size(int lmax) {
    return static_cast<std::size_t>((lmax + 1) * (lmax + 2) / 2);
  }
  static std::size_t index(int l, int m) { return static_cast<std::size_t>(l * (l + 1) / 2 + m); }
  double& at(int l, int m) { return values_[index(l, m)]; }

  int lmax_;
  std::vector<double> values_;
};

}  // namespace centrifuge::angular
