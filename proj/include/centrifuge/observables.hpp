#pragma once

// Alignment observables of the molecular axis distribution.
//
// Detection geometry: the imaging axis is lab Z, so fragments are projected
// onto the XY plane. The 2D angle theta_2D is measured from X (the trace of
// the centrifuge XZ plane on the detector), which makes
//   cos^2 theta_2D = u_x^2 / (u_x^2 + u_y^2) = cos^2 phi
// with phi the azimuth of the axis about Z.

#include <algorithm>
#include <cmath>
#include <complex>
#include <cstdint>
#include <numbers>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "centrifuge/angular.hpp"
#include "centrifuge/dynamics.hpp"
#include "centrifuge/field_synthesis.hpp"
#include "centrifuge/rotor_model.hpp"

namespace centrifuge::observables {

using cplx = std::complex<double>;

/// Number of Gauss-Legendre polar nodes used for a basis with this J_max.
inline int polar_nodes(int j_max) { return 2 * j_max + 2; }
/// Number of uniform azimuthal nodes used for a basis with this J_max.
inline int azimuth_nodes(int j_max) { return 4 * j_max + 4; }

/// Matrix of cos^2 theta_2D over a linear-rotor basis:
///   G_nm = <n| cos^2 phi |m>.
/// The azimuthal integral is done in closed form; the polar integrand is a
/// polynomial in cos(theta) of degree <= 2 J_max, integrated exactly by
/// Gauss-Legendre nodes that avoid the poles.
inline Eigen::MatrixXd cos2_2d_matrix(const rotor::Basis& basis) {
  rotor::require_linear_rotor(basis, "cos2_2d_matrix");
  const int j_max = basis.j_max();
  const auto gl = angular::gauss_legendre(polar_nodes(j_max));
  const auto n = static_cast<Eigen::Index>(basis.size());
  Eigen::MatrixXd theta(static_cast<Eigen::Index>(gl.nodes.size()), n);
  angular::LegendreTable table(j_max);
  for (std::size_t i = 0; i < gl.nodes.size(); ++i) {
    table.evaluate(gl.nodes[i]);
    for (Eigen::Index k = 0; k < n; ++k) {
      const auto& s = basis[static_cast<std::size_t>(k)];
      theta(static_cast<Eigen::Index>(i), k) = table.value(s.J, s.M);
    }
  }
  const Eigen::Map<const Eigen::VectorXd> w(gl.weights.data(), static_cast<Eigen::Index>(gl.weights.size()));
  Eigen::MatrixXd g = Eigen::MatrixXd::Zero(n, n);
  for (Eigen::Index r = 0; r < n; ++r) {
    for (Eigen::Index c = 0; c < n; ++c) {
      const int dm = basis[static_cast<std::size_t>(r)].M - basis[static_cast<std::size_t>(c)].M;
      // int_0^{2pi} exp(-i dm phi) cos^2 phi dphi
      double azimuth = 0.0;
      if (dm == 0) azimuth = std::numbers::pi;
      else if (std::abs(dm) == 2) azimuth = 0.5 * std::numbers::pi;
      else continue;
      g(r, c) = azimuth * (theta.col(r).cwiseProduct(theta.col(c))).dot(w);
    }
  }
  return g;
}

/// Exact <cos^2 theta_2D> of a density matrix.
inline double cos2theta_2d_exact(const Eigen::MatrixXd& g, const Eigen::MatrixXcd& rho) {
  if (g.rows() != rho.rows()) throw std::invalid_argument("cos2theta_2d_exact: dimension mismatch");
  // Tr(rho G) with G real symmetric.
  return (rho.real().cwiseProduct(g)).sum();
}

inline double cos2theta_2d_exact(const Eigen::MatrixXd& g, const Eigen::VectorXcd& psi) {
  if (g.rows() != psi.size()) throw std::invalid_argument("cos2theta_2d_exact: dimension mismatch");
  return (psi.adjoint() * g * psi)(0, 0).real();
}

// ---------------------------------------------------------------------------

/// Probability density of the molecular axis on the unit sphere, kept both on
/// the product quadrature grid and as a real spherical-harmonic expansion of
/// order 2 J_max for evaluation at arbitrary directions.
class AxisDistribution {
 public:
  AxisDistribution(const rotor::Basis& basis, const Eigen::MatrixXcd& rho) { build(basis, rho); }
  AxisDistribution(const rotor::Basis& basis, const Eigen::VectorXcd& psi) {
    build(basis, psi * psi.adjoint());
  }

  int order() const { return lmax_; }
  const std::vector<double>& polar_nodes() const { return gl_.nodes; }
  const std::vector<double>& polar_weights() const { return gl_.weights; }
  int azimuth_count() const { return n_phi_; }

  /// Density on grid node (polar i, azimuth k), azimuth = 2 pi k / n_phi.
  double grid_value(std::size_t i, int k) const {
    return grid_[i * static_cast<std::size_t>(n_phi_) + static_cast<std::size_t>(k)];
  }

  /// Quadrature of f(u_x, u_y, u_z) * density over the sphere.
  template <typename F>
  double integrate(F&& f) const {
    double total = 0.0;
    const double dphi = 2.0 * std::numbers::pi / n_phi_;
    for (std::size_t i = 0; i < gl_.nodes.size(); ++i) {
      const double ct = gl_.nodes[i];
      const double st = std::sqrt(1.0 - ct * ct);
      for (int k = 0; k < n_phi_; ++k) {
        const double phi = dphi * k;
        total += gl_.weights[i] * dphi * grid_value(i, k) * f(st * std::cos(phi), st * std::sin(phi), ct);
      }
    }
    return total;
  }

  double total() const {
    return integrate([](double, double, double) { return 1.0; });
  }

  double min_grid_value() const { return *std::min_element(grid_.begin(), grid_.end()); }
  double max_grid_value() const { return *std::max_element(grid_.begin(), grid_.end()); }

  /// Density at polar cosine x and azimuth phi from the expansion.
  double value(double x, double phi) const {
    angular::LegendreTable scratch(lmax_);
    return value(x, phi, scratch);
  }

  /// Same, reusing a caller-owned table of order order().
  double value(double x, double phi, angular::LegendreTable& scratch) const {
    scratch.evaluate(x);
    double out = 0.0;
    for (int m = 0; m <= lmax_; ++m) {
      const cplx e = std::polar(1.0, m * phi);
      for (int l = m; l <= lmax_; ++l) {
        const cplx c = coeff_[coeff_index(l, m)];
        const double y = scratch.value(l, m);
        out += (m == 0 ? 1.0 : 2.0) * (c * e).real() * y;
      }
    }
    return out;
  }

  /// Upper bound on the density for rejection sampling, from an oversampled
  /// grid with a safety margin.
  double sampling_bound() const { return bound_; }

 private:
  static std::size_t coeff_index(int l, int m) { return static_cast<std::size_t>(l * (l + 1) / 2 + m); }

  void build(const rotor::Basis& basis, const Eigen::MatrixXcd& rho) {
    rotor::require_linear_rotor(basis, "AxisDistribution");
    if (rho.rows() != static_cast<Eigen::Index>(basis.size()) || rho.cols() != rho.rows()) {
      throw std::invalid_argument("AxisDistribution: density dimension does not match the basis");
    }
    const int j_max = basis.j_max();
    lmax_ = 2 * j_max;
    n_phi_ = azimuth_nodes(j_max);
    gl_ = angular::gauss_legendre(observables::polar_nodes(j_max));
    angular::LegendreTable table(lmax_);

    const auto n = static_cast<Eigen::Index>(basis.size());
    // Pairs (r, c) of nonzero density entries grouped by M_r - M_c.
    const int dm_max = 2 * j_max;
    std::vector<cplx> g(static_cast<std::size_t>(2 * dm_max + 1));
    grid_.assign(gl_.nodes.size() * static_cast<std::size_t>(n_phi_), 0.0);
    coeff_.assign(coeff_index(lmax_, lmax_) + 1, cplx(0.0));
    angular::LegendreTable basis_table(j_max);
    Eigen::VectorXd theta(n);

    for (std::size_t i = 0; i < gl_.nodes.size(); ++i) {
      basis_table.evaluate(gl_.nodes[i]);
      for (Eigen::Index k = 0; k < n; ++k) {
        const auto& s = basis[static_cast<std::size_t>(k)];
        theta(k) = basis_table.value(s.J, s.M);
      }
      std::fill(g.begin(), g.end(), cplx(0.0));
      for (Eigen::Index c = 0; c < n; ++c) {
        const int mc = basis[static_cast<std::size_t>(c)].M;
        for (Eigen::Index r = 0; r < n; ++r) {
          const cplx v = rho(r, c);
          if (v == cplx(0.0)) continue;
          const int dm = basis[static_cast<std::size_t>(r)].M - mc;
          g[static_cast<std::size_t>(dm + dm_max)] += v * theta(r) * theta(c);
        }
      }
      // density(theta_i, phi) = sum_dm g(dm) exp(i dm phi)
      for (int k = 0; k < n_phi_; ++k) {
        const double phi = 2.0 * std::numbers::pi * k / n_phi_;
        double v = g[static_cast<std::size_t>(dm_max)].real();
        for (int dm = 1; dm <= dm_max; ++dm) {
          v += 2.0 * (g[static_cast<std::size_t>(dm + dm_max)] * std::polar(1.0, dm * phi)).real();
        }
        grid_[i * static_cast<std::size_t>(n_phi_) + static_cast<std::size_t>(k)] = v;
      }
      // Projection onto Y_lm, m >= 0: c_lm = 2 pi int Theta_lm(x) g(m; x) dx.
      table.evaluate(gl_.nodes[i]);
      for (int m = 0; m <= std::min(dm_max, lmax_); ++m) {
        for (int l = m; l <= lmax_; ++l) {
          coeff_[coeff_index(l, m)] +=
              2.0 * std::numbers::pi * gl_.weights[i] * table.value(l, m) * g[static_cast<std::size_t>(m + dm_max)];
        }
      }
    }

    // Oversampled maximum for the rejection bound.
    const int fine_theta = 4 * (j_max + 1) + 2;
    const int fine_phi = 2 * n_phi_;
    double peak = 0.0;
    for (int i = 0; i < fine_theta; ++i) {
      const double x = std::cos(std::numbers::pi * (i + 0.5) / fine_theta);
      for (int k = 0; k < fine_phi; ++k) {
        peak = std::max(peak, value(x, 2.0 * std::numbers::pi * k / fine_phi, table));
      }
    }
    peak = std::max(peak, max_grid_value());
    bound_ = 1.2 * peak + 1e-12;
  }

  int lmax_ = 0;
  int n_phi_ = 0;
  angular::GaussLegendre gl_;
  std::vector<double> grid_;
  std::vector<cplx> coeff_;
  double bound_ = 0.0;
};

/// <cos^2 theta_2D> by quadrature over the axis distribution. Agrees with
/// cos2theta_2d_exact; kept as an independent route.
inline double cos2theta_2d_quadrature(const AxisDistribution& dist) {
  return dist.integrate([](double ux, double uy, double) {
    const double r2 = ux * ux + uy * uy;
    return r2 > 0.0 ? ux * ux / r2 : 0.5;
  });
}

// ---------------------------------------------------------------------------

struct SampledValue {
  double value = 0.0;
  double std_error = 0.0;
  std::size_t n = 0;
  std::size_t proposals = 0;
  std::size_t bound_violations = 0;
};

struct SamplerOptions {
  double min_radius = 0.0;               // optional projected-radius gate
  std::size_t max_proposals_per_ion = 100000;
};

namespace detail {

/// Uniform double in [0, 1) from the top 53 bits of a 64-bit draw.
inline double uniform01(std::mt19937_64& rng) { return static_cast<double>(rng() >> 11) * 0x1.0p-53; }

}  // namespace detail

/// Monte Carlo <cos^2 theta_2D> emulating ion counting: axes drawn from the
/// distribution by rejection sampling, perfect axial recoil, projection onto
/// the detector (XY) plane. Both fragments of an axis share the same
/// cos^2 theta_2D, so each axis counts once.
inline SampledValue cos2theta_2d_sampled(const AxisDistribution& dist, std::size_t n_ions, std::uint64_t seed,
                                         const SamplerOptions& opt = {}) {
  if (n_ions < 1) throw std::invalid_argument("cos2theta_2d_sampled: n_ions must be >= 1");
  std::mt19937_64 rng(seed);
  angular::LegendreTable scratch(dist.order());
  const double bound = dist.sampling_bound();
  const double min_r = std::max(1e-9, opt.min_radius);
  SampledValue out;
  double sum = 0.0, sum_sq = 0.0;
  const std::size_t limit = opt.max_proposals_per_ion * n_ions;
  while (out.n < n_ions) {
    if (out.proposals >= limit) {
      throw std::runtime_error("cos2theta_2d_sampled: rejection loop exceeded its proposal limit");
    }
    ++out.proposals;
    const double x = 2.0 * detail::uniform01(rng) - 1.0;
    const double phi = 2.0 * std::numbers::pi * detail::uniform01(rng);
    const double u = detail::uniform01(rng) * bound;
    const double density = dist.value(x, phi, scratch);
    if (density > bound) ++out.bound_violations;
    if (u >= density) continue;
    const double st = std::sqrt(std::max(0.0, 1.0 - x * x));
    const double vx = st * std::cos(phi), vy = st * std::sin(phi);
    const double r2 = vx * vx + vy * vy;
    if (r2 < min_r * min_r) continue;
    const double c2 = vx * vx / r2;
    sum += c2;
    sum_sq += c2 * c2;
    ++out.n;
  }
  const double n = static_cast<double>(out.n);
  out.value = sum / n;
  const double var = out.n > 1 ? std::max(0.0, (sum_sq - n * out.value * out.value) / (n - 1.0)) : 0.0;
  out.std_error = std::sqrt(var / n);
  return out;
}

// ---------------------------------------------------------------------------

/// <(e(t).u)^2> along the instantaneous field polarization, from the angle
/// operators.
inline double cos2_3d_field(const dynamics::AngleOperators& ops, const Eigen::MatrixXcd& rho,
                            const field::FieldWaveform& field, double t) {
  const double phi = field::polarization_angle(field, t);
  const double c = std::cos(phi), s = std::sin(phi);
  const auto expect = [&](const Eigen::MatrixXd& op) { return (rho.real().cwiseProduct(op)).sum(); };
  return c * c * expect(ops.xx) + s * s * expect(ops.zz) + 2.0 * s * c * expect(ops.xz);
}

/// Same quantity by quadrature over the axis distribution.
inline double cos2_3d_field_quadrature(const AxisDistribution& dist, const field::FieldWaveform& field, double t) {
  const double phi = field::polarization_angle(field, t);
  const double ex = std::cos(phi), ez = std::sin(phi);
  return dist.integrate([&](double ux, double, double uz) {
    const double d = ex * ux + ez * uz;
    return d * d;
  });
}

/// (delay, value, standard error) triples; scans reuse it with frequencies
/// in the delay column.
struct AlignmentTrace {
  std::vector<double> delays;
  std::vector<double> values;
  std::vector<double> stderrs;

  std::size_t size() const { return delays.size(); }

  void push_back(double delay, double value, double err) {
    delays.push_back(delay);
    values.push_back(value);
    stderrs.push_back(err);
  }

  void validate() const {
    if (values.size() != delays.size() || stderrs.size() != delays.size())
      throw std::invalid_argument("trace: column lengths differ");
    for (std::size_t i = 0; i < delays.size(); ++i) {
      if (!std::isfinite(delays[i]) || !std::isfinite(values[i]) || !(stderrs[i] >= 0.0))
        throw std::invalid_argument("trace: non-finite entry or negative stderr at row " + std::to_string(i));
      if (i > 0 && !(delays[i] > delays[i - 1]))
        throw std::invalid_argument("trace: delays must be strictly ascending");
    }
  }
};

/// Precomputed observable matrices for a basis.
class Detector {
 public:
  explicit Detector(const dynamics::RotorSystem& sys) : sys_(&sys), g_(cos2_2d_matrix(sys.basis())) {}

  const Eigen::MatrixXd& cos2_2d() const { return g_; }

  double exact(const Eigen::MatrixXcd& rho) const { return cos2theta_2d_exact(g_, rho); }
  double exact(const Eigen::VectorXcd& psi) const { return cos2theta_2d_exact(g_, psi); }

  SampledValue sampled(const Eigen::MatrixXcd& rho, std::size_t n_ions, std::uint64_t seed,
                       const SamplerOptions& opt = {}) const {
    return cos2theta_2d_sampled(AxisDistribution(sys_->basis(), rho), n_ions, seed, opt);
  }

 private:
  const dynamics::RotorSystem* sys_;
  Eigen::MatrixXd g_;
};

}  // namespace centrifuge::observables
