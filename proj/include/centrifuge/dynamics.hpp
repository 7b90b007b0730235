#pragma once

// Rotor dynamics in the centrifuge field and field-free relaxation.
//
// Units: energies in cm^-1, times in ps. The Schroedinger equation
// i dpsi/dt = H psi is solved with H in rad/ps.
//
// In-field interaction (cycle averaged, isotropic part dropped):
//   V(t) = -U0 env(t) (e(t).u)^2,   e(t) = (cos phi, 0, sin phi).
// Rotating frame: psi = exp(i phi J_Y) chi with
//   i dchi/dt = [H0 + env V(phi = 0) + phi' J_Y] chi.

#include <algorithm>
#include <cmath>
#include <complex>
#include <limits>
#include <optional>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "centrifuge/field_synthesis.hpp"
#include "centrifuge/parallel.hpp"
#include "centrifuge/physkit.hpp"
#include "centrifuge/rotor_model.hpp"

namespace centrifuge::dynamics {

using cplx = std::complex<double>;

class PropagationError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct QuantumState {
  Eigen::VectorXcd amplitudes;
  double time = 0.0;

  double norm() const { return amplitudes.norm(); }
};

struct PropagationParams {
  double dt = 0.05;  // ps
  double u0 = 4.6;   // peak well depth, cm^-1
};

/// The three angle operators the interaction is built from.
struct AngleOperators {
  Eigen::MatrixXd xx;
  Eigen::MatrixXd zz;
  Eigen::MatrixXd xz;
};

namespace detail {

/// CSR matrix over the union sparsity pattern of H0, the angle operators and
/// J_Y, keeping each component's entries separately so the generator at a
/// given time is a cheap linear combination.
class SparseGenerator {
 public:
  SparseGenerator() = default;

  SparseGenerator(const Eigen::VectorXd& energies, const AngleOperators& ops, const Eigen::MatrixXcd& jy) {
    const auto n = energies.size();
    row_ptr_.push_back(0);
    for (Eigen::Index r = 0; r < n; ++r) {
      for (Eigen::Index c = 0; c < n; ++c) {
        const bool diag = r == c;
        if (!diag && ops.xx(r, c) == 0.0 && ops.zz(r, c) == 0.0 && ops.xz(r, c) == 0.0 && jy(r, c) == cplx(0.0))
          continue;
        col_.push_back(static_cast<int>(c));
        e_.push_back(diag ? energies(r) : 0.0);
        xx_.push_back(ops.xx(r, c));
        zz_.push_back(ops.zz(r, c));
        xz_.push_back(ops.xz(r, c));
        jy_im_.push_back(jy(r, c).imag());
      }
      row_ptr_.push_back(col_.size());
    }
  }

  std::size_t rows() const { return row_ptr_.empty() ? 0 : row_ptr_.size() - 1; }
  std::size_t nonzeros() const { return col_.size(); }

  /// Values of k (E + a_xx XX + a_zz ZZ + a_xz XZ) + b J_Y, where k converts
  /// cm^-1 to rad/ps and b is in rad/ps.
  void assemble(double a_xx, double a_zz, double a_xz, double b, std::vector<cplx>& out) const {
    const double k = physkit::wavenumber_to_rad_per_ps(1.0);
    out.resize(col_.size());
    for (std::size_t i = 0; i < col_.size(); ++i) {
      const double re = k * (e_[i] + a_xx * xx_[i] + a_zz * zz_[i] + a_xz * xz_[i]);
      out[i] = cplx(re, b * jy_im_[i]);
    }
  }

  void multiply(const std::vector<cplx>& vals, const Eigen::VectorXcd& x, Eigen::VectorXcd& y) const {
    const std::size_t n = rows();
    for (std::size_t r = 0; r < n; ++r) {
      cplx acc = 0.0;
      for (std::size_t i = row_ptr_[r]; i < row_ptr_[r + 1]; ++i) acc += vals[i] * x(col_[i]);
      y(static_cast<Eigen::Index>(r)) = acc;
    }
  }

  /// Maximum absolute row sum (induced infinity norm).
  double norm_inf(const std::vector<cplx>& vals) const {
    double best = 0.0;
    for (std::size_t r = 0; r + 1 < row_ptr_.size(); ++r) {
      double s = 0.0;
      for (std::size_t i = row_ptr_[r]; i < row_ptr_[r + 1]; ++i) s += std::abs(vals[i]);
      best = std::max(best, s);
    }
    return best;
  }

 private:
  std::vector<std::size_t> row_ptr_;
  std::vector<int> col_;
  std::vector<double> e_, xx_, zz_, xz_, jy_im_;
};

struct StepWorkspace {
  std::vector<cplx> vals;
  Eigen::VectorXcd term, next, sum;
};

/// psi <- exp(-i H h) psi by a Taylor series, with substepping so that each
/// substep has |H| h <= 1. Returns the number of substeps used.
inline int expm_apply(const SparseGenerator& gen, StepWorkspace& ws, Eigen::VectorXcd& psi, double h) {
  const double norm_h = gen.norm_inf(ws.vals) * std::abs(h);
  const int substeps = std::max(1, static_cast<int>(std::ceil(norm_h)));
  const double hs = h / substeps;
  ws.term.resize(psi.size());
  ws.next.resize(psi.size());
  for (int s = 0; s < substeps; ++s) {
    ws.term = psi;
    ws.sum = psi;
    bool converged = false;
    for (int k = 1; k <= 40; ++k) {
      gen.multiply(ws.vals, ws.term, ws.next);
      ws.term = ws.next * cplx(0.0, -hs / k);
      ws.sum += ws.term;
      if (ws.term.squaredNorm() < 1e-36 * std::max(1.0, ws.sum.squaredNorm())) {
        converged = true;
        break;
      }
    }
    if (!converged) {
      std::ostringstream msg;
      msg << "Taylor propagator did not converge (|H| h = " << norm_h / substeps << ")";
      throw PropagationError(msg.str());
    }
    psi = ws.sum;
  }
  return substeps;
}

}  // namespace detail

/// Basis, field-free energies and operator matrices for one rotor. Immutable
/// after construction and shareable across threads.
class RotorSystem {
 public:
  RotorSystem(int j_max, rotor::RotorParams params) : basis_(j_max), params_(params) {
    params_.validate();
    const auto n = static_cast<Eigen::Index>(basis_.size());
    energies_.resize(n);
    for (Eigen::Index i = 0; i < n; ++i) {
      energies_(i) = rotor::state_energy(basis_[static_cast<std::size_t>(i)], params_);
    }
    ops_.xx = rotor::angle_operator(rotor::AngleKind::xx, basis_);
    ops_.zz = rotor::angle_operator(rotor::AngleKind::zz, basis_);
    ops_.xz = rotor::angle_operator(rotor::AngleKind::xz, basis_);
    jy_ = rotor::angular_momentum_y(basis_);
    generator_ = detail::SparseGenerator(energies_, ops_, jy_);

    // J_Y is block diagonal in J; diagonalize block by block.
    for (int j = 0; j <= j_max; ++j) {
      const auto start = static_cast<Eigen::Index>(basis_.index_of(j, -j));
      const Eigen::Index len = 2 * j + 1;
      Eigen::SelfAdjointEigenSolver<Eigen::MatrixXcd> es(jy_.block(start, start, len, len));
      jy_blocks_.push_back({start, es.eigenvectors(), es.eigenvalues()});
    }
  }

  const rotor::Basis& basis() const { return basis_; }
  const rotor::RotorParams& params() const { return params_; }
  std::size_t size() const { return basis_.size(); }
  int j_max() const { return basis_.j_max(); }
  const Eigen::VectorXd& energies() const { return energies_; }
  const AngleOperators& operators() const { return ops_; }
  const Eigen::MatrixXcd& jy() const { return jy_; }
  const detail::SparseGenerator& generator() const { return generator_; }

  /// psi <- exp(i angle J_Y) psi, the rotation taking the X axis to
  /// (cos angle, 0, sin angle).
  void rotate(Eigen::VectorXcd& psi, double angle) const {
    for (const auto& b : jy_blocks_) {
      const Eigen::Index len = b.values.size();
      Eigen::VectorXcd c = b.vectors.adjoint() * psi.segment(b.start, len);
      for (Eigen::Index i = 0; i < len; ++i) c(i) *= std::polar(1.0, angle * b.values(i));
      psi.segment(b.start, len) = b.vectors * c;
    }
  }

  /// Exact field-free evolution over dt.
  void free_evolve(Eigen::VectorXcd& psi, double dt) const {
    for (Eigen::Index i = 0; i < psi.size(); ++i) {
      psi(i) *= std::polar(1.0, -physkit::wavenumber_to_rad_per_ps(energies_(i)) * dt);
    }
  }

  QuantumState basis_state(int J, int M, double time = 0.0) const {
    QuantumState s;
    s.amplitudes = Eigen::VectorXcd::Zero(static_cast<Eigen::Index>(size()));
    s.amplitudes(static_cast<Eigen::Index>(basis_.index_of(J, M))) = 1.0;
    s.time = time;
    return s;
  }

 private:
  struct JyBlock {
    Eigen::Index start;
    Eigen::MatrixXcd vectors;
    Eigen::VectorXd values;
  };

  rotor::Basis basis_;
  rotor::RotorParams params_;
  Eigen::VectorXd energies_;
  AngleOperators ops_;
  Eigen::MatrixXcd jy_;
  detail::SparseGenerator generator_;
  std::vector<JyBlock> jy_blocks_;
};

/// Dense interaction matrix V(t) in cm^-1.
inline Eigen::MatrixXd interaction_matrix(const field::FieldWaveform& field, double t, double u0_peak,
                                          const AngleOperators& ops) {
  if (ops.xx.rows() != ops.zz.rows() || ops.xx.rows() != ops.xz.rows() || ops.xx.rows() != ops.xx.cols() ||
      ops.zz.rows() != ops.zz.cols() || ops.xz.rows() != ops.xz.cols()) {
    throw std::invalid_argument("interaction_matrix: operator dimensions do not match");
  }
  const double env = field.normalized_envelope(t);
  const double phi = field::polarization_angle(field, t);
  const double c = std::cos(phi), s = std::sin(phi);
  return -u0_peak * env * (c * c * ops.xx + s * s * ops.zz + 2.0 * s * c * ops.xz);
}

namespace detail {

inline void check_grid(const QuantumState& initial, std::span<const double> t_grid) {
  for (std::size_t i = 0; i < t_grid.size(); ++i) {
    if (!std::isfinite(t_grid[i])) throw std::invalid_argument("time grid must be finite");
    if (i > 0 && t_grid[i] < t_grid[i - 1]) throw std::invalid_argument("time grid must be ascending");
  }
  if (!t_grid.empty() && t_grid.front() < initial.time) {
    throw std::invalid_argument("time grid starts before the initial state");
  }
  if (std::abs(initial.norm() - 1.0) > 1e-9) throw std::invalid_argument("initial state is not normalized");
}

inline bool field_active(const field::FieldWaveform& field, const PropagationParams& pp, double a, double b) {
  if (pp.u0 == 0.0 || field.envelope.peak_intensity == 0.0) return false;
  return b > field.envelope.start() && a < field.envelope.end();
}

/// Splits [a, b] at the envelope support boundaries.
inline std::vector<double> segment_points(const field::FieldWaveform& field, double a, double b) {
  std::vector<double> pts{a};
  for (double edge : {field.envelope.start(), field.envelope.end()}) {
    if (edge > a && edge < b) pts.push_back(edge);
  }
  pts.push_back(b);
  return pts;
}

inline void check_norm(const Eigen::VectorXcd& psi, const PropagationParams& pp, double t) {
  const double drift = std::abs(psi.norm() - 1.0);
  if (drift > 1e-9 || !std::isfinite(drift)) {
    std::ostringstream msg;
    msg << "propagation lost unitarity: norm drift " << drift << " at t = " << t << " ps with dt = " << pp.dt
        << " ps; reduce dt";
    throw PropagationError(msg.str());
  }
}

}  // namespace detail

/// Lab-frame propagation with a uniform-step midpoint exponential integrator.
/// Returns the state at each time in t_grid.
inline std::vector<QuantumState> propagate(const RotorSystem& sys, const QuantumState& initial,
                                           const field::FieldWaveform& field, std::span<const double> t_grid,
                                           const PropagationParams& pp) {
  detail::check_grid(initial, t_grid);
  if (!(pp.dt > 0.0)) throw std::invalid_argument("propagate: dt must be > 0");
  if (initial.amplitudes.size() != static_cast<Eigen::Index>(sys.size()))
    throw std::invalid_argument("propagate: state dimension does not match the basis");

  const auto& gen = sys.generator();
  detail::StepWorkspace ws;
  Eigen::VectorXcd psi = initial.amplitudes;
  double t = initial.time;
  std::vector<QuantumState> out;
  out.reserve(t_grid.size());

  for (double target : t_grid) {
    const auto pts = detail::segment_points(field, t, target);
    for (std::size_t s = 0; s + 1 < pts.size(); ++s) {
      const double a = pts[s], b = pts[s + 1];
      if (b <= a) continue;
      if (!detail::field_active(field, pp, a, b)) {
        sys.free_evolve(psi, b - a);
        continue;
      }
      const auto n = static_cast<long>(std::ceil((b - a) / pp.dt - 1e-9));
      const double h = (b - a) / static_cast<double>(n);
      for (long k = 0; k < n; ++k) {
        const double tm = a + (static_cast<double>(k) + 0.5) * h;
        const double depth = pp.u0 * field.normalized_envelope(tm);
        const double phi = field::polarization_angle(field, tm);
        const double c = std::cos(phi), sn = std::sin(phi);
        gen.assemble(-depth * c * c, -depth * sn * sn, -depth * 2.0 * sn * c, 0.0, ws.vals);
        detail::expm_apply(gen, ws, psi, h);
      }
    }
    t = target;
    detail::check_norm(psi, pp, t);
    out.push_back({psi, t});
  }
  return out;
}

/// Cross-check propagator in the frame co-rotating with a constant-frequency
/// field. Field-free stretches are evolved exactly in the lab frame.
inline std::vector<QuantumState> propagate_rotating_frame(const RotorSystem& sys, const QuantumState& initial,
                                                          const field::FieldWaveform& field,
                                                          std::span<const double> t_grid,
                                                          const PropagationParams& pp) {
  if (field.drift_rate != 0.0) {
    throw std::invalid_argument("propagate_rotating_frame requires a constant rotation frequency (drift_rate = 0)");
  }
  detail::check_grid(initial, t_grid);
  if (!(pp.dt > 0.0)) throw std::invalid_argument("propagate_rotating_frame: dt must be > 0");

  const auto& gen = sys.generator();
  const double omega = field::polarization_angular_velocity(field, field.envelope.center);
  detail::StepWorkspace ws;
  Eigen::VectorXcd psi = initial.amplitudes;
  double t = initial.time;
  std::vector<QuantumState> out;
  out.reserve(t_grid.size());

  auto to_frame = [&](Eigen::VectorXcd& v, double at, double sign) {
    const double phi = field::polarization_angle(field, at);
    if (phi != 0.0) sys.rotate(v, sign * phi);
  };

  for (double target : t_grid) {
    const auto pts = detail::segment_points(field, t, target);
    for (std::size_t s = 0; s + 1 < pts.size(); ++s) {
      const double a = pts[s], b = pts[s + 1];
      if (b <= a) continue;
      if (!detail::field_active(field, pp, a, b)) {
        sys.free_evolve(psi, b - a);
        continue;
      }
      to_frame(psi, a, -1.0);
      const auto n = static_cast<long>(std::ceil((b - a) / pp.dt - 1e-9));
      const double h = (b - a) / static_cast<double>(n);
      for (long k = 0; k < n; ++k) {
        const double tm = a + (static_cast<double>(k) + 0.5) * h;
        const double depth = pp.u0 * field.normalized_envelope(tm);
        gen.assemble(-depth, 0.0, 0.0, omega, ws.vals);
        detail::expm_apply(gen, ws, psi, h);
      }
      to_frame(psi, b, +1.0);
    }
    t = target;
    detail::check_norm(psi, pp, t);
    out.push_back({psi, t});
  }
  return out;
}

// ---------------------------------------------------------------------------
// Relaxation

struct RelaxationParams {
  double tau_coh = 100.0;   // ps
  double tau_pop = 3200.0;  // ps
  Eigen::MatrixXcd rho_eq;  // equilibrium density over the basis

  void validate(std::size_t n) const {
    const auto ok = [](double tau) { return tau >= 0.0 && !std::isnan(tau); };
    if (!ok(tau_coh) || !ok(tau_pop)) throw std::invalid_argument("relaxation times must be >= 0 or infinite");
    if (tau_coh > tau_pop) {
      throw std::invalid_argument("relaxation: tau_coh must not exceed tau_pop (positivity of the relaxed density)");
    }
    if (rho_eq.rows() != static_cast<Eigen::Index>(n) || rho_eq.cols() != static_cast<Eigen::Index>(n)) {
      throw std::invalid_argument("relaxation: rho_eq dimension does not match the basis");
    }
    if (std::abs(rho_eq.trace() - cplx(1.0)) > 1e-10) throw std::invalid_argument("relaxation: rho_eq must have trace 1");
  }
};

/// Thermal density of H0 at the system temperature.
inline Eigen::MatrixXcd thermal_density(const RotorSystem& sys) {
  const auto w = rotor::thermal_weights(sys.basis(), sys.params());
  Eigen::VectorXcd d(static_cast<Eigen::Index>(w.size()));
  for (std::size_t i = 0; i < w.size(); ++i) d(static_cast<Eigen::Index>(i)) = w[i];
  return d.asDiagonal();
}

inline RelaxationParams default_relaxation(const RotorSystem& sys, double tau_coh = 100.0, double tau_pop = 3200.0) {
  return {tau_coh, tau_pop, thermal_density(sys)};
}

/// exp(-t / tau) with tau = infinity giving 1 and tau = 0 giving 0 for t > 0.
inline double decay_factor(double t, double tau) {
  if (std::isinf(tau) || t == 0.0) return 1.0;
  if (tau == 0.0) return 0.0;
  return std::exp(-t / tau);
}

/// Energy-level label of each basis state: states with equal field-free
/// energy share a label. Coherences inside a level do not dephase.
inline std::vector<int> level_labels(const RotorSystem& sys) {
  const auto& e = sys.energies();
  std::vector<int> label(static_cast<std::size_t>(e.size()), -1);
  int next = 0;
  for (Eigen::Index i = 0; i < e.size(); ++i) {
    if (label[static_cast<std::size_t>(i)] >= 0) continue;
    for (Eigen::Index j = i; j < e.size(); ++j) {
      if (label[static_cast<std::size_t>(j)] < 0 && std::abs(e(j) - e(i)) <= 1e-12 * std::max(1.0, std::abs(e(i)))) {
        label[static_cast<std::size_t>(j)] = next;
      }
    }
    ++next;
  }
  return label;
}

/// Closed-form field-free relaxation over a time t from rho0, in the
/// eigenbasis of H0. Coherences between different levels rotate at their
/// Bohr frequency and decay with tau_coh; each degenerate level block relaxes
/// towards the matching block of rho_eq with tau_pop.
inline Eigen::MatrixXcd relaxed_density(const RotorSystem& sys, const Eigen::MatrixXcd& rho0, double t,
                                        const RelaxationParams& relax, const std::vector<int>& labels) {
  if (!(t >= 0.0)) throw std::invalid_argument("relaxed_density: elapsed time must be >= 0");
  const auto n = rho0.rows();
  const double p = decay_factor(t, relax.tau_pop);
  const double q = decay_factor(t, relax.tau_coh);
  const auto& e = sys.energies();
  Eigen::MatrixXcd out(n, n);
  for (Eigen::Index c = 0; c < n; ++c) {
    for (Eigen::Index r = 0; r < n; ++r) {
      if (labels[static_cast<std::size_t>(r)] == labels[static_cast<std::size_t>(c)]) {
        out(r, c) = relax.rho_eq(r, c) + (rho0(r, c) - relax.rho_eq(r, c)) * p;
      } else {
        const double w = physkit::wavenumber_to_rad_per_ps(e(r) - e(c));
        out(r, c) = rho0(r, c) * std::polar(q, -w * t);
      }
    }
  }
  return out;
}

struct DensityTrajectory {
  std::vector<double> times;
  std::vector<Eigen::MatrixXcd> rho;
};

inline DensityTrajectory field_free_relax(const RotorSystem& sys, const Eigen::MatrixXcd& rho_end,
                                          std::span<const double> t_grid, const RelaxationParams& relax) {
  relax.validate(sys.size());
  if (rho_end.rows() != static_cast<Eigen::Index>(sys.size()) || rho_end.cols() != rho_end.rows())
    throw std::invalid_argument("field_free_relax: density dimension does not match the basis");
  const auto labels = level_labels(sys);
  DensityTrajectory out;
  const double t0 = t_grid.empty() ? 0.0 : t_grid.front();
  for (double t : t_grid) {
    out.times.push_back(t);
    out.rho.push_back(relaxed_density(sys, rho_end, t - t0, relax, labels));
  }
  return out;
}

inline Eigen::MatrixXcd pure_density(const Eigen::VectorXcd& psi) { return psi * psi.adjoint(); }

// ---------------------------------------------------------------------------
// Ensembles

struct EnsembleOptions {
  PropagationParams propagation;
  std::optional<RelaxationParams> relax;  // applied from the end of the pulse
  unsigned workers = 1;
};

/// Thermal ensemble members: one basis eigenstate per nonzero weight.
inline std::pair<std::vector<double>, std::vector<QuantumState>> thermal_members(const RotorSystem& sys,
                                                                                 double time,
                                                                                 double cutoff = 1e-14) {
  const auto w = rotor::thermal_weights(sys.basis(), sys.params());
  std::pair<std::vector<double>, std::vector<QuantumState>> out;
  for (std::size_t i = 0; i < w.size(); ++i) {
    if (w[i] <= cutoff) continue;
    const auto& s = sys.basis()[i];
    out.first.push_back(w[i]);
    out.second.push_back(sys.basis_state(s.J, s.M, time));
  }
  return out;
}

/// Propagates every member and calls on_density(i, rho(t_i)) for each grid
/// time in order. Members are mixed in index order, so results do not depend
/// on the worker count. When relaxation is configured, grid times after the
/// end of the pulse use the closed-form relaxation from the mixture at the
/// pulse end.
template <typename Fn>
void ensemble_observe(const RotorSystem& sys, std::span<const double> weights, std::span<const QuantumState> members,
                      const field::FieldWaveform& field, std::span<const double> t_grid, const EnsembleOptions& opt,
                      Fn&& on_density) {
  if (weights.size() != members.size() || members.empty()) {
    throw std::invalid_argument("ensemble: weight and state counts must match and be nonzero");
  }
  for (double w : weights) {
    if (!(w >= 0.0)) throw std::invalid_argument("ensemble: weights must be >= 0");
  }
  const double t_start = members.front().time;
  for (const auto& m : members) {
    if (m.time != t_start) throw std::invalid_argument("ensemble: members must share their initial time");
  }
  double total = 0.0;
  for (double w : weights) total += w;
  if (!(total > 0.0)) throw std::invalid_argument("ensemble: weights must not all vanish");

  const double t_switch = opt.relax ? std::max(field.envelope.end(), t_start) : std::numeric_limits<double>::infinity();
  std::vector<double> coherent_grid;
  for (double t : t_grid) {
    if (t <= t_switch) coherent_grid.push_back(t);
  }
  const bool needs_switch = opt.relax && (t_grid.empty() ? false : t_grid.back() > t_switch);
  if (needs_switch) coherent_grid.push_back(t_switch);
  if (opt.relax) opt.relax->validate(sys.size());

  std::vector<std::vector<QuantumState>> paths(members.size());
  parallel_for(members.size(), opt.workers, [&](std::size_t i) {
    paths[i] = propagate(sys, members[i], field, coherent_grid, opt.propagation);
  });

  const auto n = static_cast<Eigen::Index>(sys.size());
  auto mixture = [&](std::size_t k) {
    Eigen::MatrixXcd rho = Eigen::MatrixXcd::Zero(n, n);
    for (std::size_t i = 0; i < members.size(); ++i) {
      const auto& psi = paths[i][k].amplitudes;
      rho.noalias() += (weights[i] / total) * (psi * psi.adjoint());
    }
    return rho;
  };

  std::size_t k = 0;
  for (; k < t_grid.size() && t_grid[k] <= t_switch; ++k) on_density(k, mixture(k));
  if (k < t_grid.size()) {
    const Eigen::MatrixXcd rho_switch = mixture(coherent_grid.size() - 1);
    const auto labels = level_labels(sys);
    for (; k < t_grid.size(); ++k) {
      on_density(k, relaxed_density(sys, rho_switch, t_grid[k] - t_switch, *opt.relax, labels));
    }
  }
}

inline DensityTrajectory ensemble_run(const RotorSystem& sys, std::span<const double> weights,
                                      std::span<const QuantumState> members, const field::FieldWaveform& field,
                                      std::span<const double> t_grid, const EnsembleOptions& opt) {
  DensityTrajectory out;
  out.times.assign(t_grid.begin(), t_grid.end());
  out.rho.resize(t_grid.size());
  ensemble_observe(sys, weights, members, field, t_grid, opt,
                   [&](std::size_t k, const Eigen::MatrixXcd& rho) { out.rho[k] = rho; });
  return out;
}

// ---------------------------------------------------------------------------
// Density-matrix propagation with relaxation active during the pulse.

/// Propagates a density matrix through the field with the relaxation map
/// applied by Strang splitting around each unitary midpoint step. Intended
/// for exploration on small bases; cost grows as the basis size cubed.
inline std::vector<Eigen::MatrixXcd> propagate_density_dissipative(const RotorSystem& sys, const Eigen::MatrixXcd& rho0,
                                                                   double t0, const field::FieldWaveform& field,
                                                                   std::span<const double> t_grid,
                                                                   const PropagationParams& pp,
                                                                   const RelaxationParams& relax) {
  relax.validate(sys.size());
  if (!(pp.dt > 0.0)) throw std::invalid_argument("dt must be > 0");
  const auto labels = level_labels(sys);
  const auto& gen = sys.generator();
  const auto n = static_cast<Eigen::Index>(sys.size());
  detail::StepWorkspace ws;

  // The relaxation map without the free rotation of coherences.
  auto dissipate = [&](Eigen::MatrixXcd& rho, double h) {
    const double p = decay_factor(h, relax.tau_pop);
    const double q = decay_factor(h, relax.tau_coh);
    for (Eigen::Index c = 0; c < n; ++c)
      for (Eigen::Index r = 0; r < n; ++r) {
        if (labels[static_cast<std::size_t>(r)] == labels[static_cast<std::size_t>(c)]) {
          rho(r, c) = relax.rho_eq(r, c) + (rho(r, c) - relax.rho_eq(r, c)) * p;
        } else {
          rho(r, c) *= q;
        }
      }
  };
  auto unitary = [&](Eigen::MatrixXcd& rho, double h) {
    for (int side = 0; side < 2; ++side) {
      for (Eigen::Index c = 0; c < n; ++c) {
        Eigen::VectorXcd col = rho.col(c);
        detail::expm_apply(gen, ws, col, h);
        rho.col(c) = col;
      }
      rho.adjointInPlace();
    }
  };

  Eigen::MatrixXcd rho = rho0;
  double t = t0;
  std::vector<Eigen::MatrixXcd> out;
  for (double target : t_grid) {
    if (target < t) throw std::invalid_argument("time grid must be ascending and start after t0");
    if (target > t) {
      const auto steps = static_cast<long>(std::ceil((target - t) / pp.dt - 1e-9));
      const double h = (target - t) / static_cast<double>(steps);
      for (long k = 0; k < steps; ++k) {
        const double tm = t + (static_cast<double>(k) + 0.5) * h;
        const double depth = field.envelope.peak_intensity == 0.0 ? 0.0 : pp.u0 * field.normalized_envelope(tm);
        const double phi = field::polarization_angle(field, tm);
        const double c = std::cos(phi), sn = std::sin(phi);
        gen.assemble(-depth * c * c, -depth * sn * sn, -depth * 2.0 * sn * c, 0.0, ws.vals);
        dissipate(rho, 0.5 * h);
        unitary(rho, h);
        dissipate(rho, 0.5 * h);
      }
    }
    t = target;
    out.push_back(rho);
  }
  return out;
}

}  // namespace centrifuge::dynamics
