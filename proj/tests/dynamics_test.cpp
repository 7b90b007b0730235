#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <complex>
#include <numeric>
#include <random>
#include <vector>

#include "centrifuge/dynamics.hpp"
#include "centrifuge/observables.hpp"

using namespace centrifuge;
using cplx = std::complex<double>;

namespace {

field::EnvelopeSpec short_envelope(double fwhm = 100.0) {
  field::EnvelopeSpec env;
  env.fwhm = fwhm;
  env.truncation_fwhm = 2.5;
  return env;
}

double population_of_j(const dynamics::RotorSystem& sys, const Eigen::VectorXcd& psi, int J) {
  double p = 0.0;
  for (std::size_t i = 0; i < sys.size(); ++i) {
    if (sys.basis()[i].J == J) p += std::norm(psi(static_cast<Eigen::Index>(i)));
  }
  return p;
}

double energy_expectation(const dynamics::RotorSystem& sys, const Eigen::VectorXcd& psi) {
  double e = 0.0;
  for (Eigen::Index i = 0; i < psi.size(); ++i) e += std::norm(psi(i)) * sys.energies()(i);
  return e;
}

// First-order perturbation theory for |0,0> -> |2,M>, from quadrature matrix
// elements and Simpson's rule on a fine grid.
double perturbative_p2(const field::FieldWaveform& f, double u0, const rotor::RotorParams& p) {
  const double w20 = physkit::wavenumber_to_rad_per_ps(rotor::prolate_energy(2, 0, p));
  const double t0 = f.envelope.start(), t1 = f.envelope.end();
  const int n = 40000;
  const double h = (t1 - t0) / n;
  double p2 = 0.0;
  for (int m = -2; m <= 2; ++m) {
    const double xx = rotor::quadrature_oracle(rotor::AngleKind::xx, 2, m, 0, 0);
    const double zz = rotor::quadrature_oracle(rotor::AngleKind::zz, 2, m, 0, 0);
    const double xz = rotor::quadrature_oracle(rotor::AngleKind::xz, 2, m, 0, 0);
    cplx acc{0.0, 0.0};
    for (int k = 0; k <= n; ++k) {
      const double t = t0 + k * h;
      const double phi = field::polarization_angle(f, t);
      const double c = std::cos(phi), s = std::sin(phi);
      const double v = -u0 * f.normalized_envelope(t) * (c * c * xx + s * s * zz + 2.0 * s * c * xz);
      const double wk = (k == 0 || k == n) ? 1.0 : (k % 2 ? 4.0 : 2.0);
      acc += wk * physkit::wavenumber_to_rad_per_ps(v) * std::polar(1.0, w20 * t);
    }
    acc *= h / 3.0;
    p2 += std::norm(acc);
  }
  return p2;
}

}  // namespace

TEST(Propagation, ZeroFieldGivesFreePhases) {
  const auto p = rotor::droplet_preset();
  dynamics::RotorSystem sys(6, p);
  auto f = field::make_cfcfg(short_envelope(), 8.5);
  f.envelope.peak_intensity = 0.0;
  dynamics::QuantumState s;
  s.amplitudes = Eigen::VectorXcd::Zero(static_cast<Eigen::Index>(sys.size()));
  s.amplitudes(static_cast<Eigen::Index>(sys.basis().index_of(0, 0))) = cplx(0.6, 0.0);
  s.amplitudes(static_cast<Eigen::Index>(sys.basis().index_of(2, 1))) = cplx(0.0, 0.64);
  s.amplitudes(static_cast<Eigen::Index>(sys.basis().index_of(4, -3))) = cplx(0.48, 0.0);
  s.time = -250.0;
  const std::vector<double> grid{-100.0, 0.0, 137.5};
  const auto out = dynamics::propagate(sys, s, f, grid, {});
  for (std::size_t k = 0; k < grid.size(); ++k) {
    const double dt = grid[k] - s.time;
    for (Eigen::Index i = 0; i < s.amplitudes.size(); ++i) {
      const double w = 2.0 * std::numbers::pi * 29.9792458 * sys.energies()(i) * dt * 1e-3;
      const cplx expected = s.amplitudes(i) * std::polar(1.0, -w);
      EXPECT_NEAR(std::abs(out[k].amplitudes(i) - expected), 0.0, 1e-12);
    }
  }
}

TEST(Propagation, NormPreservedAndEnergyConstantAfterPulse) {
  dynamics::RotorSystem sys(12, rotor::droplet_preset());
  const auto env = short_envelope();
  const auto f = field::make_cfcfg(env, 8.27, field::drift_rate_for_spread(env, 4.0));
  dynamics::PropagationParams pp;
  pp.u0 = 4.6;
  const std::vector<double> grid{0.0, env.end(), env.end() + 300.0, env.end() + 2000.0};
  const auto out = dynamics::propagate(sys, sys.basis_state(0, 0, env.start()), f, grid, pp);
  for (const auto& s : out) EXPECT_LT(std::abs(s.norm() - 1.0), 1e-9);
  const double e1 = energy_expectation(sys, out[1].amplitudes);
  EXPECT_GT(e1, 0.05);
  EXPECT_NEAR(energy_expectation(sys, out[2].amplitudes), e1, 1e-10);
  EXPECT_NEAR(energy_expectation(sys, out[3].amplitudes), e1, 1e-10);
}

TEST(Propagation, HalvingStepChangesObservableBelowTolerance) {
  dynamics::RotorSystem sys(12, rotor::droplet_preset());
  const observables::Detector det(sys);
  const auto env = short_envelope();
  const auto f = field::make_cfcfg(env, 8.27, field::drift_rate_for_spread(env, 4.0));
  std::vector<double> grid;
  for (double t = -100.0; t <= env.end() + 50.0; t += 25.0) grid.push_back(t);
  dynamics::PropagationParams coarse;
  coarse.u0 = 4.6;
  coarse.dt = 0.025;
  auto fine = coarse;
  fine.dt = 0.0125;
  const auto a = dynamics::propagate(sys, sys.basis_state(0, 0, env.start()), f, grid, coarse);
  const auto b = dynamics::propagate(sys, sys.basis_state(0, 0, env.start()), f, grid, fine);
  double worst = 0.0;
  for (std::size_t k = 0; k < grid.size(); ++k) {
    worst = std::max(worst, std::abs(det.exact(a[k].amplitudes) - det.exact(b[k].amplitudes)));
  }
  EXPECT_LT(worst, 1e-6);
}

TEST(Propagation, WeakResonantFieldMatchesPerturbationTheory) {
  const auto p = rotor::droplet_preset();
  dynamics::RotorSystem sys(6, p);
  const auto env = short_envelope();
  const auto f = field::make_cfcfg(env, rotor::resonance_frequency(0, p));
  dynamics::PropagationParams pp;
  pp.u0 = 0.004;
  const std::vector<double> grid{env.end()};
  const auto out = dynamics::propagate(sys, sys.basis_state(0, 0, env.start()), f, grid, pp);
  const double p2 = population_of_j(sys, out[0].amplitudes, 2);
  const double oracle = perturbative_p2(f, pp.u0, p);
  ASSERT_LT(p2, 0.01);
  ASSERT_GT(oracle, 1e-5);
  EXPECT_NEAR(p2 / oracle, 1.0, 0.05);
}

TEST(Propagation, RejectsBadInput) {
  dynamics::RotorSystem sys(2, rotor::droplet_preset());
  const auto f = field::make_cfcfg(short_envelope(), 8.5);
  auto s = sys.basis_state(0, 0, 0.0);
  const std::vector<double> descending{10.0, 5.0};
  EXPECT_THROW(dynamics::propagate(sys, s, f, descending, {}), std::invalid_argument);
  const std::vector<double> before{-1.0};
  EXPECT_THROW(dynamics::propagate(sys, s, f, before, {}), std::invalid_argument);
  s.amplitudes *= 2.0;
  const std::vector<double> ok{1.0};
  EXPECT_THROW(dynamics::propagate(sys, s, f, ok, {}), std::invalid_argument);
}

TEST(RotatingFrame, AgreesWithLabFrame) {
  dynamics::RotorSystem sys(12, rotor::droplet_preset());
  const observables::Detector det(sys);
  const auto env = short_envelope();
  const auto f = field::make_cfcfg(env, 8.5);
  dynamics::PropagationParams pp;
  pp.u0 = 2.3;
  pp.dt = 0.025;
  std::vector<double> grid;
  for (double t = -150.0; t <= env.end() + 100.0; t += 5.0) grid.push_back(t);
  const auto lab = dynamics::propagate(sys, sys.basis_state(0, 0, env.start()), f, grid, pp);
  const auto rot = dynamics::propagate_rotating_frame(sys, sys.basis_state(0, 0, env.start()), f, grid, pp);
  double worst = 0.0;
  for (std::size_t k = 0; k < grid.size(); ++k) {
    worst = std::max(worst, std::abs(det.exact(lab[k].amplitudes) - det.exact(rot[k].amplitudes)));
  }
  EXPECT_LT(worst, 1e-4);
}

TEST(RotatingFrame, StaticFieldReducesToLabPropagation) {
  dynamics::RotorSystem sys(8, rotor::droplet_preset());
  const auto env = short_envelope();
  auto f = field::make_cfcfg(env, 0.0);
  f.phase0 = 0.4;
  dynamics::PropagationParams pp;
  pp.u0 = 2.3;
  const std::vector<double> grid{0.0, env.end() + 10.0};
  const auto lab = dynamics::propagate(sys, sys.basis_state(1, 1, env.start()), f, grid, pp);
  const auto rot = dynamics::propagate_rotating_frame(sys, sys.basis_state(1, 1, env.start()), f, grid, pp);
  for (std::size_t k = 0; k < grid.size(); ++k) {
    EXPECT_LT((lab[k].amplitudes - rot[k].amplitudes).norm(), 1e-10);
  }
}

TEST(RotatingFrame, RejectsDrift) {
  dynamics::RotorSystem sys(2, rotor::droplet_preset());
  const auto f = field::make_cfcfg(short_envelope(), 8.5, 0.001);
  const std::vector<double> grid{0.0};
  EXPECT_THROW(dynamics::propagate_rotating_frame(sys, sys.basis_state(0, 0, -300.0), f, grid, {}),
               std::invalid_argument);
}

TEST(Interaction, Examples) {
  dynamics::RotorSystem sys(4, rotor::droplet_preset());
  const auto& ops = sys.operators();
  auto f = field::make_cfcfg(short_envelope(), 8.5);
  // Outside the envelope support.
  EXPECT_EQ(dynamics::interaction_matrix(f, 1e4, 2.0, ops).norm(), 0.0);
  // phi = 0 at the envelope center.
  const Eigen::MatrixXd v0 = dynamics::interaction_matrix(f, 0.0, 2.0, ops);
  EXPECT_LT((v0 + 2.0 * ops.xx).norm(), 1e-14);
  // Removing the isotropic part leaves a traceless matrix.
  const double t = 23.0;
  const Eigen::MatrixXd v = dynamics::interaction_matrix(f, t, 2.0, ops);
  const double env = f.normalized_envelope(t);
  const auto n = static_cast<double>(sys.size());
  EXPECT_NEAR(v.trace() + 2.0 * env * n / 3.0, 0.0, 1e-12);
  EXPECT_LT((v - v.transpose()).norm(), 1e-14);
  dynamics::AngleOperators bad = ops;
  bad.xz = Eigen::MatrixXd::Zero(3, 3);
  EXPECT_THROW(dynamics::interaction_matrix(f, 0.0, 1.0, bad), std::invalid_argument);
}

TEST(Adiabatic, LinearStaticPulseReturnsToInitialState) {
  dynamics::RotorSystem sys(12, rotor::droplet_preset());
  field::EnvelopeSpec env;
  env.fwhm = 200.0;
  env.truncation_fwhm = 2.5;
  const auto f = field::make_linear_static(env);
  dynamics::PropagationParams pp;
  pp.u0 = 2.3;
  const std::vector<double> grid{env.end()};
  const auto out = dynamics::propagate(sys, sys.basis_state(0, 0, env.start()), f, grid, pp);
  const double fidelity = std::norm(out[0].amplitudes(static_cast<Eigen::Index>(sys.basis().index_of(0, 0))));
  EXPECT_GT(fidelity, 0.999);
}

// ---------------------------------------------------------------------------

namespace {

Eigen::MatrixXcd random_density(std::size_t n, unsigned seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> g;
  Eigen::MatrixXcd a(static_cast<Eigen::Index>(n), 4);
  for (Eigen::Index i = 0; i < a.rows(); ++i)
    for (Eigen::Index j = 0; j < a.cols(); ++j) a(i, j) = cplx(g(rng), g(rng));
  Eigen::MatrixXcd rho = a * a.adjoint();
  return rho / rho.trace();
}

}  // namespace

TEST(Relaxation, PreservesTraceAndPositivity) {
  auto p = rotor::droplet_preset();
  p.T = 0.4;
  dynamics::RotorSystem sys(6, p);
  const auto relax = dynamics::default_relaxation(sys);
  const auto rho0 = random_density(sys.size(), 3);
  std::vector<double> grid;
  for (double t = 500.0; t <= 5000.0; t += 250.0) grid.push_back(t);
  const auto traj = dynamics::field_free_relax(sys, rho0, grid, relax);
  for (const auto& rho : traj.rho) {
    EXPECT_NEAR(std::abs(rho.trace() - cplx(1.0)), 0.0, 1e-12);
    EXPECT_LT((rho - rho.adjoint()).norm(), 1e-14);
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXcd> es(rho);
    EXPECT_GE(es.eigenvalues().minCoeff(), -1e-10);
  }
}

TEST(Relaxation, InfiniteTimesGiveUnitaryFreeEvolution) {
  dynamics::RotorSystem sys(4, rotor::droplet_preset());
  auto relax = dynamics::default_relaxation(sys);
  relax.tau_coh = relax.tau_pop = std::numeric_limits<double>::infinity();
  Eigen::VectorXcd psi = Eigen::VectorXcd::Zero(static_cast<Eigen::Index>(sys.size()));
  psi(0) = std::sqrt(0.5);
  psi(static_cast<Eigen::Index>(sys.basis().index_of(2, 0))) = cplx(0.0, std::sqrt(0.5));
  const std::vector<double> grid{0.0, 123.0};
  const auto traj = dynamics::field_free_relax(sys, dynamics::pure_density(psi), grid, relax);
  Eigen::VectorXcd evolved = psi;
  sys.free_evolve(evolved, 123.0);
  EXPECT_LT((traj.rho[1] - dynamics::pure_density(evolved)).norm(), 1e-12);
}

TEST(Relaxation, LongTimeLimitIsEquilibrium) {
  dynamics::RotorSystem sys(6, rotor::droplet_preset());
  const observables::Detector det(sys);
  const auto relax = dynamics::default_relaxation(sys);
  const auto rho0 = random_density(sys.size(), 11);
  const std::vector<double> grid{0.0, 3200.0 * 60.0};
  const auto traj = dynamics::field_free_relax(sys, rho0, grid, relax);
  EXPECT_LT((traj.rho[1] - relax.rho_eq).norm(), 1e-12);
  EXPECT_NEAR(det.exact(traj.rho[1]), 0.5, 1e-12);
}

TEST(Relaxation, CoherenceDecayIsExponential) {
  dynamics::RotorSystem sys(4, rotor::droplet_preset());
  const auto relax = dynamics::default_relaxation(sys);
  const auto rho0 = random_density(sys.size(), 5);
  const std::vector<double> grid{0.0, 37.0, 250.0};
  const auto traj = dynamics::field_free_relax(sys, rho0, grid, relax);
  const auto a = static_cast<Eigen::Index>(sys.basis().index_of(0, 0));
  const auto b = static_cast<Eigen::Index>(sys.basis().index_of(2, 1));
  for (std::size_t k = 1; k < grid.size(); ++k) {
    EXPECT_NEAR(std::abs(traj.rho[k](a, b)) / std::abs(rho0(a, b)), std::exp(-grid[k] / relax.tau_coh), 1e-13);
  }
}

TEST(Relaxation, RejectsInvalidParameters) {
  dynamics::RotorSystem sys(2, rotor::droplet_preset());
  auto relax = dynamics::default_relaxation(sys);
  relax.tau_coh = 5000.0;
  EXPECT_THROW(relax.validate(sys.size()), std::invalid_argument);
  relax = dynamics::default_relaxation(sys);
  relax.rho_eq *= 2.0;
  EXPECT_THROW(relax.validate(sys.size()), std::invalid_argument);
  relax = dynamics::default_relaxation(sys);
  const auto labels = dynamics::level_labels(sys);
  EXPECT_THROW(dynamics::relaxed_density(sys, relax.rho_eq, -1.0, relax, labels), std::invalid_argument);
}

// ---------------------------------------------------------------------------

TEST(Ensemble, SingleMemberMatchesPropagate) {
  dynamics::RotorSystem sys(8, rotor::droplet_preset());
  const auto env = short_envelope();
  const auto f = field::make_cfcfg(env, 8.5);
  dynamics::EnsembleOptions opt;
  opt.propagation.u0 = 2.3;
  const std::vector<double> grid{-50.0, 0.0, 80.0};
  const std::vector<double> w{1.0};
  const std::vector<dynamics::QuantumState> members{sys.basis_state(0, 0, env.start())};
  const auto traj = dynamics::ensemble_run(sys, w, members, f, grid, opt);
  const auto direct = dynamics::propagate(sys, members[0], f, grid, opt.propagation);
  for (std::size_t k = 0; k < grid.size(); ++k) {
    EXPECT_LT((traj.rho[k] - dynamics::pure_density(direct[k].amplitudes)).norm(), 1e-15);
  }
}

TEST(Ensemble, DeterministicAcrossWorkersAndLinearInWeights) {
  auto p = rotor::droplet_preset();
  p.T = 0.4;
  dynamics::RotorSystem sys(6, p);
  const auto env = short_envelope();
  const auto f = field::make_cfcfg(env, 8.5);
  auto [w, members] = dynamics::thermal_members(sys, env.start(), 1e-3);
  ASSERT_GT(members.size(), 1u);
  dynamics::EnsembleOptions opt;
  opt.propagation.u0 = 2.3;
  opt.relax = dynamics::default_relaxation(sys);
  const std::vector<double> grid{0.0, env.end() + 100.0};
  opt.workers = 1;
  const auto a = dynamics::ensemble_run(sys, w, members, f, grid, opt);
  opt.workers = 3;
  const auto b = dynamics::ensemble_run(sys, w, members, f, grid, opt);
  for (std::size_t k = 0; k < grid.size(); ++k) EXPECT_TRUE(a.rho[k] == b.rho[k]);

  std::vector<double> doubled = w;
  for (double& x : doubled) x *= 2.0;
  const auto c = dynamics::ensemble_run(sys, doubled, members, f, grid, opt);
  const observables::Detector det(sys);
  for (std::size_t k = 0; k < grid.size(); ++k) EXPECT_NEAR(det.exact(a.rho[k]), det.exact(c.rho[k]), 1e-14);

  EXPECT_THROW(dynamics::ensemble_run(sys, std::vector<double>{1.0}, members, f, grid, opt), std::invalid_argument);
}

TEST(Ensemble, ExecutionOrderDoesNotMatter) {
  auto p = rotor::droplet_preset();
  p.T = 0.4;
  dynamics::RotorSystem sys(6, p);
  const auto env = short_envelope();
  const auto f = field::make_cfcfg(env, 8.5);
  auto [w, members] = dynamics::thermal_members(sys, env.start(), 1e-3);
  dynamics::EnsembleOptions opt;
  opt.propagation.u0 = 2.3;
  const std::vector<double> grid{env.end()};
  opt.workers = 4;
  const auto first = dynamics::ensemble_run(sys, w, members, f, grid, opt);
  for (int rep = 0; rep < 3; ++rep) {
    const auto again = dynamics::ensemble_run(sys, w, members, f, grid, opt);
    EXPECT_TRUE(again.rho[0] == first.rho[0]);
  }
}

TEST(Ensemble, RelaxationSwitchesOnAtPulseEnd) {
  dynamics::RotorSystem sys(8, rotor::droplet_preset());
  const auto env = short_envelope();
  const auto f = field::make_cfcfg(env, 8.27, field::drift_rate_for_spread(env, 4.0));
  dynamics::EnsembleOptions opt;
  opt.propagation.u0 = 2.3;
  opt.relax = dynamics::default_relaxation(sys);
  const std::vector<double> grid{env.end() + 400.0};
  const std::vector<double> w{1.0};
  const std::vector<dynamics::QuantumState> members{sys.basis_state(0, 0, env.start())};
  const auto traj = dynamics::ensemble_run(sys, w, members, f, std::vector<double>{grid}, opt);
  const auto end = dynamics::propagate(sys, members[0], f, std::vector<double>{env.end()}, opt.propagation);
  const auto expected = dynamics::relaxed_density(sys, dynamics::pure_density(end[0].amplitudes), 400.0, *opt.relax,
                                                  dynamics::level_labels(sys));
  EXPECT_LT((traj.rho[0] - expected).norm(), 1e-14);
}

TEST(Dissipative, MatchesClosedFormWithoutField) {
  dynamics::RotorSystem sys(4, rotor::droplet_preset());
  auto f = field::make_cfcfg(short_envelope(), 8.5);
  f.envelope.peak_intensity = 0.0;
  const auto relax = dynamics::default_relaxation(sys);
  const auto rho0 = random_density(sys.size(), 8);
  const std::vector<double> grid{400.0};
  const auto out = dynamics::propagate_density_dissipative(sys, rho0, 0.0, f, grid, {}, relax);
  const auto expected = dynamics::relaxed_density(sys, rho0, 400.0, relax, dynamics::level_labels(sys));
  EXPECT_LT((out[0] - expected).norm(), 1e-10);
}
