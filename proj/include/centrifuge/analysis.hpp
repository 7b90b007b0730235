#pragma once

// Curve fitting for alignment traces and scans: a Levenberg-Marquardt
// driver plus the damped-sinusoid, fixed-offset exponential and peak models,
// and inversion of the Raman resonance condition for B.

#include <algorithm>
#include <cmath>
#include <complex>
#include <limits>
#include <numbers>
#include <numeric>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "centrifuge/observables.hpp"
#include "centrifuge/physkit.hpp"

namespace centrifuge::analysis {

using observables::AlignmentTrace;

class FitError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

enum class FitStatus { converged, max_iterations, singular };

inline const char* to_string(FitStatus s) {
  switch (s) {
    case FitStatus::converged: return "converged";
    case FitStatus::max_iterations: return "max-iterations";
    case FitStatus::singular: return "singular";
  }
  return "?";
}

struct LeastSquaresOptions {
  int max_iterations = 500;
  double step_tolerance = 1e-10;      // relative
  double gradient_tolerance = 1e-12;
  double initial_lambda = 1e-3;
};

struct LeastSquaresResult {
  Eigen::VectorXd params;
  Eigen::MatrixXd covariance;  // scaled by chi2 / (n - p) when n > p
  double chi2 = 0.0;           // weighted sum of squared residuals
  double rms = 0.0;            // unweighted rms residual
  int iterations = 0;
  FitStatus status = FitStatus::converged;

  double error(Eigen::Index i) const { return std::sqrt(std::max(0.0, covariance(i, i))); }
};

/// A model is any object with
///   Eigen::Index size() const;
///   double value(const Eigen::VectorXd& p, double x) const;
///   void gradient(const Eigen::VectorXd& p, double x, Eigen::Ref<Eigen::VectorXd> g) const;

/// Central-difference gradient, used for models without an analytic one and
/// to check those that have it.
template <typename F>
Eigen::VectorXd numeric_gradient(F&& f, const Eigen::VectorXd& p, double x) {
  Eigen::VectorXd g(p.size());
  for (Eigen::Index k = 0; k < p.size(); ++k) {
    const double h = 1e-6 * std::max(1.0, std::abs(p(k)));
    Eigen::VectorXd a = p, b = p;
    a(k) += h;
    b(k) -= h;
    g(k) = (f(a, x) - f(b, x)) / (2.0 * h);
  }
  return g;
}

/// Wraps a plain callable f(p, x) with finite-difference gradients.
template <typename F>
struct NumericModel {
  F f;
  Eigen::Index n;
  Eigen::Index size() const { return n; }
  double value(const Eigen::VectorXd& p, double x) const { return f(p, x); }
  void gradient(const Eigen::VectorXd& p, double x, Eigen::Ref<Eigen::VectorXd> g) const {
    g = numeric_gradient(f, p, x);
  }
};

template <typename F>
NumericModel<F> numeric_model(F f, Eigen::Index n) {
  return {std::move(f), n};
}

/// Weighted Levenberg-Marquardt. `sigma` may be empty (unit weights).
template <typename Model>
LeastSquaresResult least_squares(const Model& model, const std::vector<double>& x, const std::vector<double>& y,
                                 const std::vector<double>& sigma, Eigen::VectorXd p0,
                                 const LeastSquaresOptions& opt = {}) {
  const auto n = static_cast<Eigen::Index>(x.size());
  const Eigen::Index np = model.size();
  if (y.size() != x.size() || (!sigma.empty() && sigma.size() != x.size()))
    throw std::invalid_argument("least_squares: data length mismatch");
  if (p0.size() != np) throw std::invalid_argument("least_squares: initial guess has wrong length");
  if (n < np) throw std::invalid_argument("least_squares: fewer data points than parameters");
  Eigen::VectorXd w = Eigen::VectorXd::Ones(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    const auto ui = static_cast<std::size_t>(i);
    if (!std::isfinite(x[ui]) || !std::isfinite(y[ui])) throw std::invalid_argument("least_squares: non-finite data");
    if (!sigma.empty()) {
      if (!(sigma[ui] > 0.0) || !std::isfinite(sigma[ui]))
        throw std::invalid_argument("least_squares: sigma must be positive");
      w(i) = 1.0 / sigma[ui];
    }
  }
  for (Eigen::Index k = 0; k < np; ++k) {
    if (!std::isfinite(p0(k))) throw std::invalid_argument("least_squares: non-finite initial guess");
  }

  Eigen::MatrixXd jac(n, np);
  Eigen::VectorXd r(n), g(np);
  // Weighted residuals r = w (y - f) and Jacobian of f (weighted).
  auto evaluate = [&](const Eigen::VectorXd& p, bool with_jacobian) {
    for (Eigen::Index i = 0; i < n; ++i) {
      const double xi = x[static_cast<std::size_t>(i)];
      r(i) = w(i) * (y[static_cast<std::size_t>(i)] - model.value(p, xi));
      if (with_jacobian) {
        model.gradient(p, xi, g);
        jac.row(i) = w(i) * g.transpose();
      }
    }
    return r.squaredNorm();
  };

  LeastSquaresResult res;
  Eigen::VectorXd p = std::move(p0);
  double chi2 = evaluate(p, true);
  if (!std::isfinite(chi2)) throw FitError("least_squares: model is not finite at the initial guess");
  double lambda = opt.initial_lambda;
  bool done = false;
  int it = 0;
  for (; it < opt.max_iterations && !done; ++it) {
    const Eigen::MatrixXd a = jac.transpose() * jac;
    const Eigen::VectorXd grad = jac.transpose() * r;
    if (grad.lpNorm<Eigen::Infinity>() < opt.gradient_tolerance || chi2 == 0.0) break;
    Eigen::VectorXd d = a.diagonal();
    const double floor = std::max(d.maxCoeff(), 1e-300) * 1e-12;
    for (Eigen::Index k = 0; k < np; ++k) d(k) = std::max(d(k), floor);
    const Eigen::VectorXd jr = r;  // residuals at the current point
    bool accepted = false;
    while (!accepted) {
      Eigen::MatrixXd lhs = a;
      lhs.diagonal() += lambda * d;
      const Eigen::VectorXd step = lhs.ldlt().solve(grad);
      const Eigen::VectorXd trial = p + step;
      double trial_chi2 = std::numeric_limits<double>::infinity();
      if (step.allFinite()) trial_chi2 = evaluate(trial, false);
      if (std::isfinite(trial_chi2) && trial_chi2 <= chi2) {
        const bool small = step.norm() <= opt.step_tolerance * (p.norm() + opt.step_tolerance);
        p = trial;
        chi2 = evaluate(p, true);
        lambda = std::max(lambda * 0.1, 1e-15);
        accepted = true;
        if (small) done = true;
      } else {
        r = jr;
        lambda *= 10.0;
        if (lambda > 1e16) {  // no downhill step left at working precision
          evaluate(p, true);
          done = true;
          break;
        }
      }
    }
  }
  res.iterations = it;
  res.status = (done || it < opt.max_iterations) ? FitStatus::converged : FitStatus::max_iterations;
  res.params = p;
  res.chi2 = chi2;
  double ss = 0.0;
  for (Eigen::Index i = 0; i < n; ++i) ss += (r(i) / w(i)) * (r(i) / w(i));
  res.rms = std::sqrt(ss / static_cast<double>(n));

  Eigen::JacobiSVD<Eigen::MatrixXd> svd(jac, Eigen::ComputeThinV);
  const auto& s = svd.singularValues();
  const double smax = s.size() ? s(0) : 0.0;
  Eigen::VectorXd inv2(np);
  bool singular = !(smax > 0.0);
  for (Eigen::Index k = 0; k < np; ++k) {
    if (s(k) <= 1e-12 * smax || s(k) == 0.0) {
      singular = true;
      inv2(k) = std::numeric_limits<double>::infinity();
    } else {
      inv2(k) = 1.0 / (s(k) * s(k));
    }
  }
  const double scale = n > np ? chi2 / static_cast<double>(n - np) : 1.0;
  const Eigen::MatrixXd& v = svd.matrixV();
  res.covariance.resize(np, np);
  for (Eigen::Index i = 0; i < np; ++i) {
    for (Eigen::Index j = 0; j < np; ++j) {
      double c = 0.0;
      for (Eigen::Index k = 0; k < np; ++k) {
        const double t = v(i, k) * v(j, k);
        if (t != 0.0) c += t * inv2(k);
      }
      res.covariance(i, j) = scale * c;
    }
  }
  if (singular) res.status = FitStatus::singular;
  return res;
}

// ---------------------------------------------------------------------------
// Damped sinusoid

/// y = c + A exp(-g (t - t0)) cos(2 pi 1e-3 f (t - t0) + phase); f in GHz,
/// t in ps, g in 1/ps. Parameters (c, A, f, phase, g).
struct DampedSinusoid {
  double t0 = 0.0;
  Eigen::Index size() const { return 5; }
  double value(const Eigen::VectorXd& p, double t) const {
    const double s = t - t0;
    return p(0) + p(1) * std::exp(-p(4) * s) * std::cos(physkit::ghz_to_rad_per_ps(p(2)) * s + p(3));
  }
  void gradient(const Eigen::VectorXd& p, double t, Eigen::Ref<Eigen::VectorXd> g) const {
    const double s = t - t0;
    const double e = std::exp(-p(4) * s);
    const double arg = physkit::ghz_to_rad_per_ps(p(2)) * s + p(3);
    const double c = std::cos(arg), sn = std::sin(arg);
    g(0) = 1.0;
    g(1) = e * c;
    g(2) = -p(1) * e * sn * physkit::ghz_to_rad_per_ps(1.0) * s;
    g(3) = -p(1) * e * sn;
    g(4) = -s * p(1) * e * c;
  }
};

struct SinusoidFit {
  bool oscillating = false;  // false: no spectral peak above the noise floor
  std::string note;
  double offset = 0.0;
  double amplitude = 0.0;    // at the first delay of the trace
  double frequency = 0.0;    // GHz
  double phase = 0.0;        // rad, at the first delay
  double damping_time = std::numeric_limits<double>::infinity();  // ps
  double damping_rate = 0.0;                                      // 1/ps
  Eigen::MatrixXd covariance;  // order: offset, amplitude, frequency, phase, damping_rate
  double rms = 0.0;
  FitStatus status = FitStatus::converged;

  double frequency_error() const { return std::sqrt(std::max(0.0, covariance(2, 2))); }
  double amplitude_error() const { return std::sqrt(std::max(0.0, covariance(1, 1))); }
};

struct SpectralPeak {
  double frequency = 0.0;  // GHz
  double power = 0.0;
  double noise_floor = 0.0;
  std::complex<double> coefficient;  // sum of y e^{-i w t} / n at the peak
};

namespace detail {

inline double wrap_phase(double a) {
  a = std::remainder(a, 2.0 * std::numbers::pi);
  return a <= -std::numbers::pi ? a + 2.0 * std::numbers::pi : a;
}

/// Least-squares line through (x, y); returns (intercept, slope).
inline std::pair<double, double> line_fit(const std::vector<double>& x, const std::vector<double>& y) {
  const double n = static_cast<double>(x.size());
  const double mx = std::accumulate(x.begin(), x.end(), 0.0) / n;
  const double my = std::accumulate(y.begin(), y.end(), 0.0) / n;
  double sxy = 0.0, sxx = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sxy += (x[i] - mx) * (y[i] - my);
    sxx += (x[i] - mx) * (x[i] - mx);
  }
  const double slope = sxx > 0.0 ? sxy / sxx : 0.0;
  return {my - slope * mx, slope};
}

}  // namespace detail

/// Optional restriction of the initial-guess search, GHz. The least-squares
/// stage is never constrained.
struct FrequencyBand {
  double lo = 0.0;
  double hi = std::numeric_limits<double>::infinity();
};

/// Dominant frequency of the detrended trace, resampled onto a uniform grid.
/// Candidates run from two periods per span up to Nyquist (intersected with
/// `band`) on a grid four times finer than the natural resolution; ties go to
/// the lower frequency. The noise floor is the median periodogram power over
/// the full range.
inline SpectralPeak dominant_frequency(const AlignmentTrace& trace, const FrequencyBand& band = {}) {
  trace.validate();
  const std::size_t n = trace.size();
  if (n < 8) throw std::invalid_argument("dominant_frequency: need at least 8 points");
  const double t0 = trace.delays.front();
  const double span = trace.delays.back() - t0;
  const double step = span / static_cast<double>(n - 1);
  std::vector<double> tu(n), yu(n);
  std::size_t j = 0;
  for (std::size_t i = 0; i < n; ++i) {
    const double t = t0 + step * static_cast<double>(i);
    while (j + 2 < n && trace.delays[j + 1] < t) ++j;
    const double ta = trace.delays[j], tb = trace.delays[j + 1];
    const double u = std::clamp((t - ta) / (tb - ta), 0.0, 1.0);
    tu[i] = t - t0;
    yu[i] = (1.0 - u) * trace.values[j] + u * trace.values[j + 1];
  }
  const auto [b0, b1] = detail::line_fit(tu, yu);
  for (std::size_t i = 0; i < n; ++i) yu[i] -= b0 + b1 * tu[i];

  const double df = 1e3 / (span * static_cast<double>(n) / static_cast<double>(n - 1));  // GHz
  const double f_nyquist = 0.5e3 / step;
  const double f_lo = 2e3 / span;
  std::vector<double> power;
  SpectralPeak best;
  best.power = -1.0;
  for (double f = f_lo; f <= f_nyquist; f += 0.25 * df) {
    const double w = physkit::ghz_to_rad_per_ps(f);
    std::complex<double> acc{0.0, 0.0};
    for (std::size_t i = 0; i < n; ++i) acc += yu[i] * std::polar(1.0, -w * tu[i]);
    acc /= static_cast<double>(n);
    const double pw = std::norm(acc);
    power.push_back(pw);
    if (f < band.lo || f > band.hi) continue;
    if (pw > best.power * (1.0 + 1e-12)) {
      best.power = pw;
      best.frequency = f;
      best.coefficient = acc;
    }
  }
  if (power.empty()) throw std::invalid_argument("dominant_frequency: trace too short for two periods");
  if (best.power < 0.0) throw std::invalid_argument("dominant_frequency: search band holds no candidate frequency");
  std::nth_element(power.begin(), power.begin() + static_cast<std::ptrdiff_t>(power.size() / 2), power.end());
  best.noise_floor = power[power.size() / 2];
  return best;
}

/// Peak-to-floor power ratio below which a trace counts as non-oscillating.
inline constexpr double oscillation_threshold = 25.0;

inline SinusoidFit fit_decaying_sinusoid(const AlignmentTrace& trace, const FrequencyBand& band = {},
                                         const LeastSquaresOptions& opt = {}) {
  const SpectralPeak peak = dominant_frequency(trace, band);
  SinusoidFit out;
  if (!(peak.power > oscillation_threshold * peak.noise_floor) || peak.power <= 0.0) {
    out.note = "no oscillation: no spectral peak above the noise floor";
    return out;
  }
  const double t0 = trace.delays.front();
  DampedSinusoid model{t0};
  const double mean = std::accumulate(trace.values.begin(), trace.values.end(), 0.0) / static_cast<double>(trace.size());
  Eigen::VectorXd p(5);
  p << mean, 2.0 * std::abs(peak.coefficient), peak.frequency, std::arg(peak.coefficient), 0.0;

  const bool weighted = std::all_of(trace.stderrs.begin(), trace.stderrs.end(), [](double s) { return s > 0.0; });
  const std::vector<double> none;
  auto res = least_squares(model, trace.delays, trace.values, weighted ? trace.stderrs : none, p, opt);
  p = res.params;
  if (p(1) < 0.0) {
    p(1) = -p(1);
    p(3) += std::numbers::pi;
    for (Eigen::Index k = 0; k < 5; ++k) {
      if (k == 1 || k == 3) continue;
      res.covariance(1, k) = -res.covariance(1, k);
      res.covariance(k, 1) = -res.covariance(k, 1);
    }
  }
  out.oscillating = true;
  out.offset = p(0);
  out.amplitude = p(1);
  out.frequency = p(2);
  out.phase = detail::wrap_phase(p(3));
  out.damping_rate = p(4);
  out.damping_time = p(4) > 0.0 ? 1.0 / p(4) : std::numeric_limits<double>::infinity();
  out.covariance = res.covariance;
  out.rms = res.rms;
  out.status = res.status;
  if (!(out.frequency > 0.0)) throw FitError("fit_decaying_sinusoid: fit converged to a non-positive frequency");
  return out;
}

// ---------------------------------------------------------------------------
// Exponential decay toward a fixed offset

/// y = offset + A exp(-k (t - t_ref)); parameters (A, k).
struct FixedOffsetDecay {
  double offset = 0.5;
  double t_ref = 0.0;
  Eigen::Index size() const { return 2; }
  double value(const Eigen::VectorXd& p, double t) const { return offset + p(0) * std::exp(-p(1) * (t - t_ref)); }
  void gradient(const Eigen::VectorXd& p, double t, Eigen::Ref<Eigen::VectorXd> g) const {
    const double e = std::exp(-p(1) * (t - t_ref));
    g(0) = e;
    g(1) = -(t - t_ref) * p(0) * e;
  }
};

struct DecayFit {
  double offset = 0.5;
  double amplitude = 0.0;        // A referred to t = 0
  double amplitude_error = 0.0;
  double tau = 0.0;              // ps; infinite when the fitted rate is <= 0
  double tau_error = 0.0;
  double rate = 0.0;             // 1/ps
  double rate_error = 0.0;
  bool resolvable = true;        // false: wide confidence, tau not determined by the data
  Eigen::MatrixXd covariance;    // order: amplitude (t = 0), rate
  double rms = 0.0;
  FitStatus status = FitStatus::converged;
};

inline DecayFit fit_exponential_decay(const AlignmentTrace& trace, double offset = 0.5,
                                      const LeastSquaresOptions& opt = {}) {
  trace.validate();
  if (trace.size() < 3) throw std::invalid_argument("fit_exponential_decay: need at least 3 points");
  const double t_ref = trace.delays.front();
  const double span = trace.delays.back() - t_ref;
  // Start from a log-linear fit of |y - offset| when the trace is one-signed.
  std::vector<double> ts, ls;
  double mean_dev = 0.0;
  for (std::size_t i = 0; i < trace.size(); ++i) mean_dev += trace.values[i] - offset;
  const double sign = mean_dev < 0.0 ? -1.0 : 1.0;
  for (std::size_t i = 0; i < trace.size(); ++i) {
    const double d = sign * (trace.values[i] - offset);
    if (d > 0.0) {
      ts.push_back(trace.delays[i] - t_ref);
      ls.push_back(std::log(d));
    }
  }
  double a0 = 0.0, k0 = 1.0 / std::max(span, 1e-300);
  if (ts.size() >= 2) {
    const auto [b0, b1] = detail::line_fit(ts, ls);
    a0 = sign * std::exp(b0);
    if (-b1 > 0.0) k0 = -b1;
  } else if (ts.size() == 1) {
    a0 = sign * std::exp(ls[0]);
  }
  FixedOffsetDecay model{offset, t_ref};
  Eigen::VectorXd p(2);
  p << a0, k0;
  const bool weighted = std::all_of(trace.stderrs.begin(), trace.stderrs.end(), [](double s) { return s > 0.0; });
  const std::vector<double> none;
  const auto res = least_squares(model, trace.delays, trace.values, weighted ? trace.stderrs : none, p, opt);

  DecayFit out;
  out.offset = offset;
  out.rms = res.rms;
  out.status = res.status;
  const double a_ref = res.params(0), k = res.params(1);
  // Refer A to t = 0: A0 = A_ref exp(k t_ref).
  const double e = std::exp(k * t_ref);
  Eigen::Matrix2d jt;
  jt << e, a_ref * t_ref * e, 0.0, 1.0;
  out.covariance = jt * res.covariance * jt.transpose();
  out.amplitude = a_ref * e;
  out.amplitude_error = std::sqrt(std::max(0.0, out.covariance(0, 0)));
  out.rate = k;
  out.rate_error = std::sqrt(std::max(0.0, out.covariance(1, 1)));
  out.tau = k > 0.0 ? 1.0 / k : std::numeric_limits<double>::infinity();
  out.tau_error = k > 0.0 ? out.rate_error / (k * k) : std::numeric_limits<double>::infinity();
  const double a_ref_err = res.error(0);
  out.resolvable = res.status != FitStatus::singular && k > 0.0 && std::isfinite(out.rate_error) &&
                   out.rate_error < 0.5 * k && std::abs(a_ref) > 2.0 * a_ref_err;
  if (!out.resolvable && !std::isfinite(out.amplitude_error)) out.amplitude_error = a_ref_err;
  return out;
}

// ---------------------------------------------------------------------------
// Resonance peak

enum class PeakModel { gaussian, lorentzian };

inline const char* to_string(PeakModel m) { return m == PeakModel::gaussian ? "gaussian" : "lorentzian"; }

inline PeakModel peak_model_from_string(const std::string& s) {
  if (s == "gaussian") return PeakModel::gaussian;
  if (s == "lorentzian") return PeakModel::lorentzian;
  throw std::invalid_argument("unknown peak model '" + s + "'");
}

/// y = baseline + height * shape((f - center) / width), width = FWHM.
/// Parameters (center, width, height, baseline).
struct PeakShape {
  PeakModel kind = PeakModel::gaussian;
  Eigen::Index size() const { return 4; }
  double value(const Eigen::VectorXd& p, double f) const {
    const double u = (f - p(0)) / p(1);
    return p(3) + p(2) * shape(u);
  }
  void gradient(const Eigen::VectorXd& p, double f, Eigen::Ref<Eigen::VectorXd> g) const {
    const double u = (f - p(0)) / p(1);
    const double ds = dshape(u);
    g(0) = -p(2) * ds / p(1);
    g(1) = -p(2) * ds * u / p(1);
    g(2) = shape(u);
    g(3) = 1.0;
  }
  double shape(double u) const {
    if (kind == PeakModel::gaussian) return std::exp(-4.0 * std::numbers::ln2 * u * u);
    return 1.0 / (1.0 + 4.0 * u * u);
  }
  double dshape(double u) const {
    if (kind == PeakModel::gaussian) return -8.0 * std::numbers::ln2 * u * shape(u);
    const double d = 1.0 + 4.0 * u * u;
    return -8.0 * u / (d * d);
  }
};

struct PeakFit {
  PeakModel model = PeakModel::gaussian;
  double center = 0.0;
  double center_error = 0.0;
  double width = 0.0;   // FWHM
  double width_error = 0.0;
  double height = 0.0;
  double baseline = 0.0;
  double window_lo = 0.0, window_hi = 0.0;
  Eigen::MatrixXd covariance;  // order: center, width, height, baseline
  double rms = 0.0;
  FitStatus status = FitStatus::converged;
};

class UnbracketedPeak : public FitError {
 public:
  using FitError::FitError;
};

/// Fits the peak over [f_max - half_window, f_max + half_window] around the
/// largest sample. A maximum on either end of the scan is unbracketed.
inline PeakFit fit_resonance_peak(const AlignmentTrace& scan, PeakModel kind = PeakModel::gaussian,
                                  double half_window = 3.0, const LeastSquaresOptions& opt = {}) {
  scan.validate();
  if (scan.size() < 4) throw std::invalid_argument("fit_resonance_peak: need at least 4 points");
  if (!(half_window > 0.0)) throw std::invalid_argument("fit_resonance_peak: window must be > 0");
  const auto imax = static_cast<std::size_t>(
      std::distance(scan.values.begin(), std::max_element(scan.values.begin(), scan.values.end())));
  if (imax == 0 || imax + 1 == scan.size()) {
    throw UnbracketedPeak("fit_resonance_peak: maximum at " + std::to_string(scan.delays[imax]) +
                          " lies on the scan boundary (unbracketed)");
  }
  const double fc = scan.delays[imax];
  AlignmentTrace win;
  for (std::size_t i = 0; i < scan.size(); ++i) {
    if (std::abs(scan.delays[i] - fc) <= half_window + 1e-12) win.push_back(scan.delays[i], scan.values[i], scan.stderrs[i]);
  }
  if (win.size() < 5) throw FitError("fit_resonance_peak: fewer than 5 points inside the fit window");
  const double ymax = scan.values[imax];
  const double base = std::min(win.values.front(), win.values.back());
  // Width guess from half-maximum crossings on each side.
  const double half = base + 0.5 * (ymax - base);
  double lo = win.delays.front(), hi = win.delays.back();
  for (std::size_t i = 0; i < win.size(); ++i) {
    if (win.delays[i] <= fc && win.values[i] < half) lo = win.delays[i];
    if (win.delays[i] >= fc && win.values[i] < half) {
      hi = win.delays[i];
      break;
    }
  }
  Eigen::VectorXd p(4);
  p << fc, std::max(hi - lo, 1e-3), ymax - base, base;
  PeakShape model{kind};
  const bool weighted = std::all_of(win.stderrs.begin(), win.stderrs.end(), [](double s) { return s > 0.0; });
  const std::vector<double> none;
  const auto res = least_squares(model, win.delays, win.values, weighted ? win.stderrs : none, p, opt);
  PeakFit out;
  out.model = kind;
  out.center = res.params(0);
  out.width = std::abs(res.params(1));
  out.height = res.params(2);
  out.baseline = res.params(3);
  out.covariance = res.covariance;
  out.center_error = res.error(0);
  out.width_error = res.error(1);
  out.window_lo = win.delays.front();
  out.window_hi = win.delays.back();
  out.rms = res.rms;
  out.status = res.status;
  if (!(out.width > 0.0)) throw FitError("fit_resonance_peak: fitted width collapsed to zero");
  return out;
}

// ---------------------------------------------------------------------------
// Rotational constant from the Raman resonance

/// B_yz from the J -> J+2 resonance frequency, neglecting distortion.
inline double extract_byz(double f_peak_ghz, int J) {
  if (!(f_peak_ghz > 0.0)) throw std::invalid_argument("extract_byz: frequency must be > 0");
  if (J < 0) throw std::invalid_argument("extract_byz: J must be >= 0");
  return 2.0 * physkit::ghz_to_wavenumber(f_peak_ghz) / (4.0 * J + 6.0);
}

/// Same with a known distortion constant D (cm^-1). With D fixed the
/// resonance condition is linear in B, so this is the exact inverse of
/// rotor::resonance_frequency.
inline double extract_byz(double f_peak_ghz, int J, double D) {
  const double rigid = extract_byz(f_peak_ghz, J);
  const double a = static_cast<double>(J) * (J + 1);
  const double b = static_cast<double>(J + 2) * (J + 3);
  return rigid + D * (b * b - a * a) / (4.0 * J + 6.0);
}

/// Propagates a frequency uncertainty through extract_byz.
inline double extract_byz_error(double f_error_ghz, int J) {
  return 2.0 * physkit::ghz_to_wavenumber(std::abs(f_error_ghz)) / (4.0 * J + 6.0);
}

}  // namespace centrifuge::analysis
