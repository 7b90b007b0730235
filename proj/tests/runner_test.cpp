#include <gtest/gtest.h>

#include <fstream>
#include <sstream>

#include "centrifuge/runner.hpp"

using namespace centrifuge;
using runner::Config;
using runner::ConfigError;
using runner::Scenario;

namespace {

// Small, fast settings for end-to-end checks.
Config small(Scenario s) {
  Config c = runner::default_config(s);
  c.j_max = 6;
  c.n_ions = 300;
  c.diagnostics = false;
  // The decay reference keeps its 200 ps pulse: shorter pulses are not adiabatic.
  if (s == Scenario::infield || s == Scenario::scan) {
    c.field.envelope.fwhm = 60.0;
    c.field.envelope.truncation_fwhm = 2.0;
  }
  if (s == Scenario::scan) c.scan = {6.0, 11.0, 6, 150.0};
  if (s == Scenario::infield) c.delays = {-60.0, 60.0, 2.0};
  if (s == Scenario::decay || s == Scenario::adiabatic_reference) c.delays = {-100.0, 3300.0, 100.0};
  return c;
}

std::string message_of(const std::string& text) {
  try {
    runner::parse_config(text);
  } catch (const ConfigError& e) {
    return e.what();
  }
  return "";
}

}  // namespace

TEST(Config, CanonicalTextRoundTrips) {
  for (auto s : {Scenario::infield, Scenario::scan, Scenario::decay, Scenario::adiabatic_reference}) {
    const Config c = runner::default_config(s);
    const std::string text = runner::to_text(c);
    EXPECT_EQ(runner::to_text(runner::parse_config(text)), text) << runner::to_string(s);
  }
}

TEST(Config, ShippedFilesMatchDefaults) {
  const std::pair<const char*, Scenario> files[] = {{"infield.conf", Scenario::infield},
                                                    {"scan.conf", Scenario::scan},
                                                    {"decay.conf", Scenario::decay},
                                                    {"adiabatic-reference.conf", Scenario::adiabatic_reference}};
  for (const auto& [name, s] : files) {
    const auto c = runner::load_config(std::string(CENTRIFUGE_SOURCE_DIR) + "/configs/" + name);
    EXPECT_EQ(runner::to_text(c), runner::to_text(runner::default_config(s))) << name;
  }
}

TEST(Config, MissingKeyIsNamed) {
  std::string text = runner::to_text(runner::default_config(Scenario::infield));
  const auto pos = text.find("numerics.dt_ps");
  text.erase(pos, text.find('\n', pos) - pos + 1);
  EXPECT_NE(message_of(text).find("numerics.dt_ps"), std::string::npos);
  EXPECT_NE(message_of("seed = 1\n").find("scenario"), std::string::npos);
  const std::string scan = runner::to_text(runner::default_config(Scenario::scan));
  std::string no_points = scan;
  const auto p2 = no_points.find("scan.points");
  no_points.erase(p2, no_points.find('\n', p2) - p2 + 1);
  EXPECT_NE(message_of(no_points).find("scan.points"), std::string::npos);
}

TEST(Config, UnknownAndMalformedInputRejected) {
  const std::string base = runner::to_text(runner::default_config(Scenario::infield));
  EXPECT_NE(message_of(base + "field.colour = red\n").find("field.colour"), std::string::npos);
  EXPECT_NE(message_of(base + "seed = 2\n").find("duplicate"), std::string::npos);
  EXPECT_NE(message_of(base + "just words\n").find("line"), std::string::npos);
  std::string bad = base;
  bad.replace(bad.find("n_ions = 2000"), 13, "n_ions = 2k");
  EXPECT_NE(message_of(bad).find("n_ions"), std::string::npos);
  std::string bad_dt = base;
  bad_dt.replace(bad_dt.find("numerics.dt_ps = 0.025"), 22, "numerics.dt_ps = -1");
  EXPECT_FALSE(message_of(bad_dt).empty());
  EXPECT_THROW(runner::parse_config(base + "molecule.B_x = 0.5\n"), ConfigError);
  EXPECT_THROW(runner::scenario_from_string("sweep"), ConfigError);
}

TEST(Config, CommentsAndManifestKeysAreIgnored) {
  const std::string base = runner::to_text(runner::default_config(Scenario::decay));
  const Config c = runner::parse_config("# comment\n\n" + base + "manifest.wall_time_s = 3.5\n");
  EXPECT_EQ(runner::to_text(c), base);
}

TEST(Config, CustomMoleculeNeedsAllKeys) {
  std::string text = runner::to_text(runner::default_config(Scenario::infield));
  text.replace(text.find("molecule.preset = no-dimer-droplet"), 34, "molecule.preset = custom");
  EXPECT_NE(message_of(text).find("molecule.B_x"), std::string::npos);
  text += "molecule.B_x = 0.45\nmolecule.B_y = 0.1\nmolecule.B_z = 0.09\nmolecule.D = 0\nmolecule.environment = droplet\n";
  const Config c = runner::parse_config(text);
  EXPECT_DOUBLE_EQ(c.molecule.B_yz(), 0.095);
  EXPECT_EQ(runner::to_text(runner::parse_config(runner::to_text(c))), runner::to_text(c));
}

TEST(Config, CalibratedDepth) {
  const Config c = runner::default_config(Scenario::infield);
  EXPECT_NEAR(c.u0(), runner::calibrated_depth_ratio * 0.092, 1e-12);
}

TEST(Config, Grids) {
  const runner::DelayGrid d{-1.0, 1.0, 0.5};
  EXPECT_EQ(d.points(), (std::vector<double>{-1.0, -0.5, 0.0, 0.5, 1.0}));
  const runner::ScanGrid s;
  const auto f = s.frequencies();
  ASSERT_EQ(f.size(), 21u);
  EXPECT_DOUBLE_EQ(f.front(), 4.0);
  EXPECT_DOUBLE_EQ(f.back(), 14.0);
  EXPECT_DOUBLE_EQ(f[9], 8.5);
}

TEST(Seeds, DerivedStreamsDiffer) {
  EXPECT_NE(runner::derive_seed(1, 0), runner::derive_seed(1, 1));
  EXPECT_NE(runner::derive_seed(1, 0), runner::derive_seed(2, 0));
  EXPECT_EQ(runner::derive_seed(7, 3), runner::derive_seed(7, 3));
}

// ---------------------------------------------------------------------------

TEST(Serialization, TraceCsvRoundTrip) {
  analysis::AlignmentTrace tr;
  tr.push_back(-2.0, 0.5, 0.01);
  tr.push_back(0.0, 0.61234567, 0.0123);
  const std::string csv = runner::trace_csv(tr);
  EXPECT_EQ(csv.substr(0, 22), "delay_ps,value,stderr\n");
  EXPECT_EQ(csv.find('\r'), std::string::npos);
  const auto back = runner::parse_trace_csv(csv);
  EXPECT_EQ(back.values, tr.values);
  EXPECT_EQ(runner::trace_csv(tr, "fcfg_ghz").substr(0, 9), "fcfg_ghz,");
  EXPECT_THROW(runner::parse_trace_csv("t,v,e\n1,2,3\n"), ConfigError);
  EXPECT_THROW(runner::parse_trace_csv("delay_ps,value,stderr\n1,2\n"), ConfigError);
}

// ---------------------------------------------------------------------------

TEST(Experiments, InfieldIsDeterministicAcrossWorkers) {
  const Config c = small(Scenario::infield);
  const auto a = runner::run_infield(c, {1});
  const auto b = runner::run_infield(c, {3});
  EXPECT_EQ(runner::trace_csv(a.trace), runner::trace_csv(b.trace));
  EXPECT_EQ(runner::sinusoid_record(a.fit).str(), runner::sinusoid_record(b.fit).str());
  EXPECT_EQ(a.trace.size(), 61u);
}

TEST(Experiments, ZeroIntensityGivesFlatTrace) {
  Config c = small(Scenario::infield);
  c.field.envelope.peak_intensity = 0.0;
  const auto r = runner::run_infield(c);
  for (double e : r.exact) EXPECT_NEAR(e, 0.5, 1e-12);
  double chi2 = 0.0;
  for (std::size_t i = 0; i < r.trace.size(); ++i)
    chi2 += std::pow((r.trace.values[i] - 0.5) / r.trace.stderrs[i], 2);
  EXPECT_LT(chi2 / static_cast<double>(r.trace.size()), 1.6);
  if (r.fit.oscillating) EXPECT_LT(r.fit.amplitude, 3.0 * r.fit.amplitude_error() + 0.02);
}

TEST(Experiments, ScanIndependentOfPartition) {
  const Config c = small(Scenario::scan);
  const auto a = runner::run_scan(c, {1});
  const auto b = runner::run_scan(c, {4});
  EXPECT_EQ(runner::trace_csv(a.scan, "fcfg_ghz"), runner::trace_csv(b.scan, "fcfg_ghz"));
  // A sub-grid computed alone reproduces the same points.
  Config part = c;
  part.scan = {8.0, 11.0, 4, c.scan.probe_delay};
  part.fit.half_window = 10.0;
  const auto p = runner::run_scan(part, {1});
  for (std::size_t i = 0; i < p.exact.size(); ++i) EXPECT_EQ(p.exact[i], a.exact[i + 2]);
}

TEST(Experiments, DecayProducesReferenceAndFit) {
  const Config c = small(Scenario::decay);
  const auto r = runner::run_decay(c);
  EXPECT_NEAR(r.reference_exact.back(), 0.5, 0.005);
  ASSERT_TRUE(r.fit.has_value()) << r.fit_error;
  EXPECT_GT(r.plateau.points, 0u);
  EXPECT_EQ(r.trace.size(), r.reference.size());
  Config short_delays = c;
  short_delays.delays.stop = 2000.0;
  EXPECT_THROW(runner::run_decay(short_delays), ConfigError);
}

TEST(Experiments, RelaxationDuringPulseReducesToUnitaryForSlowDecay) {
  Config c = small(Scenario::infield);
  c.j_max = 4;
  c.tau_coh = 1e12;
  c.tau_pop = 1e12;
  const auto f = c.waveform();
  const auto times = c.delays.points();
  const auto unitary = runner::simulate_exact(c, f, times, c.j_max, c.dt, false, 1);
  c.relax_during_pulse = true;
  const auto density = runner::simulate_exact(c, f, times, c.j_max, c.dt, true, 1);
  for (std::size_t k = 0; k < times.size(); ++k) EXPECT_NEAR(density[k], unitary[k], 1e-7) << times[k];
  EXPECT_EQ(runner::to_text(runner::parse_config(runner::to_text(c))), runner::to_text(c));
  EXPECT_NE(runner::to_text(c).find("relax.during_pulse = true"), std::string::npos);
}

TEST(Experiments, ScenarioMismatchRejected) {
  EXPECT_THROW(runner::run_scan(small(Scenario::infield)), ConfigError);
  EXPECT_THROW(runner::run_infield(small(Scenario::decay)), ConfigError);
}

TEST(Experiments, ManifestReproducesRun) {
  const Config c = small(Scenario::infield);
  const auto a = runner::run_infield(c);
  const std::string manifest = runner::manifest_text(c, "infield", a.diagnostics, 1.0);
  const auto again = runner::run_infield(runner::parse_config(manifest));
  EXPECT_EQ(runner::trace_csv(a.trace), runner::trace_csv(again.trace));
}

// ---------------------------------------------------------------------------

TEST(Validate, SmallConfigPasses) {
  Config c = small(Scenario::infield);
  c.j_max = 10;
  const auto rep = runner::validate(c);
  for (const auto& ch : rep.checks) EXPECT_TRUE(ch.passed) << ch.name << ": " << ch.detail;
}

TEST(Validate, TruncatedBasisWithStrongFieldFails) {
  Config c = small(Scenario::infield);
  c.j_max = 2;
  c.molecule.delta_alpha *= 4.0;
  const auto rep = runner::validate(c);
  EXPECT_FALSE(rep.passed());
  bool jmax_failed = false;
  for (const auto& ch : rep.checks)
    if (ch.name == "jmax_convergence") jmax_failed = !ch.passed;
  EXPECT_TRUE(jmax_failed);
}
