#pragma once

#include <algorithm>
#include <charconv>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <functional>
#include <map>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "centrifuge/analysis.hpp"
#include "centrifuge/dynamics.hpp"
#include "centrifuge/observables.hpp"
#include "centrifuge/parallel.hpp"
#include "centrifuge/rotor_model.hpp"

namespace centrifuge::runner {

inline constexpr const char* tool_version = "centrifuge 1.0.0";

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

enum class Scenario { infield, scan, decay, adiabatic_reference };

inline std::string to_string(Scenario s) {
  switch (s) {
    case Scenario::infield: return "infield";
    case Scenario::scan: return "scan";
    case Scenario::decay: return "decay";
    case Scenario::adiabatic_reference: return "adiabatic-reference";
  }
  return "?";
}

inline Scenario scenario_from_string(const std::string& s) {
  if (s == "infield") return Scenario::infield;
  if (s == "scan") return Scenario::scan;
  if (s == "decay") return Scenario::decay;
  if (s == "adiabatic-reference") return Scenario::adiabatic_reference;
  throw ConfigError("scenario: unknown value '" + s + "'");
}

// ---------------------------------------------------------------------------
// Molecule presets

/// Peak well depth the shipped polarizability anisotropy is calibrated to,
/// in units of the droplet B_yz, at the default peak intensity.
inline constexpr double calibrated_depth_ratio = 25.0;
inline constexpr double default_peak_intensity = 2e12;  // W/cm^2

inline double calibrated_delta_alpha() {
  return field::delta_alpha_for_depth(calibrated_depth_ratio * rotor::droplet_preset().B_yz(),
                                      default_peak_intensity);
}

inline rotor::RotorParams molecule_preset(const std::string& name) {
  rotor::RotorParams p;
  if (name == "no-dimer-gas") {
    p = rotor::gas_preset();
  } else if (name == "no-dimer-droplet") {
    p = rotor::droplet_preset();
  } else {
    throw ConfigError("molecule.preset: unknown preset '" + name + "'");
  }
  p.delta_alpha = calibrated_delta_alpha();
  p.T = 0.0;
  return p;
}

// ---------------------------------------------------------------------------
// Configuration

struct DelayGrid {
  double start = -200.0;
  double stop = 200.0;
  double step = 2.0;

  std::vector<double> points() const {
    std::vector<double> out;
    const auto n = static_cast<long>(std::floor((stop - start) / step + 1e-9));
    for (long i = 0; i <= n; ++i) out.push_back(start + static_cast<double>(i) * step);
    return out;
  }
};

struct ScanGrid {
  double f_start = 4.0;
  double f_stop = 14.0;
  int points = 21;
  double probe_delay = 550.0;

  std::vector<double> frequencies() const {
    std::vector<double> out;
    for (int i = 0; i < points; ++i)
      out.push_back(points == 1 ? f_start : f_start + (f_stop - f_start) * i / (points - 1.0));
    return out;
  }
};

struct FitSettings {
  double band_lo = 0.0;  // GHz; 0 selects f0
  double band_hi = 0.0;  // GHz; 0 selects 3 f0
  double window_start = 500.0;
  double window_stop = 3300.0;
  double plateau_delay = 1000.0;
  double plateau_halfwidth = 100.0;
  analysis::PeakModel peak_model = analysis::PeakModel::gaussian;
  double half_window = 3.0;
  int initial_j = 0;
  bool distortion_aware = false;
};

struct Config {
  Scenario scenario = Scenario::infield;
  std::string molecule_preset = "no-dimer-droplet";
  rotor::RotorParams molecule = runner::molecule_preset("no-dimer-droplet");
  field::FieldWaveform field;  // f0 and drift_rate unused by the scan, which sets them per point
  double drift_spread = 4.0;   // GHz over the envelope support
  bool relax_enabled = true;
  bool relax_during_pulse = false;  // density-matrix propagation, small bases only
  double tau_coh = 100.0;
  double tau_pop = 3200.0;
  DelayGrid delays;
  ScanGrid scan;
  FitSettings fit;
  std::size_t n_ions = 2000;
  std::uint64_t seed = 1;
  int j_max = 16;
  double dt = 0.025;
  bool diagnostics = true;

  double u0() const { return field::coupling_depth(field.envelope.peak_intensity, molecule.delta_alpha); }

  field::FieldWaveform field_at(double f0) const {
    if (field.kind == field::FieldKind::linear_static) return field::make_linear_static(field.envelope, field.phase0);
    auto f = field::make_cfcfg(field.envelope, f0, field::drift_rate_for_spread(field.envelope, drift_spread));
    f.phase0 = field.phase0;
    return f;
  }

  field::FieldWaveform waveform() const { return field_at(field.f0); }

  void validate() const;
};

inline void Config::validate() const {
  auto require = [](bool ok, const std::string& what) {
    if (!ok) throw ConfigError(what);
  };
  try {
    molecule.validate();
    field.validate();
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what());
  }
  require(field.envelope.fwhm >= 1.0 && field.envelope.fwhm <= 1e5, "field.fwhm_ps must be in [1, 1e5]");
  require(std::isfinite(drift_spread), "field.drift_spread_ghz must be finite");
  require(field.kind != field::FieldKind::accelerated, "field.kind: accelerated fields are not supported by the runner");
  require(tau_coh > 0.0 && tau_pop > 0.0 && tau_coh <= tau_pop, "relax: need 0 < tau_coh_ps <= tau_pop_ps");
  require(j_max >= 1 && j_max <= 60, "numerics.j_max must be in [1, 60]");
  require(dt > 0.0 && dt <= 1.0, "numerics.dt_ps must be in (0, 1]");
  require(n_ions >= 1 && n_ions <= 100000000, "n_ions must be in [1, 1e8]");
  if (scenario == Scenario::scan) {
    require(scan.points >= 4, "scan.points must be >= 4");
    require(scan.f_start >= 0.0 && scan.f_stop > scan.f_start, "scan: need 0 <= f_start_ghz < f_stop_ghz");
    require(std::isfinite(scan.probe_delay), "scan.probe_delay_ps must be finite");
    require(field.kind == field::FieldKind::cfcfg, "scan requires field.kind = cfCFG");
  } else {
    require(delays.step > 0.0 && delays.stop >= delays.start, "delays: need step_ps > 0 and stop_ps >= start_ps");
    require(delays.points().size() <= 200000, "delays: too many points");
  }
  if (scenario == Scenario::adiabatic_reference)
    require(field.kind == field::FieldKind::linear_static, "adiabatic-reference requires field.kind = linear-static");
  if (scenario == Scenario::infield || scenario == Scenario::decay)
    require(field.kind == field::FieldKind::cfcfg, "infield and decay require field.kind = cfCFG");
  require(fit.half_window > 0.0, "fit.half_window_ghz must be > 0");
  require(fit.initial_j >= 0, "fit.initial_j must be >= 0");
  require(fit.window_stop > fit.window_start, "fit: window_stop_ps must exceed window_start_ps");
  require(fit.band_lo >= 0.0 && fit.band_hi >= 0.0, "fit: band limits must be >= 0");
}

namespace detail {

inline std::string trim(const std::string& s) {
  const auto a = s.find_first_not_of(" \t\r");
  if (a == std::string::npos) return "";
  const auto b = s.find_last_not_of(" \t\r");
  return s.substr(a, b - a + 1);
}

inline double to_double(const std::string& key, const std::string& v) {
  std::size_t used = 0;
  double out = 0.0;
  try {
    out = std::stod(v, &used);
  } catch (const std::exception&) {
    used = 0;
  }
  if (used != v.size() || v.empty() || !std::isfinite(out)) throw ConfigError(key + ": expected a number, got '" + v + "'");
  return out;
}

inline long long to_integer(const std::string& key, const std::string& v) {
  std::size_t used = 0;
  long long out = 0;
  try {
    out = std::stoll(v, &used);
  } catch (const std::exception&) {
    used = 0;
  }
  if (used != v.size() || v.empty()) throw ConfigError(key + ": expected an integer, got '" + v + "'");
  return out;
}

inline bool to_bool(const std::string& key, const std::string& v) {
  if (v == "true") return true;
  if (v == "false") return false;
  throw ConfigError(key + ": expected true or false, got '" + v + "'");
}

inline std::string number(double v) {
  // Shortest text that reads back to the same double.
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ull;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ull;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBull;
  return x ^ (x >> 31);
}

}  // namespace detail

/// Independent sampler seed for sub-stream `stream` of a run.
inline std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream) {
  return detail::splitmix64(detail::splitmix64(seed) ^ (stream + 1) * 0xD1342543DE82EF95ull);
}

using KeyValues = std::map<std::string, std::string>;

/// Parses `key = value` lines. Blank lines and lines starting with '#' are
/// skipped. Duplicate keys and malformed lines are errors.
inline KeyValues parse_key_values(const std::string& text) {
  KeyValues kv;
  std::istringstream in(text);
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const std::string t = detail::trim(line);
    if (t.empty() || t[0] == '#') continue;
    const auto eq = t.find('=');
    if (eq == std::string::npos)
      throw ConfigError("line " + std::to_string(lineno) + ": expected 'key = value'");
    const std::string key = detail::trim(t.substr(0, eq));
    const std::string value = detail::trim(t.substr(eq + 1));
    if (key.empty()) throw ConfigError("line " + std::to_string(lineno) + ": empty key");
    if (value.empty()) throw ConfigError(key + ": missing value");
    if (!kv.emplace(key, value).second) throw ConfigError(key + ": duplicate key");
  }
  return kv;
}

/// Shipped defaults for each experiment.
inline Config default_config(Scenario s) {
  Config c;
  c.scenario = s;
  switch (s) {
    case Scenario::infield:
      c.field.envelope.fwhm = 400.0;
      c.field.envelope.truncation_fwhm = 1.25;
      c.field.f0 = 8.5;
      c.delays = {-200.0, 200.0, 2.0};
      break;
    case Scenario::scan:
      c.field.envelope.fwhm = 200.0;
      c.field.envelope.truncation_fwhm = 1.25;
      break;
    case Scenario::decay:
      c.field.envelope.fwhm = 200.0;
      c.field.envelope.truncation_fwhm = 1.25;
      c.field.f0 = 8.5;
      c.delays = {-400.0, 3300.0, 25.0};
      break;
    case Scenario::adiabatic_reference:
      c.field.kind = field::FieldKind::linear_static;
      c.field.envelope.fwhm = 200.0;
      c.field.envelope.truncation_fwhm = 1.25;
      c.delays = {-400.0, 3300.0, 25.0};
      break;
  }
  c.validate();
  return c;
}

namespace detail {

inline const std::vector<std::string>& required_keys(Scenario s) {
  static const std::vector<std::string> common{"scenario", "seed", "n_ions", "molecule.preset", "numerics.j_max",
                                               "numerics.dt_ps"};
  static const std::vector<std::string> timed = [] {
    auto v = common;
    for (const char* k : {"delays.start_ps", "delays.stop_ps", "delays.step_ps"}) v.emplace_back(k);
    return v;
  }();
  static const std::vector<std::string> with_f0 = [] {
    auto v = timed;
    v.emplace_back("field.f0_ghz");
    return v;
  }();
  static const std::vector<std::string> scan = [] {
    auto v = common;
    for (const char* k : {"scan.f_start_ghz", "scan.f_stop_ghz", "scan.points", "scan.probe_delay_ps"}) v.emplace_back(k);
    return v;
  }();
  switch (s) {
    case Scenario::scan: return scan;
    case Scenario::adiabatic_reference: return timed;
    default: return with_f0;
  }
}

}  // namespace detail

/// Builds a configuration from key-value pairs. Keys under `manifest.` are
/// ignored so that a run manifest can be used as a configuration.
inline Config config_from_key_values(const KeyValues& kv) {
  auto it = kv.find("scenario");
  if (it == kv.end()) throw ConfigError("missing required key 'scenario'");
  const Scenario scenario = scenario_from_string(it->second);
  for (const auto& key : detail::required_keys(scenario)) {
    if (!kv.count(key)) throw ConfigError("missing required key '" + key + "'");
  }
  // Optional keys fall back to the scenario defaults.
  Config c = default_config(scenario);
  c.molecule_preset = kv.at("molecule.preset");
  if (c.molecule_preset == "custom") {
    for (const char* k : {"molecule.B_x", "molecule.B_y", "molecule.B_z", "molecule.D", "molecule.delta_alpha",
                          "molecule.T", "molecule.environment"}) {
      if (!kv.count(k)) throw ConfigError(std::string("missing required key '") + k + "' (molecule.preset = custom)");
    }
    c.molecule = rotor::RotorParams{};
  } else {
    c.molecule = molecule_preset(c.molecule_preset);
  }

  using Setter = std::function<void(const std::string&, const std::string&)>;
  const std::map<std::string, Setter> setters{
      {"scenario", [](const std::string&, const std::string&) {}},
      {"molecule.preset", [](const std::string&, const std::string&) {}},
      {"seed", [&](const std::string& k, const std::string& v) {
         const auto s = detail::to_integer(k, v);
         if (s < 0) throw ConfigError("seed must be >= 0");
         c.seed = static_cast<std::uint64_t>(s);
       }},
      {"n_ions", [&](const std::string& k, const std::string& v) {
         const auto n = detail::to_integer(k, v);
         if (n < 1) throw ConfigError("n_ions must be >= 1");
         c.n_ions = static_cast<std::size_t>(n);
       }},
      {"molecule.B_x", [&](const std::string& k, const std::string& v) { c.molecule.B_x = detail::to_double(k, v); }},
      {"molecule.B_y", [&](const std::string& k, const std::string& v) { c.molecule.B_y = detail::to_double(k, v); }},
      {"molecule.B_z", [&](const std::string& k, const std::string& v) { c.molecule.B_z = detail::to_double(k, v); }},
      {"molecule.D", [&](const std::string& k, const std::string& v) { c.molecule.D = detail::to_double(k, v); }},
      {"molecule.delta_alpha",
       [&](const std::string& k, const std::string& v) { c.molecule.delta_alpha = detail::to_double(k, v); }},
      {"molecule.T", [&](const std::string& k, const std::string& v) { c.molecule.T = detail::to_double(k, v); }},
      {"molecule.environment", [&](const std::string& k, const std::string& v) {
         if (v == "gas") c.molecule.environment = rotor::Environment::gas;
         else if (v == "droplet") c.molecule.environment = rotor::Environment::droplet;
         else throw ConfigError(k + ": expected gas or droplet");
       }},
      {"field.kind", [&](const std::string& k, const std::string& v) {
         try {
           c.field.kind = field::field_kind_from_string(v);
         } catch (const std::invalid_argument& e) {
           throw ConfigError(k + ": " + e.what());
         }
       }},
      {"field.f0_ghz", [&](const std::string& k, const std::string& v) { c.field.f0 = detail::to_double(k, v); }},
      {"field.drift_spread_ghz", [&](const std::string& k, const std::string& v) { c.drift_spread = detail::to_double(k, v); }},
      {"field.phase0_rad", [&](const std::string& k, const std::string& v) { c.field.phase0 = detail::to_double(k, v); }},
      {"field.envelope", [&](const std::string& k, const std::string& v) {
         try {
           c.field.envelope.shape = field::envelope_shape_from_string(v);
         } catch (const std::invalid_argument& e) {
           throw ConfigError(k + ": " + e.what());
         }
       }},
      {"field.peak_intensity_w_cm2",
       [&](const std::string& k, const std::string& v) { c.field.envelope.peak_intensity = detail::to_double(k, v); }},
      {"field.fwhm_ps", [&](const std::string& k, const std::string& v) { c.field.envelope.fwhm = detail::to_double(k, v); }},
      {"field.truncation_fwhm",
       [&](const std::string& k, const std::string& v) { c.field.envelope.truncation_fwhm = detail::to_double(k, v); }},
      {"field.ramp_ps", [&](const std::string& k, const std::string& v) { c.field.envelope.ramp = detail::to_double(k, v); }},
      {"relax.enabled", [&](const std::string& k, const std::string& v) { c.relax_enabled = detail::to_bool(k, v); }},
      {"relax.during_pulse", [&](const std::string& k, const std::string& v) { c.relax_during_pulse = detail::to_bool(k, v); }},
      {"relax.tau_coh_ps", [&](const std::string& k, const std::string& v) { c.tau_coh = detail::to_double(k, v); }},
      {"relax.tau_pop_ps", [&](const std::string& k, const std::string& v) { c.tau_pop = detail::to_double(k, v); }},
      {"delays.start_ps", [&](const std::string& k, const std::string& v) { c.delays.start = detail::to_double(k, v); }},
      {"delays.stop_ps", [&](const std::string& k, const std::string& v) { c.delays.stop = detail::to_double(k, v); }},
      {"delays.step_ps", [&](const std::string& k, const std::string& v) { c.delays.step = detail::to_double(k, v); }},
      {"scan.f_start_ghz", [&](const std::string& k, const std::string& v) { c.scan.f_start = detail::to_double(k, v); }},
      {"scan.f_stop_ghz", [&](const std::string& k, const std::string& v) { c.scan.f_stop = detail::to_double(k, v); }},
      {"scan.points", [&](const std::string& k, const std::string& v) { c.scan.points = static_cast<int>(detail::to_integer(k, v)); }},
      {"scan.probe_delay_ps", [&](const std::string& k, const std::string& v) { c.scan.probe_delay = detail::to_double(k, v); }},
      {"fit.band_lo_ghz", [&](const std::string& k, const std::string& v) { c.fit.band_lo = detail::to_double(k, v); }},
      {"fit.band_hi_ghz", [&](const std::string& k, const std::string& v) { c.fit.band_hi = detail::to_double(k, v); }},
      {"fit.window_start_ps", [&](const std::string& k, const std::string& v) { c.fit.window_start = detail::to_double(k, v); }},
      {"fit.window_stop_ps", [&](const std::string& k, const std::string& v) { c.fit.window_stop = detail::to_double(k, v); }},
      {"fit.plateau_delay_ps", [&](const std::string& k, const std::string& v) { c.fit.plateau_delay = detail::to_double(k, v); }},
      {"fit.plateau_halfwidth_ps",
       [&](const std::string& k, const std::string& v) { c.fit.plateau_halfwidth = detail::to_double(k, v); }},
      {"fit.peak_model", [&](const std::string& k, const std::string& v) {
         try {
           c.fit.peak_model = analysis::peak_model_from_string(v);
         } catch (const std::invalid_argument& e) {
           throw ConfigError(k + ": " + e.what());
         }
       }},
      {"fit.half_window_ghz", [&](const std::string& k, const std::string& v) { c.fit.half_window = detail::to_double(k, v); }},
      {"fit.initial_j", [&](const std::string& k, const std::string& v) { c.fit.initial_j = static_cast<int>(detail::to_integer(k, v)); }},
      {"fit.distortion_aware", [&](const std::string& k, const std::string& v) { c.fit.distortion_aware = detail::to_bool(k, v); }},
      {"numerics.j_max", [&](const std::string& k, const std::string& v) { c.j_max = static_cast<int>(detail::to_integer(k, v)); }},
      {"numerics.dt_ps", [&](const std::string& k, const std::string& v) { c.dt = detail::to_double(k, v); }},
      {"numerics.diagnostics", [&](const std::string& k, const std::string& v) { c.diagnostics = detail::to_bool(k, v); }},
  };

  for (const auto& [key, value] : kv) {
    if (key.rfind("manifest.", 0) == 0) continue;
    const auto s = setters.find(key);
    if (s == setters.end()) throw ConfigError("unknown key '" + key + "'");
    if (c.molecule_preset != "custom" && key.rfind("molecule.", 0) == 0 && key != "molecule.preset" &&
        key != "molecule.T" && key != "molecule.delta_alpha") {
      // Presets fix the rotational constants; only T and delta_alpha may be overridden.
      throw ConfigError(key + ": not allowed with a named preset (use molecule.preset = custom)");
    }
    s->second(key, value);
  }
  c.validate();
  return c;
}

inline Config parse_config(const std::string& text) { return config_from_key_values(parse_key_values(text)); }

inline Config load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file '" + path + "'");
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_config(ss.str());
}

/// Canonical, complete key-value form of a configuration.
inline std::string to_text(const Config& c) {
  using detail::number;
  std::ostringstream o;
  auto put = [&](const std::string& k, const std::string& v) { o << k << " = " << v << '\n'; };
  put("scenario", to_string(c.scenario));
  put("seed", std::to_string(c.seed));
  put("n_ions", std::to_string(c.n_ions));
  put("molecule.preset", c.molecule_preset);
  if (c.molecule_preset == "custom") {
    put("molecule.B_x", number(c.molecule.B_x));
    put("molecule.B_y", number(c.molecule.B_y));
    put("molecule.B_z", number(c.molecule.B_z));
    put("molecule.D", number(c.molecule.D));
    put("molecule.environment", c.molecule.environment == rotor::Environment::gas ? "gas" : "droplet");
  }
  put("molecule.delta_alpha", number(c.molecule.delta_alpha));
  put("molecule.T", number(c.molecule.T));
  put("field.kind", field::to_string(c.field.kind));
  if (c.scenario != Scenario::scan && c.field.kind != field::FieldKind::linear_static)
    put("field.f0_ghz", number(c.field.f0));
  put("field.drift_spread_ghz", number(c.drift_spread));
  put("field.phase0_rad", number(c.field.phase0));
  put("field.envelope", field::to_string(c.field.envelope.shape));
  put("field.peak_intensity_w_cm2", number(c.field.envelope.peak_intensity));
  put("field.fwhm_ps", number(c.field.envelope.fwhm));
  put("field.truncation_fwhm", number(c.field.envelope.truncation_fwhm));
  put("field.ramp_ps", number(c.field.envelope.ramp));
  put("relax.enabled", c.relax_enabled ? "true" : "false");
  put("relax.during_pulse", c.relax_during_pulse ? "true" : "false");
  put("relax.tau_coh_ps", number(c.tau_coh));
  put("relax.tau_pop_ps", number(c.tau_pop));
  if (c.scenario == Scenario::scan) {
    put("scan.f_start_ghz", number(c.scan.f_start));
    put("scan.f_stop_ghz", number(c.scan.f_stop));
    put("scan.points", std::to_string(c.scan.points));
    put("scan.probe_delay_ps", number(c.scan.probe_delay));
  } else {
    put("delays.start_ps", number(c.delays.start));
    put("delays.stop_ps", number(c.delays.stop));
    put("delays.step_ps", number(c.delays.step));
  }
  put("fit.band_lo_ghz", number(c.fit.band_lo));
  put("fit.band_hi_ghz", number(c.fit.band_hi));
  put("fit.window_start_ps", number(c.fit.window_start));
  put("fit.window_stop_ps", number(c.fit.window_stop));
  put("fit.plateau_delay_ps", number(c.fit.plateau_delay));
  put("fit.plateau_halfwidth_ps", number(c.fit.plateau_halfwidth));
  put("fit.peak_model", analysis::to_string(c.fit.peak_model));
  put("fit.half_window_ghz", number(c.fit.half_window));
  put("fit.initial_j", std::to_string(c.fit.initial_j));
  put("fit.distortion_aware", c.fit.distortion_aware ? "true" : "false");
  put("numerics.j_max", std::to_string(c.j_max));
  put("numerics.dt_ps", number(c.dt));
  put("numerics.diagnostics", c.diagnostics ? "true" : "false");
  return o.str();
}

// ---------------------------------------------------------------------------
// Simulation helpers

struct ExactPoint {
  double exact = 0.0;
  observables::AxisDistribution distribution;
};

namespace detail {

// Runs the thermal ensemble and hands the density matrix at each time to `emit`.
template <class Emit>
void simulate_density(const Config& c, const dynamics::RotorSystem& sys, const field::FieldWaveform& f,
                      std::span<const double> times, double dt, bool relax, unsigned workers, Emit&& emit) {
  const double t0 = std::min(f.envelope.start(), times.empty() ? f.envelope.start() : times.front());
  dynamics::EnsembleOptions opt;
  opt.propagation.dt = dt;
  opt.propagation.u0 = c.u0();
  opt.workers = workers;
  if (relax) opt.relax = dynamics::default_relaxation(sys, c.tau_coh, c.tau_pop);
  if (relax && c.relax_during_pulse) {
    const auto rhos = dynamics::propagate_density_dissipative(sys, dynamics::thermal_density(sys), t0, f, times,
                                                              opt.propagation, *opt.relax);
    for (std::size_t k = 0; k < rhos.size(); ++k) emit(k, rhos[k]);
    return;
  }
  auto [weights, members] = dynamics::thermal_members(sys, t0);
  dynamics::ensemble_observe(sys, weights, members, f, times, opt, emit);
}

}  // namespace detail

/// Exact observable and axis distribution at each time of `times`.
inline std::vector<ExactPoint> simulate_points(const Config& c, const field::FieldWaveform& f, std::span<const double> times,
                                               int j_max, double dt, bool relax, unsigned workers) {
  dynamics::RotorSystem sys(j_max, c.molecule);
  const observables::Detector det(sys);
  std::vector<ExactPoint> out;
  out.reserve(times.size());
  detail::simulate_density(c, sys, f, times, dt, relax, workers, [&](std::size_t, const Eigen::MatrixXcd& rho) {
    out.push_back({det.exact(rho), observables::AxisDistribution(sys.basis(), rho)});
  });
  return out;
}

/// Exact observable only.
inline std::vector<double> simulate_exact(const Config& c, const field::FieldWaveform& f, std::span<const double> times,
                                          int j_max, double dt, bool relax, unsigned workers) {
  dynamics::RotorSystem sys(j_max, c.molecule);
  const observables::Detector det(sys);
  std::vector<double> out;
  detail::simulate_density(c, sys, f, times, dt, relax, workers,
                           [&](std::size_t, const Eigen::MatrixXcd& rho) { out.push_back(det.exact(rho)); });
  return out;
}

/// Samples each point with its own derived seed; results do not depend on
/// the worker count.
inline analysis::AlignmentTrace sample_points(const std::vector<ExactPoint>& pts, std::span<const double> xs,
                                              std::size_t n_ions, std::uint64_t seed, std::uint64_t stream_base,
                                              unsigned workers) {
  std::vector<observables::SampledValue> s(pts.size());
  parallel_for(pts.size(), workers, [&](std::size_t i) {
    s[i] = observables::cos2theta_2d_sampled(pts[i].distribution, n_ions, derive_seed(seed, stream_base + i));
  });
  analysis::AlignmentTrace tr;
  for (std::size_t i = 0; i < pts.size(); ++i) tr.push_back(xs[i], s[i].value, s[i].std_error);
  return tr;
}

struct Diagnostics {
  bool computed = false;
  double dt_halving_delta = 0.0;
  double jmax_delta = 0.0;
  int jmax_compared = 0;
};

/// Largest change of the exact observable at a few check times when the
/// step is halved and when J_max grows by 4.
inline Diagnostics convergence_diagnostics(const Config& c, const field::FieldWaveform& f, std::vector<double> times,
                                           unsigned workers) {
  if (times.size() > 12) {
    std::vector<double> pick;
    for (std::size_t k = 0; k < 12; ++k) pick.push_back(times[k * (times.size() - 1) / 11]);
    times = pick;
  }
  Diagnostics d;
  d.computed = true;
  d.jmax_compared = c.j_max + 4;
  const auto base = simulate_exact(c, f, times, c.j_max, c.dt, c.relax_enabled, workers);
  const auto half = simulate_exact(c, f, times, c.j_max, 0.5 * c.dt, c.relax_enabled, workers);
  const auto big = simulate_exact(c, f, times, c.j_max + 4, c.dt, c.relax_enabled, workers);
  for (std::size_t k = 0; k < times.size(); ++k) {
    d.dt_halving_delta = std::max(d.dt_halving_delta, std::abs(base[k] - half[k]));
    d.jmax_delta = std::max(d.jmax_delta, std::abs(base[k] - big[k]));
  }
  return d;
}

// ---------------------------------------------------------------------------
// Experiments

struct RunOptions {
  unsigned workers = 1;
};

struct InfieldResult {
  analysis::AlignmentTrace trace;
  std::vector<double> exact;
  analysis::SinusoidFit fit;
  Diagnostics diagnostics;
};

inline analysis::FrequencyBand infield_band(const Config& c) {
  analysis::FrequencyBand band;
  band.lo = c.fit.band_lo > 0.0 ? c.fit.band_lo : c.field.f0;
  band.hi = c.fit.band_hi > 0.0 ? c.fit.band_hi : 3.0 * c.field.f0;
  if (!(band.hi > band.lo)) band = {};
  return band;
}

inline InfieldResult run_infield(const Config& c, const RunOptions& ro = {}) {
  if (c.scenario != Scenario::infield) throw ConfigError("run_infield: scenario must be infield");
  c.validate();
  const auto f = c.waveform();
  const auto times = c.delays.points();
  InfieldResult r;
  try {
    const auto pts = simulate_points(c, f, times, c.j_max, c.dt, c.relax_enabled, ro.workers);
    for (const auto& p : pts) r.exact.push_back(p.exact);
    r.trace = sample_points(pts, times, c.n_ions, c.seed, 0, ro.workers);
  } catch (const std::exception& e) {
    throw std::runtime_error(std::string("infield simulation failed: ") + e.what());
  }
  try {
    r.fit = analysis::fit_decaying_sinusoid(r.trace, infield_band(c));
  } catch (const std::exception& e) {
    throw std::runtime_error(std::string("infield fit failed: ") + e.what());
  }
  if (c.diagnostics) r.diagnostics = convergence_diagnostics(c, f, times, ro.workers);
  return r;
}

struct ScanResult {
  analysis::AlignmentTrace scan;  // delays hold the rotation frequencies, GHz
  std::vector<double> exact;
  std::optional<analysis::PeakFit> fit;
  std::string fit_error;
  double byz = 0.0;
  double byz_error = 0.0;
  Diagnostics diagnostics;
};

inline ScanResult run_scan(const Config& c, const RunOptions& ro = {}) {
  if (c.scenario != Scenario::scan) throw ConfigError("run_scan: scenario must be scan");
  c.validate();
  const auto freqs = c.scan.frequencies();
  const std::vector<double> probe{c.scan.probe_delay};
  std::vector<std::optional<ExactPoint>> pts(freqs.size());
  std::vector<std::string> errors(freqs.size());
  // Points are independent: one simulation per frequency.
  parallel_for(freqs.size(), ro.workers, [&](std::size_t i) {
    try {
      auto v = simulate_points(c, c.field_at(freqs[i]), probe, c.j_max, c.dt, c.relax_enabled, 1);
      pts[i].emplace(std::move(v.front()));
    } catch (const std::exception& e) {
      errors[i] = e.what();
    }
  });
  for (std::size_t i = 0; i < freqs.size(); ++i) {
    if (!pts[i]) throw std::runtime_error("scan point " + detail::number(freqs[i]) + " GHz failed: " + errors[i]);
  }
  std::vector<ExactPoint> flat;
  for (auto& p : pts) flat.push_back(std::move(*p));
  ScanResult r;
  for (const auto& p : flat) r.exact.push_back(p.exact);
  r.scan = sample_points(flat, freqs, c.n_ions, c.seed, 0, ro.workers);
  try {
    r.fit = analysis::fit_resonance_peak(r.scan, c.fit.peak_model, c.fit.half_window);
    r.byz = c.fit.distortion_aware ? analysis::extract_byz(r.fit->center, c.fit.initial_j, c.molecule.D)
                                   : analysis::extract_byz(r.fit->center, c.fit.initial_j);
    r.byz_error = analysis::extract_byz_error(r.fit->center_error, c.fit.initial_j);
  } catch (const analysis::FitError& e) {
    r.fit_error = e.what();
  }
  if (c.diagnostics) {
    const double f_check = r.fit ? r.fit->center : freqs[freqs.size() / 2];
    r.diagnostics = convergence_diagnostics(c, c.field_at(f_check), probe, ro.workers);
  }
  return r;
}

struct PlateauCheck {
  double delay = 0.0;
  double value = 0.0;    // mean over the window
  double stderr_ = 0.0;  // combined standard error of that mean
  double significance = 0.0;
  std::size_t points = 0;
};

struct DecayResult {
  analysis::AlignmentTrace trace;
  std::vector<double> exact;
  analysis::AlignmentTrace reference;
  std::vector<double> reference_exact;
  std::optional<analysis::DecayFit> fit;
  std::string fit_error;
  PlateauCheck plateau;
  Diagnostics diagnostics;
};

inline PlateauCheck plateau_check(const analysis::AlignmentTrace& tr, double center, double halfwidth) {
  PlateauCheck p;
  p.delay = center;
  double var = 0.0;
  for (std::size_t i = 0; i < tr.size(); ++i) {
    if (std::abs(tr.delays[i] - center) <= halfwidth + 1e-9) {
      p.value += tr.values[i];
      var += tr.stderrs[i] * tr.stderrs[i];
      ++p.points;
    }
  }
  if (p.points == 0) return p;
  const double n = static_cast<double>(p.points);
  p.value /= n;
  p.stderr_ = std::sqrt(var) / n;
  p.significance = p.stderr_ > 0.0 ? (p.value - 0.5) / p.stderr_ : 0.0;
  return p;
}

inline DecayResult run_decay(const Config& c, const RunOptions& ro = {}) {
  if (c.scenario != Scenario::decay) throw ConfigError("run_decay: scenario must be decay");
  c.validate();
  const auto times = c.delays.points();
  if (times.back() < 3300.0 - 1e-9) throw ConfigError("decay: delays must extend to at least 3300 ps");
  DecayResult r;
  const auto f = c.waveform();
  const auto ref_field = field::make_linear_static(c.field.envelope);
  try {
    const auto pts = simulate_points(c, f, times, c.j_max, c.dt, c.relax_enabled, ro.workers);
    for (const auto& p : pts) r.exact.push_back(p.exact);
    r.trace = sample_points(pts, times, c.n_ions, c.seed, 0, ro.workers);
    const auto ref = simulate_points(c, ref_field, times, c.j_max, c.dt, c.relax_enabled, ro.workers);
    for (const auto& p : ref) r.reference_exact.push_back(p.exact);
    r.reference = sample_points(ref, times, c.n_ions, c.seed, 1u << 20, ro.workers);
  } catch (const std::exception& e) {
    throw std::runtime_error(std::string("decay simulation failed: ") + e.what());
  }
  analysis::AlignmentTrace window;
  for (std::size_t i = 0; i < r.trace.size(); ++i) {
    const double t = r.trace.delays[i];
    if (t >= c.fit.window_start - 1e-9 && t <= c.fit.window_stop + 1e-9)
      window.push_back(t, r.trace.values[i], r.trace.stderrs[i]);
  }
  try {
    r.fit = analysis::fit_exponential_decay(window, 0.5);
  } catch (const std::exception& e) {
    r.fit_error = e.what();
  }
  r.plateau = plateau_check(r.trace, c.fit.plateau_delay, c.fit.plateau_halfwidth);
  if (c.diagnostics) {
    std::vector<double> check;
    for (double t : times)
      if (t <= f.envelope.end() + 200.0) check.push_back(t);
    r.diagnostics = convergence_diagnostics(c, f, check, ro.workers);
  }
  return r;
}

struct ReferenceResult {
  analysis::AlignmentTrace trace;
  std::vector<double> exact;
  Diagnostics diagnostics;
};

inline ReferenceResult run_adiabatic_reference(const Config& c, const RunOptions& ro = {}) {
  if (c.scenario != Scenario::adiabatic_reference) throw ConfigError("run_adiabatic_reference: wrong scenario");
  c.validate();
  const auto times = c.delays.points();
  const auto f = c.waveform();
  ReferenceResult r;
  const auto pts = simulate_points(c, f, times, c.j_max, c.dt, c.relax_enabled, ro.workers);
  for (const auto& p : pts) r.exact.push_back(p.exact);
  r.trace = sample_points(pts, times, c.n_ions, c.seed, 0, ro.workers);
  if (c.diagnostics) r.diagnostics = convergence_diagnostics(c, f, times, ro.workers);
  return r;
}

// ---------------------------------------------------------------------------
// Validation suite

struct Check {
  std::string name;
  bool passed = false;
  std::string detail;
};

struct ValidationReport {
  std::vector<Check> checks;
  bool passed() const {
    return std::all_of(checks.begin(), checks.end(), [](const Check& c) { return c.passed; });
  }
};

inline ValidationReport validate(const Config& c, const RunOptions& ro = {}) {
  c.validate();
  ValidationReport rep;
  auto add = [&](std::string name, bool ok, std::string detail) { rep.checks.push_back({std::move(name), ok, std::move(detail)}); };
  auto sci = [](double v) {
    char b[32];
    std::snprintf(b, sizeof b, "%.3e", v);
    return std::string(b);
  };

  // Angle operators against spherical quadrature, J <= 8.
  {
    const int jq = 8;
    double worst = 0.0;
    for (auto kind : {rotor::AngleKind::xx, rotor::AngleKind::yy, rotor::AngleKind::zz, rotor::AngleKind::xz})
      for (int jp = 0; jp <= jq; ++jp)
        for (int mp = -jp; mp <= jp; ++mp)
          for (int j = std::max(0, jp - 2); j <= std::min(jq, jp + 2); ++j)
            for (int m = std::max(-j, mp - 2); m <= std::min(j, mp + 2); ++m)
              worst = std::max(worst, std::abs(rotor::angle_element(kind, jp, mp, j, m) -
                                               rotor::quadrature_oracle(kind, jp, mp, j, m)));
    const rotor::Basis b(c.j_max);
    const auto n = static_cast<Eigen::Index>(b.size());
    const double comp = (rotor::angle_operator(rotor::AngleKind::xx, b) + rotor::angle_operator(rotor::AngleKind::yy, b) +
                         rotor::angle_operator(rotor::AngleKind::zz, b) - Eigen::MatrixXd::Identity(n, n))
                            .cwiseAbs()
                            .maxCoeff();
    add("operator_oracle", worst < 1e-8 && comp < 1e-12,
        "max element error " + sci(worst) + " (tol 1e-8), completeness " + sci(comp) + " (tol 1e-12)");
  }

  // The scenario's field, or the middle of the scan grid.
  field::FieldWaveform f;
  std::vector<double> times;
  if (c.scenario == Scenario::scan) {
    const auto fr = c.scan.frequencies();
    f = c.field_at(fr[fr.size() / 2]);
    times = {c.scan.probe_delay};
  } else {
    f = c.waveform();
    for (double t : c.delays.points())
      if (t <= f.envelope.end() + 200.0) times.push_back(t);
    if (times.empty()) times = {c.delays.start};
  }

  // Lab frame against rotating frame, constant rotation frequency.
  if (f.kind == field::FieldKind::cfcfg) {
    auto g = f;
    g.drift_rate = 0.0;
    const int jf = std::min(c.j_max, 10);
    dynamics::RotorSystem sys(jf, c.molecule);
    dynamics::PropagationParams pp{c.dt, c.u0()};
    const auto init = sys.basis_state(0, 0, g.envelope.start());
    const std::vector<double> grid{g.envelope.center, g.envelope.end()};
    try {
      const auto lab = dynamics::propagate(sys, init, g, grid, pp);
      const auto rot = dynamics::propagate_rotating_frame(sys, init, g, grid, pp);
      double worst = 0.0;
      for (std::size_t k = 0; k < grid.size(); ++k)
        worst = std::max(worst, (lab[k].amplitudes - rot[k].amplitudes).norm());
      add("frame_equivalence", worst < 1e-4, "max state difference " + sci(worst) + " (tol 1e-4)");
    } catch (const std::exception& e) {
      add("frame_equivalence", false, e.what());
    }
  } else {
    add("frame_equivalence", true, "skipped: static polarization");
  }

  // Convergence in dt and J_max; also catches norm drift.
  Diagnostics d;
  try {
    d = convergence_diagnostics(c, f, times, ro.workers);
    add("dt_convergence", d.dt_halving_delta < 1e-6, "dt-halving change " + sci(d.dt_halving_delta) + " (tol 1e-6)");
    add("jmax_convergence", d.jmax_delta < 1e-6,
        "J_max " + std::to_string(c.j_max) + " -> " + std::to_string(d.jmax_compared) + " change " + sci(d.jmax_delta) +
            " (tol 1e-6)");
  } catch (const std::exception& e) {
    add("propagation", false, e.what());
  }

  // Sampler against the exact value at the last check time.
  try {
    const std::vector<double> last{times.back()};
    const auto pts = simulate_points(c, f, last, c.j_max, c.dt, c.relax_enabled, ro.workers);
    const std::size_t seeds = 20;
    std::vector<observables::SampledValue> s(seeds);
    parallel_for(seeds, ro.workers, [&](std::size_t i) {
      s[i] = observables::cos2theta_2d_sampled(pts[0].distribution, c.n_ions, derive_seed(c.seed, 1000 + i));
    });
    double mean = 0.0, var = 0.0;
    std::size_t violations = 0;
    for (const auto& v : s) {
      mean += v.value / seeds;
      var += v.std_error * v.std_error;
      violations += v.bound_violations;
    }
    const double err = std::sqrt(var) / seeds;
    const double z = std::abs(mean - pts[0].exact) / err;
    add("sampler_vs_exact", z < 3.0 && violations == 0,
        "mean of " + std::to_string(seeds) + " seeds off by " + sci(z) + " standard errors, bound violations " +
            std::to_string(violations));
  } catch (const std::exception& e) {
    add("sampler_vs_exact", false, e.what());
  }
  return rep;
}

// ---------------------------------------------------------------------------
// Serialization

namespace detail {
inline std::string csv_number(double v) {
  char b[40];
  std::snprintf(b, sizeof b, "%.12g", v);
  return b;
}
}  // namespace detail

inline std::string trace_csv(const analysis::AlignmentTrace& tr, const std::string& x_column = "delay_ps") {
  std::string out = x_column + ",value,stderr\n";
  for (std::size_t i = 0; i < tr.size(); ++i) {
    out += detail::csv_number(tr.delays[i]) + ',' + detail::csv_number(tr.values[i]) + ',' +
           detail::csv_number(tr.stderrs[i]) + '\n';
  }
  return out;
}

/// Reads delay_ps,value,stderr (or fcfg_ghz,value,stderr) CSV text.
inline analysis::AlignmentTrace parse_trace_csv(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  if (!std::getline(in, line)) throw ConfigError("trace CSV is empty");
  const std::string header = detail::trim(line);
  if (header != "delay_ps,value,stderr" && header != "fcfg_ghz,value,stderr")
    throw ConfigError("trace CSV: unexpected header '" + header + "'");
  analysis::AlignmentTrace tr;
  int lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    const std::string t = detail::trim(line);
    if (t.empty()) continue;
    std::vector<std::string> cols;
    std::stringstream ss(t);
    std::string col;
    while (std::getline(ss, col, ',')) cols.push_back(detail::trim(col));
    if (cols.size() != 3) throw ConfigError("trace CSV line " + std::to_string(lineno) + ": expected 3 columns");
    const std::string where = "trace CSV line " + std::to_string(lineno);
    tr.push_back(detail::to_double(where, cols[0]), detail::to_double(where, cols[1]), detail::to_double(where, cols[2]));
  }
  try {
    tr.validate();
  } catch (const std::invalid_argument& e) {
    throw ConfigError(std::string("trace CSV: ") + e.what());
  }
  return tr;
}

class Record {
 public:
  void put(const std::string& key, const std::string& value) { lines_ += key + " = " + value + '\n'; }
  void put(const std::string& key, double value) { put(key, detail::csv_number(value)); }
  void put(const std::string& key, bool value) { put(key, std::string(value ? "true" : "false")); }
  void put(const std::string& key, int value) { put(key, std::to_string(value)); }
  void put(const std::string& key, std::size_t value) { put(key, std::to_string(value)); }
  const std::string& str() const { return lines_; }

 private:
  std::string lines_;
};

inline Record sinusoid_record(const analysis::SinusoidFit& f) {
  Record r;
  r.put("model", std::string("decaying-sinusoid"));
  r.put("oscillating", f.oscillating);
  if (!f.oscillating) {
    r.put("note", f.note);
    return r;
  }
  r.put("status", std::string(analysis::to_string(f.status)));
  r.put("offset", f.offset);
  r.put("offset_err", std::sqrt(std::max(0.0, f.covariance(0, 0))));
  r.put("amplitude", f.amplitude);
  r.put("amplitude_err", f.amplitude_error());
  r.put("frequency_ghz", f.frequency);
  r.put("frequency_err_ghz", f.frequency_error());
  r.put("phase_rad", f.phase);
  r.put("damping_time_ps", f.damping_time);
  r.put("damping_rate_per_ps", f.damping_rate);
  r.put("damping_rate_err_per_ps", std::sqrt(std::max(0.0, f.covariance(4, 4))));
  r.put("rms_residual", f.rms);
  return r;
}

inline Record decay_record(const analysis::DecayFit& f) {
  Record r;
  r.put("model", std::string("fixed-offset-exponential"));
  r.put("status", std::string(analysis::to_string(f.status)));
  r.put("offset", f.offset);
  r.put("amplitude", f.amplitude);
  r.put("amplitude_err", f.amplitude_error);
  r.put("tau_ps", f.tau);
  r.put("tau_err_ps", f.tau_error);
  r.put("resolvable", f.resolvable);
  r.put("rms_residual", f.rms);
  return r;
}

inline Record peak_record(const analysis::PeakFit& f) {
  Record r;
  r.put("model", std::string(analysis::to_string(f.model)));
  r.put("status", std::string(analysis::to_string(f.status)));
  r.put("center_ghz", f.center);
  r.put("center_err_ghz", f.center_error);
  r.put("width_ghz", f.width);
  r.put("width_err_ghz", f.width_error);
  r.put("height", f.height);
  r.put("baseline", f.baseline);
  r.put("window_lo_ghz", f.window_lo);
  r.put("window_hi_ghz", f.window_hi);
  r.put("rms_residual", f.rms);
  return r;
}

inline std::string manifest_text(const Config& c, const std::string& command, const Diagnostics& d, double wall_time_s) {
  std::string out = "# run manifest; usable as a configuration file\n";
  out += to_text(c);
  Record r;
  r.put("manifest.tool_version", std::string(tool_version));
  r.put("manifest.command", command);
  r.put("manifest.seed", std::to_string(c.seed));
  r.put("manifest.u0_cm1", c.u0());
  if (d.computed) {
    r.put("manifest.dt_halving_delta", d.dt_halving_delta);
    r.put("manifest.jmax_delta", d.jmax_delta);
    r.put("manifest.jmax_compared", d.jmax_compared);
  } else {
    r.put("manifest.diagnostics", std::string("skipped"));
  }
  r.put("manifest.wall_time_s", wall_time_s);
  return out + r.str();
}

/// Long-format rows for plotting: series,x,y,yerr.
class PlotData {
 public:
  void add(const std::string& series, double x, double y, double yerr = 0.0) {
    rows_ += series + ',' + detail::csv_number(x) + ',' + detail::csv_number(y) + ',' + detail::csv_number(yerr) + '\n';
  }
  void add_trace(const std::string& series, const analysis::AlignmentTrace& tr) {
    for (std::size_t i = 0; i < tr.size(); ++i) add(series, tr.delays[i], tr.values[i], tr.stderrs[i]);
  }
  void add_curve(const std::string& series, std::span<const double> xs, std::span<const double> ys) {
    for (std::size_t i = 0; i < xs.size(); ++i) add(series, xs[i], ys[i]);
  }
  std::string str() const { return "series,x,y,yerr\n" + rows_; }

 private:
  std::string rows_;
};

}  // namespace centrifuge::runner
