#include <CLI11.hpp>

#include <chrono>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>

#include "centrifuge/runner.hpp"

namespace fs = std::filesystem;
using namespace centrifuge;

namespace {

constexpr int kOk = 0;
constexpr int kFailed = 1;
constexpr int kUsage = 2;

struct Common {
  std::string config;
  std::string out = "out";
  std::uint64_t seed = 0;
  bool seed_set = false;
  std::string format = "csv";
  bool plot_data = false;
  unsigned workers = 1;
};

void add_common(CLI::App* sub, Common& c, bool outputs) {
  sub->add_option("--config", c.config, "Configuration file (key = value)")->check(CLI::ExistingFile);
  sub->add_option("--workers", c.workers, "Worker threads")->check(CLI::Range(1u, 256u));
  if (!outputs) return;
  sub->add_option("--out", c.out, "Output directory");
  sub->add_option_function<std::uint64_t>(
      "--seed", [&c](const std::uint64_t& s) { c.seed = s, c.seed_set = true; }, "Override the configured seed");
  sub->add_option("--format", c.format, "Output format")->check(CLI::IsMember({"csv"}));
  sub->add_flag("--plot-data", c.plot_data, "Also write long-format plot_data.csv");
}

void write_file(const fs::path& p, const std::string& text) {
  std::ofstream out(p, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + p.string());
  out << text;
}

runner::Config resolve_config(const Common& c, runner::Scenario expected) {
  runner::Config cfg = c.config.empty() ? runner::default_config(expected) : runner::load_config(c.config);
  if (cfg.scenario != expected &&
      !(expected == runner::Scenario::decay && cfg.scenario == runner::Scenario::adiabatic_reference)) {
    throw runner::ConfigError("config scenario is '" + runner::to_string(cfg.scenario) + "', expected '" +
                              runner::to_string(expected) + "'");
  }
  if (c.seed_set) cfg.seed = c.seed;
  return cfg;
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

int run_experiment(const Common& c, runner::Scenario which, const std::string& command) {
  const auto t0 = std::chrono::steady_clock::now();
  const auto cfg = resolve_config(c, which);
  const fs::path dir(c.out);
  fs::create_directories(dir);
  const runner::RunOptions ro{c.workers};
  runner::PlotData plot;
  runner::Diagnostics diag;
  bool ok = true;

  switch (cfg.scenario) {
    case runner::Scenario::infield: {
      const auto r = runner::run_infield(cfg, ro);
      write_file(dir / "trace.csv", runner::trace_csv(r.trace));
      write_file(dir / "fit.txt", runner::sinusoid_record(r.fit).str());
      diag = r.diagnostics;
      plot.add_trace("sampled", r.trace);
      plot.add_curve("exact", r.trace.delays, r.exact);
      if (r.fit.oscillating) {
        std::cout << "fitted frequency " << r.fit.frequency << " +- " << r.fit.frequency_error() << " GHz (2 f_CFG = "
                  << 2.0 * cfg.field.f0 << "), amplitude " << r.fit.amplitude << '\n';
      } else {
        std::cout << "no oscillation: " << r.fit.note << '\n';
      }
      break;
    }
    case runner::Scenario::scan: {
      const auto r = runner::run_scan(cfg, ro);
      write_file(dir / "scan.csv", runner::trace_csv(r.scan, "fcfg_ghz"));
      diag = r.diagnostics;
      plot.add_trace("sampled", r.scan);
      plot.add_curve("exact", r.scan.delays, r.exact);
      if (r.fit) {
        auto rec = runner::peak_record(*r.fit);
        rec.put("byz_cm1", r.byz);
        rec.put("byz_err_cm1", r.byz_error);
        rec.put("initial_j", cfg.fit.initial_j);
        rec.put("distortion_aware", cfg.fit.distortion_aware);
        write_file(dir / "fit.txt", rec.str());
        std::cout << "peak " << r.fit->center << " +- " << r.fit->center_error << " GHz, width " << r.fit->width
                  << " GHz, B_yz " << r.byz << " +- " << r.byz_error << " cm^-1\n";
      } else {
        runner::Record rec;
        rec.put("model", std::string(analysis::to_string(cfg.fit.peak_model)));
        rec.put("error", r.fit_error);
        write_file(dir / "fit.txt", rec.str());
        std::cerr << "peak fit failed: " << r.fit_error << '\n';
        ok = false;
      }
      break;
    }
    case runner::Scenario::decay: {
      const auto r = runner::run_decay(cfg, ro);
      write_file(dir / "trace.csv", runner::trace_csv(r.trace));
      write_file(dir / "reference.csv", runner::trace_csv(r.reference));
      diag = r.diagnostics;
      plot.add_trace("sampled", r.trace);
      plot.add_curve("exact", r.trace.delays, r.exact);
      plot.add_trace("reference_sampled", r.reference);
      plot.add_curve("reference_exact", r.reference.delays, r.reference_exact);
      runner::Record rec;
      if (r.fit) {
        rec = runner::decay_record(*r.fit);
        std::cout << "tau " << r.fit->tau << " +- " << r.fit->tau_error << " ps, A " << r.fit->amplitude << '\n';
      } else {
        rec.put("model", std::string("fixed-offset-exponential"));
        rec.put("error", r.fit_error);
        std::cerr << "decay fit failed: " << r.fit_error << '\n';
        ok = false;
      }
      rec.put("window_start_ps", cfg.fit.window_start);
      rec.put("window_stop_ps", cfg.fit.window_stop);
      rec.put("plateau_delay_ps", r.plateau.delay);
      rec.put("plateau_value", r.plateau.value);
      rec.put("plateau_stderr", r.plateau.stderr_);
      rec.put("plateau_sigma_above_half", r.plateau.significance);
      rec.put("reference_final_exact", r.reference_exact.back());
      write_file(dir / "fit.txt", rec.str());
      break;
    }
    case runner::Scenario::adiabatic_reference: {
      const auto r = runner::run_adiabatic_reference(cfg, ro);
      write_file(dir / "trace.csv", runner::trace_csv(r.trace));
      runner::Record rec;
      rec.put("final_exact", r.exact.back());
      rec.put("max_exact", *std::max_element(r.exact.begin(), r.exact.end()));
      write_file(dir / "fit.txt", rec.str());
      diag = r.diagnostics;
      plot.add_trace("sampled", r.trace);
      plot.add_curve("exact", r.trace.delays, r.exact);
      std::cout << "final value " << r.exact.back() << '\n';
      break;
    }
  }
  if (c.plot_data) write_file(dir / "plot_data.csv", plot.str());
  write_file(dir / "manifest.txt", runner::manifest_text(cfg, command, diag, seconds_since(t0)));
  return ok ? kOk : kFailed;
}

int run_fit(const std::string& input, const std::string& model, const std::string& out, double offset,
            double band_lo, double band_hi, double window_start, double window_stop, const std::string& peak_model,
            double half_window, int initial_j) {
  std::ifstream in(input);
  if (!in) throw runner::ConfigError("cannot open trace '" + input + "'");
  std::stringstream ss;
  ss << in.rdbuf();
  auto trace = runner::parse_trace_csv(ss.str());
  runner::Record rec;
  if (model == "sinusoid") {
    analysis::FrequencyBand band;
    if (band_lo > 0.0) band.lo = band_lo;
    if (band_hi > 0.0) band.hi = band_hi;
    rec = runner::sinusoid_record(analysis::fit_decaying_sinusoid(trace, band));
  } else if (model == "decay") {
    analysis::AlignmentTrace w;
    for (std::size_t i = 0; i < trace.size(); ++i)
      if (trace.delays[i] >= window_start && trace.delays[i] <= window_stop)
        w.push_back(trace.delays[i], trace.values[i], trace.stderrs[i]);
    rec = runner::decay_record(analysis::fit_exponential_decay(w, offset));
  } else {
    const auto fit = analysis::fit_resonance_peak(trace, analysis::peak_model_from_string(peak_model), half_window);
    rec = runner::peak_record(fit);
    rec.put("byz_cm1", analysis::extract_byz(fit.center, initial_j));
    rec.put("byz_err_cm1", analysis::extract_byz_error(fit.center_error, initial_j));
  }
  rec.put("points", trace.size());
  if (out.empty()) {
    std::cout << rec.str();
  } else {
    fs::create_directories(out);
    write_file(fs::path(out) / "fit.txt", rec.str());
  }
  return kOk;
}

int run_levels(const std::string& config, const std::string& preset, int j_max) {
  rotor::RotorParams p = config.empty() ? runner::molecule_preset(preset) : runner::load_config(config).molecule;
  std::cout << "J,K,E_cm1,f_res_GHz\n";
  for (int J = 0; J <= j_max; ++J) {
    for (int K = 0; K <= J; ++K) {
      const double e = rotor::prolate_energy(J, K, p);
      const double f =
          0.5 * physkit::wavenumber_to_ghz(rotor::prolate_energy(J + 2, K, p) - rotor::prolate_energy(J, K, p));
      std::cout << J << ',' << K << ',' << runner::detail::csv_number(e) << ',' << runner::detail::csv_number(f) << '\n';
    }
  }
  return kOk;
}

int run_validate(const Common& c) {
  runner::Config cfg = c.config.empty() ? runner::default_config(runner::Scenario::infield) : runner::load_config(c.config);
  const auto rep = runner::validate(cfg, runner::RunOptions{c.workers});
  for (const auto& ch : rep.checks) std::cout << (ch.passed ? "PASS " : "FAIL ") << ch.name << ": " << ch.detail << '\n';
  return rep.passed() ? kOk : kFailed;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Rotational-resonance simulator for molecules in an optical centrifuge"};
  app.require_subcommand(1);
  app.set_version_flag("--version", runner::tool_version);

  Common infield_opts, scan_opts, decay_opts, validate_opts;
  auto* infield = app.add_subcommand("infield", "Alignment during the pulse and sinusoid fit");
  add_common(infield, infield_opts, true);
  auto* scan = app.add_subcommand("scan", "Post-pulse alignment versus rotation frequency and peak fit");
  add_common(scan, scan_opts, true);
  auto* decay = app.add_subcommand("decay", "Long-delay trace, adiabatic reference and exponential fit");
  add_common(decay, decay_opts, true);
  auto* validate = app.add_subcommand("validate", "Numerical self-checks for a configuration");
  add_common(validate, validate_opts, false);

  std::string fit_input, fit_model = "sinusoid", fit_out, fit_peak_model = "gaussian";
  double fit_offset = 0.5, band_lo = 0.0, band_hi = 0.0, win_start = 500.0, win_stop = 3300.0, half_window = 3.0;
  int initial_j = 0;
  std::string fit_format = "csv";
  auto* fit = app.add_subcommand("fit", "Fit a trace or scan CSV");
  fit->add_option("input", fit_input, "CSV with delay_ps,value,stderr or fcfg_ghz,value,stderr")->required();
  fit->add_option("--model", fit_model, "sinusoid | decay | peak")->check(CLI::IsMember({"sinusoid", "decay", "peak"}));
  fit->add_option("--out", fit_out, "Output directory (default: print to stdout)");
  fit->add_option("--format", fit_format, "Input format")->check(CLI::IsMember({"csv"}));
  fit->add_option("--offset", fit_offset, "Fixed asymptote for the decay model");
  fit->add_option("--band-lo", band_lo, "Lower frequency bound for the initial guess, GHz");
  fit->add_option("--band-hi", band_hi, "Upper frequency bound for the initial guess, GHz");
  fit->add_option("--window-start", win_start, "Decay fit window start, ps");
  fit->add_option("--window-stop", win_stop, "Decay fit window stop, ps");
  fit->add_option("--peak-model", fit_peak_model, "gaussian | lorentzian")->check(CLI::IsMember({"gaussian", "lorentzian"}));
  fit->add_option("--half-window", half_window, "Peak fit half window, GHz");
  fit->add_option("--initial-j", initial_j, "Initial level for the B_yz extraction");

  std::string levels_config, levels_preset = "no-dimer-droplet";
  int levels_jmax = 6;
  auto* levels = app.add_subcommand("levels", "Rotational levels and two-photon resonance frequencies");
  levels->add_option("--config", levels_config, "Take the molecule from a configuration")->check(CLI::ExistingFile);
  levels->add_option("--preset", levels_preset, "no-dimer-droplet | no-dimer-gas")
      ->check(CLI::IsMember({"no-dimer-droplet", "no-dimer-gas"}));
  levels->add_option("--jmax", levels_jmax, "Highest J listed")->check(CLI::Range(0, 200));

  try {
    app.parse(argc, argv);
  } catch (const CLI::Success& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kUsage;
  }

  try {
    if (*infield) return run_experiment(infield_opts, runner::Scenario::infield, "infield");
    if (*scan) return run_experiment(scan_opts, runner::Scenario::scan, "scan");
    if (*decay) return run_experiment(decay_opts, runner::Scenario::decay, "decay");
    if (*validate) return run_validate(validate_opts);
    if (*fit)
      return run_fit(fit_input, fit_model, fit_out, fit_offset, band_lo, band_hi, win_start, win_stop, fit_peak_model,
                     half_window, initial_j);
    if (*levels) return run_levels(levels_config, levels_preset, levels_jmax);
  } catch (const runner::ConfigError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kUsage;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kFailed;
  }
  return kUsage;
}
