#include <CLI11.hpp>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include "commands.hpp"
#include "dtwin/errors.hpp"

namespace {

void add_window(CLI::App* cmd, dtwin::cli::WindowConfig& w) {
  cmd->add_option("--time", w.time, "Single timestamp (ISO 8601, UTC)");
  cmd->add_option("--from", w.from, "First timestamp of the window");
  cmd->add_option("--to", w.to, "Last timestamp of the window");
  cmd->add_option("--stride", w.stride, "Use every Nth timestamp")->capture_default_str();
}

void add_sweep(CLI::App* cmd, dtwin::cli::TapSweepConfig& s) {
  cmd->add_option("--transformers", s.transformers, "Transformers to sweep (default: all)")->delimiter(',');
  cmd->add_option("--max-passes", s.max_passes, "Coordinate-descent passes")->capture_default_str();
}

// Writes the options of the command that ran, defaults included, in a form
// that --config reads back. Empty values are dropped: an empty list would
// read back as one empty element.
void echo_config(const CLI::App& cmd, std::size_t jobs, const std::string& out) {
  std::filesystem::create_directories(out);
  std::ofstream f(std::filesystem::path(out) / "resolved_config.toml", std::ios::binary);
  f << "jobs=" << jobs << "\n[" << cmd.get_name() << "]\n";
  std::istringstream lines(cmd.config_to_str(true, false));
  for (std::string line; std::getline(lines, line);)
    if (!line.ends_with("=\"\"")) f << line << '\n';
}

}  // namespace

int main(int argc, char** argv) {
  using namespace dtwin::cli;
  CLI::App app{"Distribution-network digital twin"};
  app.set_config("--config", "", "TOML/INI file with option values; flags override it");
  app.require_subcommand(1);
  app.fallthrough();
  std::size_t jobs = 1;
  app.add_option("--jobs", jobs, "Worker threads for per-timestamp work")->capture_default_str()->check(
      CLI::PositiveNumber);

  PowerflowConfig pf;
  auto* c_pf = app.add_subcommand("powerflow", "Solve the network's declared operating state");
  c_pf->add_option("--network", pf.network, "Network JSON");
  c_pf->add_option("--out", pf.out, "Output directory")->capture_default_str();
  c_pf->add_option("--solar-bus", pf.solar_bus, "Also write the voltage sensitivity to injections here");
  c_pf->add_option("--tolerance", pf.tolerance, "Max nodal mismatch, pu")->capture_default_str();
  c_pf->add_option("--max-iterations", pf.max_iterations)->capture_default_str();

  SynthConfig sy;
  auto* c_sy = app.add_subcommand("synth", "Synthesise noisy meter data from power flows");
  c_sy->add_option("--network", sy.network, "Network JSON");
  c_sy->add_option("--meters", sy.meters, "Meter sidecar JSON");
  c_sy->add_option("--out", sy.out, "Output directory")->capture_default_str();
  c_sy->add_option("--start", sy.start, "First timestamp")->capture_default_str();
  c_sy->add_option("--steps", sy.steps, "Number of timestamps")->capture_default_str();
  c_sy->add_option("--cadence", sy.cadence_s, "Seconds between timestamps")->capture_default_str();
  c_sy->add_option("--seed", sy.seed)->capture_default_str();
  c_sy->add_option("--noise-scale", sy.noise_scale, "Multiplies every sigma; 0 gives exact values")
      ->capture_default_str();
  c_sy->add_option("--load-shape", sy.load_shape, "daily or flat")->capture_default_str();
  c_sy->add_option("--solar-reference", sy.solar_reference, "Normalised solar profile CSV");
  c_sy->add_option("--solar-generator", sy.solar_generator, "Generator driven by the profile (default: first)");
  c_sy->add_option("--solar-capacity", sy.solar_capacity_mw, "MW at profile value 1")->capture_default_str();
  c_sy->add_option("--solar-clip", sy.solar_clip_mw, "Export cap in MW (0: none)")->capture_default_str();
  c_sy->add_option("--set-tap", sy.set_taps, "Override a tap position, ID=POSITION");

  QualityConfig qc;
  auto* c_q = app.add_subcommand("quality", "Screen meter channels for stuck, stepped and gross errors");
  c_q->add_option("--measurements", qc.measurements, "Meter CSV");
  c_q->add_option("--meters", qc.meters, "Meter sidecar JSON (optional)");
  c_q->add_option("--out", qc.out, "Output directory")->capture_default_str();
  c_q->add_option("--stuck-min-len", qc.stuck_min_len)->capture_default_str();
  c_q->add_option("--gross-z", qc.gross_z, "Robust z-score threshold")->capture_default_str();
  c_q->add_flag("--no-step-detect", qc.no_step_detect);

  DsseConfig ds;
  auto* c_ds = app.add_subcommand("dsse", "Estimate the network state from meter data");
  c_ds->add_option("--network", ds.network, "Network JSON");
  c_ds->add_option("--meters", ds.meters, "Meter sidecar JSON");
  c_ds->add_option("--measurements", ds.measurements, "Meter CSV");
  c_ds->add_option("--out", ds.out, "Output directory")->capture_default_str();
  c_ds->add_option("--mode", ds.mode, "raw or synthetic")->capture_default_str();
  add_window(c_ds, ds.window);
  c_ds->add_flag("--no-quality", ds.no_quality, "Skip quality screening");
  c_ds->add_flag("--tap-sweep", ds.tap_sweep, "Fit transformer taps before estimating");
  add_sweep(c_ds, ds.sweep);
  c_ds->add_option("--tolerance", ds.tolerance)->capture_default_str();
  c_ds->add_option("--max-iterations", ds.max_iterations)->capture_default_str();
  c_ds->add_option("--seed", ds.seed, "Seed for residual load allocation")->capture_default_str();

  TapCommandConfig tc;
  auto* c_tap = app.add_subcommand("tap-sweep", "Fit transformer taps to measured voltages");
  c_tap->add_option("--network", tc.network, "Network JSON");
  c_tap->add_option("--meters", tc.meters, "Meter sidecar JSON");
  c_tap->add_option("--measurements", tc.measurements, "Meter CSV");
  c_tap->add_option("--out", tc.out, "Output directory")->capture_default_str();
  add_window(c_tap, tc.window);
  add_sweep(c_tap, tc.sweep);
  c_tap->add_option("--seed", tc.seed, "Seed for residual load allocation")->capture_default_str();

  ExportLimitConfig ex;
  auto* c_ex = app.add_subcommand("export-limit", "Dynamic export limits and recovered curtailment");
  c_ex->add_option("--network", ex.network, "Network JSON");
  c_ex->add_option("--out", ex.out, "Output directory")->capture_default_str();
  c_ex->add_option("--solar-bus", ex.solar_bus, "Bus of the solar plant");
  c_ex->add_option("--reference", ex.reference, "Normalised solar profile CSV");
  c_ex->add_option("--capacity", ex.capacity_mw, "MW at profile value 1")->capture_default_str();
  c_ex->add_option("--offset", ex.offset_mw, "MW added to the scaled profile")->capture_default_str();
  c_ex->add_flag("--fit-offset", ex.fit_offset, "Least-squares offset over uncurtailed samples");
  c_ex->add_option("--measured", ex.measured, "Measured solar export, timestamp,MW");
  c_ex->add_option("--measurements", ex.measurements, "Meter CSV holding the solar meter");
  c_ex->add_option("--meters", ex.meters, "Meter sidecar JSON");
  c_ex->add_option("--solar-meter", ex.solar_meter, "Meter id of the solar plant");
  c_ex->add_option("--v-twin", ex.v_twin, "Per-timestamp voltage magnitudes (v_twin.csv from dsse)");
  c_ex->add_option("--schemes", ex.schemes, "unity, q_control[:pf], conservative[:pct], optional @U+")
      ->delimiter(',')
      ->capture_default_str();
  c_ex->add_option("--price", ex.price, "Price per MWh")->capture_default_str();
  c_ex->add_option("--carbon", ex.carbon, "kgCO2e per MWh")->capture_default_str();
  c_ex->add_option("--cadence", ex.cadence_s, "Seconds per step (0: from the data)")->capture_default_str();
  c_ex->add_flag("--svg", ex.svg, "Also write a bar chart");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  try {
    if (c_pf->parsed()) {
      echo_config(*c_pf, jobs, pf.out);
      return run_powerflow(pf);
    }
    if (c_sy->parsed()) {
      echo_config(*c_sy, jobs, sy.out);
      return run_synth(sy, jobs);
    }
    if (c_q->parsed()) {
      echo_config(*c_q, jobs, qc.out);
      return run_quality(qc);
    }
    if (c_ds->parsed()) {
      echo_config(*c_ds, jobs, ds.out);
      return run_dsse(ds, jobs);
    }
    if (c_tap->parsed()) {
      echo_config(*c_tap, jobs, tc.out);
      return run_tap_sweep(tc, jobs);
    }
    if (c_ex->parsed()) {
      echo_config(*c_ex, jobs, ex.out);
      return run_export_limit(ex);
    }
  } catch (const dtwin::InputError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const dtwin::ConvergenceError& e) {
    std::cerr << "error: " << e.what() << "\nmismatch history:\n";
    for (std::size_t i = 0; i < e.history().size(); ++i) std::cerr << "  " << i << " " << e.history()[i] << "\n";
    return 2;
  } catch (const dtwin::SingularJacobianError& e) {
    std::cerr << "error: " << e.what() << "\n";
    for (const auto& b : e.suspected_isolated()) std::cerr << "  suspected isolated: " << b << "\n";
    return 2;
  } catch (const dtwin::NumericalError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::filesystem::filesystem_error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 1;
}
