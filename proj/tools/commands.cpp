#include "commands.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fmt/format.h>
#include <fstream>
#include <iostream>
#include <memory>
#include <sstream>

#include "dtwin/dsse.hpp"
#include "dtwin/errors.hpp"
#include "dtwin/exportlimit.hpp"
#include "dtwin/netmodel.hpp"
#include "dtwin/parallel.hpp"
#include "dtwin/powerflow.hpp"
#include "dtwin/telemetry.hpp"

namespace dtwin::cli {

namespace fs = std::filesystem;

namespace {

void require(const std::string& value, const char* flag) {
  if (value.empty()) throw InputError(fmt::format("{} is required", flag));
}

fs::path prepare_out(const std::string& out) {
  std::error_code ec;
  fs::create_directories(out, ec);
  if (ec) throw InputError(fmt::format("cannot create output directory {}: {}", out, ec.message()));
  return fs::path(out);
}

void write_file(const fs::path& path, const std::string& content) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw InputError("cannot write " + path.string());
  f << content;
}

template <class Fn>
std::string render(Fn&& fn) {
  std::ostringstream os;
  fn(os);
  return os.str();
}

void print_warnings(const std::vector<std::string>& warnings) {
  for (const auto& w : warnings) std::cerr << "warning: " << w << "\n";
}

/// Prefixes each data row of a table with "<timestamp>,". Comment lines and
/// the header are kept only when `first` is set.
void append_with_time(std::string& dst, const std::string& table, const std::string& stamp, bool first) {
  std::istringstream in(table);
  std::string line;
  bool header_done = false;
  while (std::getline(in, line)) {
    if (!line.empty() && line.front() == '#') {
      if (first) dst += line + "\n";
      continue;
    }
    if (!header_done) {
      header_done = true;
      if (first) dst += "timestamp," + line + "\n";
      continue;
    }
    dst += stamp + "," + line + "\n";
  }
}

std::vector<Timestamp> select_times(const MeasurementSeries& series, const WindowConfig& w) {
  if (w.stride < 1) throw InputError("--stride must be at least 1");
  const std::vector<Timestamp> all = series.timestamps();
  if (!w.time.empty()) {
    const Timestamp t = parse_timestamp(w.time);
    if (!std::binary_search(all.begin(), all.end(), t))
      throw InputError(fmt::format("no measurements at {}", w.time));
    return {t};
  }
  const std::optional<Timestamp> lo = w.from.empty() ? std::nullopt : std::optional(parse_timestamp(w.from));
  const std::optional<Timestamp> hi = w.to.empty() ? std::nullopt : std::optional(parse_timestamp(w.to));
  std::vector<Timestamp> in_range;
  for (const Timestamp t : all)
    if ((!lo || t >= *lo) && (!hi || t <= *hi)) in_range.push_back(t);
  std::vector<Timestamp> out;
  for (std::size_t i = 0; i < in_range.size(); i += static_cast<std::size_t>(w.stride)) out.push_back(in_range[i]);
  if (out.empty()) throw InputError("no measurement timestamps in the selected window");
  return out;
}

double daily_load_scale(Timestamp t) {
  const auto day = std::chrono::floor<std::chrono::days>(t);
  const double h = std::chrono::duration<double, std::ratio<3600>>(t - day).count();
  auto bump = [&](double centre, double width) { return std::exp(-std::pow((h - centre) / width, 2.0)); };
  return 0.45 + 0.2 * bump(8.0, 2.5) + 0.35 * bump(19.0, 3.0);
}

}  // namespace

// ---------------------------------------------------------------------------

int run_powerflow(const PowerflowConfig& c) {
  require(c.network, "--network");
  ValidationReport vr;
  const NetworkModel model = load_network(c.network, &vr);
  print_warnings(vr.warnings);
  const fs::path out = prepare_out(c.out);

  PowerFlowOptions opts;
  opts.tolerance = c.tolerance;
  opts.max_iterations = c.max_iterations;
  const PowerFlowSolution sol =
      solve_powerflow(model, InjectionSet::from_model(model), SlackSpec{model.slack_voltage_pu}, opts);

  write_file(out / "voltages.csv", render([&](std::ostream& os) { write_voltage_table(os, model, sol); }));
  write_file(out / "branch_flows.csv", render([&](std::ostream& os) { write_branch_flow_table(os, model, sol); }));
  std::string history = "iteration,max_mismatch_pu\n";
  for (std::size_t i = 0; i < sol.mismatch_history.size(); ++i)
    history += fmt::format("{},{:.6e}\n", i, sol.mismatch_history[i]);
  write_file(out / "convergence.csv", history);
  if (!c.solar_bus.empty()) {
    const SensitivityMatrix sens = linearize(model, sol, c.solar_bus);
    write_file(out / "sensitivity.csv", render([&](std::ostream& os) { write_sensitivity_table(os, sens); }));
  }
  std::cout << fmt::format("power flow converged in {} iterations (max mismatch {:.3e} pu)\n", sol.iterations,
                           sol.max_mismatch);
  return 0;
}

// ---------------------------------------------------------------------------

int run_synth(const SynthConfig& c, std::size_t jobs) {
  require(c.network, "--network");
  require(c.meters, "--meters");
  if (c.steps < 1 || c.cadence_s < 1) throw InputError("--steps and --cadence must be positive");
  if (c.load_shape != "daily" && c.load_shape != "flat") throw InputError("--load-shape must be daily or flat");
  NetworkModel model = load_network(c.network);
  const std::vector<MeterSpec> meters = load_meters(c.meters);
  for (const auto& spec : c.set_taps) {
    const auto eq = spec.find('=');
    if (eq == std::string::npos) throw InputError(fmt::format("--set-tap expects ID=POSITION, got \"{}\"", spec));
    int pos = 0;
    try {
      pos = std::stoi(spec.substr(eq + 1));
    } catch (const std::exception&) {
      throw InputError(fmt::format("--set-tap: bad position in \"{}\"", spec));
    }
    model = apply_tap(model, spec.substr(0, eq), pos);
  }

  std::vector<TimeValue> reference;
  std::string generator = c.solar_generator;
  if (!c.solar_reference.empty()) {
    reference = read_time_values(c.solar_reference);
    if (!(c.solar_capacity_mw > 0.0)) throw InputError("--solar-capacity must be positive with --solar-reference");
    if (generator.empty()) {
      if (model.generators.empty()) throw InputError("--solar-reference given but the network has no generator");
      generator = model.generators.front().id;
    }
    if (!model.find_generator(generator)) throw InputError(fmt::format("unknown generator \"{}\"", generator));
  }

  const fs::path out = prepare_out(c.out);
  const Timestamp start = parse_timestamp(c.start);
  const InjectionSet base = InjectionSet::from_model(model);
  const auto n = static_cast<std::size_t>(c.steps);
  std::vector<Timestamp> times(n);
  std::vector<double> potential(n, 0.0), exported(n, 0.0);
  std::vector<PowerFlowSolution> solutions(n);
  for (std::size_t k = 0; k < n; ++k) {
    times[k] = start + std::chrono::seconds(static_cast<long long>(k) * c.cadence_s);
    if (!reference.empty()) {
      potential[k] = resample_at(reference, times[k]) * c.solar_capacity_mw;
      exported[k] = c.solar_clip_mw > 0.0 ? std::min(potential[k], c.solar_clip_mw) : potential[k];
    }
  }
  parallel_for(n, jobs, [&](std::size_t k) {
    InjectionSet inj = base;
    const double scale = c.load_shape == "daily" ? daily_load_scale(times[k]) : 1.0;
    for (auto& [id, s] : inj.loads)
      for (auto& v : s) v *= scale;
    if (!generator.empty()) {
      const double per_phase = exported[k] * 1e6 / model.bases.power_va;
      const auto& g = model.generators[*model.find_generator(generator)];
      PhaseComplex s{};
      const double share = 3.0 / static_cast<double>(g.phases.size());
      for (Phase p : g.phases.phases()) s[phase_index(p)] = per_phase * share;
      inj.generators[generator] = s;
    }
    solutions[k] = solve_powerflow(model, inj, SlackSpec{model.slack_voltage_pu});
  });

  std::vector<TimedSolution> timed;
  for (std::size_t k = 0; k < n; ++k) timed.push_back({times[k], &solutions[k]});
  const MeasurementSeries series = synthesize_measurements(model, timed, meters, SynthOptions{c.seed, c.noise_scale});
  write_file(out / "measurements.csv", render([&](std::ostream& os) { write_csv(os, series); }));
  if (!generator.empty()) {
    std::string truth = "timestamp,potential_mw,exported_mw\n";
    for (std::size_t k = 0; k < n; ++k)
      truth += fmt::format("{},{:.6f},{:.6f}\n", format_timestamp(times[k]), potential[k], exported[k]);
    write_file(out / "solar_truth.csv", truth);
  }
  std::cout << fmt::format("wrote {} samples for {} meters\n", series.sample_count(), meters.size());
  return 0;
}

// ---------------------------------------------------------------------------

int run_quality(const QualityConfig& c) {
  require(c.measurements, "--measurements");
  const std::vector<MeterSpec> meters = c.meters.empty() ? std::vector<MeterSpec>{} : load_meters(c.meters);
  const MeasurementSeries series = ingest_csv_file(c.measurements, meters);
  print_warnings(series.warnings);
  const fs::path out = prepare_out(c.out);
  QualityOptions opts;
  opts.stuck_min_len = c.stuck_min_len;
  opts.gross_z_threshold = c.gross_z;
  opts.step_detect = !c.no_step_detect;
  const QualityReport report = detect_quality_issues(series, opts);
  write_file(out / "quality.json", quality_report_to_json(report));
  for (const auto& [flag, count] : report.summary) std::cout << fmt::format("{}: {} channels\n", flag, count);
  return 0;
}

// ---------------------------------------------------------------------------

namespace {

TapSweepReport sweep_and_write(NetworkModel& model, const std::vector<MeterSpec>& meters,
                               const MeasurementSeries& series, const std::vector<Timestamp>& times,
                               const TapSweepConfig& c, std::uint64_t seed, std::size_t jobs, const fs::path& out) {
  TapSweepOptions opts;
  opts.transformers = c.transformers;
  opts.max_passes = c.max_passes;
  opts.jobs = jobs;
  opts.cases.seed = seed;
  TapSweepResult result = tap_sweep(model, meters, series, times, opts);
  print_warnings(result.report.warnings);
  write_file(out / "network_tapped.json", network_to_json(result.model));
  write_file(out / "tap_report.json", tap_report_to_json(result.report));
  write_file(out / "tap_scatter.csv", render([&](std::ostream& os) { write_tap_scatter(os, result.report); }));
  std::cout << fmt::format("tap sweep: RMS {:.6f} -> {:.6f} pu, {} tap change(s)\n", result.report.rms_before_pu,
                           result.report.rms_after_pu, result.report.taps.size());
  model = std::move(result.model);
  return result.report;
}

struct DsseStep {
  std::string estimate;
  std::string residuals;
  std::string observability;
  std::string v_twin;
  std::string summary;
  std::vector<std::string> warnings;
};

}  // namespace

int run_dsse(const DsseConfig& c, std::size_t jobs) {
  require(c.network, "--network");
  require(c.meters, "--meters");
  require(c.measurements, "--measurements");
  DsseMode mode;
  if (c.mode == "raw") mode = DsseMode::raw_send;
  else if (c.mode == "synthetic") mode = DsseMode::synthetic;
  else throw InputError("--mode must be raw or synthetic");

  NetworkModel model = load_network(c.network);
  const std::vector<MeterSpec> meters = load_meters(c.meters);
  const MeasurementSeries series = ingest_csv_file(c.measurements, meters);
  print_warnings(series.warnings);
  const std::vector<Timestamp> times = select_times(series, c.window);
  const fs::path out = prepare_out(c.out);

  if (c.tap_sweep) sweep_and_write(model, meters, series, times, c.sweep, c.seed, jobs, out);

  std::optional<QualityReport> quality;
  if (!c.no_quality) quality = detect_quality_issues(series);
  const auto shared = std::make_shared<const NetworkModel>(model);
  EstimatorOptions eopts;
  eopts.tolerance = c.tolerance;
  eopts.max_iterations = c.max_iterations;

  std::vector<DsseStep> steps(times.size());
  parallel_for(times.size(), jobs, [&](std::size_t k) {
    AssembleOptions aopts;
    aopts.mode = mode;
    aopts.quality = quality ? &*quality : nullptr;
    const DsseProblem problem = assemble_problem(shared, meters, series, times[k], aopts);
    StateEstimate est = estimate_state(problem, std::nullopt, eopts);
    ObservabilityReport obs = observability_analysis(problem);
    mark_residual_zero(obs, est, problem);
    label_observability(est, obs, problem);
    const std::vector<ResidualRow> rows = residual_report(est, problem);

    DsseStep& s = steps[k];
    const std::string stamp = format_timestamp(times[k]);
    s.warnings = problem.warnings;
    if (!est.converged) s.warnings.push_back(fmt::format("{}: estimator stopped before convergence", stamp));
    s.estimate = render([&](std::ostream& os) { write_estimate_table(os, problem, est); });
    s.residuals = render([&](std::ostream& os) { write_residual_table(os, rows); });
    if (k == 0) s.observability = observability_to_json(obs);
    s.v_twin = stamp;
    for (Eigen::Index i = 0; i < est.state.voltage.size(); ++i)
      s.v_twin += fmt::format(",{:.10f}", std::abs(est.state.voltage[i]));
    s.v_twin += "\n";
    double max_w = 0.0;
    for (Eigen::Index i = 0; i < est.weighted_residuals.size(); ++i)
      max_w = std::max(max_w, std::abs(est.weighted_residuals[i]));
    s.summary = fmt::format("{},{},{},{},{:.6e},{:.6e},{}\n", stamp, problem.measurements.size(), est.iterations,
                            est.converged ? 1 : 0, est.objective, max_w, obs.unobservable.size());
  });

  std::string estimate, residuals, v_twin = "timestamp";
  {
    const PowerFlowSystem sys(*shared);
    for (std::size_t i = 0; i < sys.nodes().size(); ++i) v_twin += "," + sys.nodes().label(i);
    v_twin += "\n";
  }
  std::string summary = "timestamp,measurements,iterations,converged,objective,max_abs_weighted_residual,unobservable_buses\n";
  for (std::size_t k = 0; k < steps.size(); ++k) {
    const std::string stamp = format_timestamp(times[k]);
    append_with_time(estimate, steps[k].estimate, stamp, k == 0);
    append_with_time(residuals, steps[k].residuals, stamp, k == 0);
    v_twin += steps[k].v_twin;
    summary += steps[k].summary;
    print_warnings(steps[k].warnings);
  }
  write_file(out / "estimate.csv", estimate);
  write_file(out / "residuals.csv", residuals);
  write_file(out / "observability.json", steps.front().observability);
  write_file(out / "v_twin.csv", v_twin);
  write_file(out / "dsse_summary.csv", summary);
  std::cout << fmt::format("estimated {} timestamp(s)\n", times.size());
  return 0;
}

int run_tap_sweep(const TapCommandConfig& c, std::size_t jobs) {
  require(c.network, "--network");
  require(c.meters, "--meters");
  require(c.measurements, "--measurements");
  NetworkModel model = load_network(c.network);
  const std::vector<MeterSpec> meters = load_meters(c.meters);
  const MeasurementSeries series = ingest_csv_file(c.measurements, meters);
  print_warnings(series.warnings);
  const std::vector<Timestamp> times = select_times(series, c.window);
  const fs::path out = prepare_out(c.out);
  sweep_and_write(model, meters, series, times, c.sweep, c.seed, jobs, out);
  return 0;
}

// ---------------------------------------------------------------------------

namespace {

struct VoltageRows {
  std::vector<std::string> labels;
  std::map<Timestamp, Eigen::VectorXd> rows;
};

std::vector<std::string> split(const std::string& line) {
  std::vector<std::string> out;
  std::string cell;
  std::istringstream in(line);
  while (std::getline(in, cell, ',')) out.push_back(cell);
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

VoltageRows read_v_twin(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw InputError("file not found: " + path);
  VoltageRows v;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty() || line.front() == '#') continue;
    std::vector<std::string> cells = split(line);
    if (v.labels.empty()) {
      if (cells.empty() || cells.front() != "timestamp") throw InputError(path + ": expected a timestamp header");
      v.labels.assign(cells.begin() + 1, cells.end());
      continue;
    }
    if (cells.size() != v.labels.size() + 1)
      throw InputError(fmt::format("{}: line {} has {} fields, expected {}", path, line_no, cells.size(),
                                   v.labels.size() + 1));
    Eigen::VectorXd row(static_cast<Eigen::Index>(v.labels.size()));
    for (std::size_t i = 0; i < v.labels.size(); ++i) {
      try {
        std::size_t used = 0;
        row[static_cast<Eigen::Index>(i)] = std::stod(cells[i + 1], &used);
        if (used != cells[i + 1].size()) throw std::invalid_argument("trailing");
      } catch (const std::exception&) {
        throw InputError(fmt::format("{}: line {}: bad value \"{}\"", path, line_no, cells[i + 1]));
      }
    }
    v.rows[parse_timestamp(cells.front())] = row;
  }
  return v;
}

std::vector<TimeValue> solar_from_meter(const ExportLimitConfig& c) {
  const std::vector<MeterSpec> meters = c.meters.empty() ? std::vector<MeterSpec>{} : load_meters(c.meters);
  const MeasurementSeries series = ingest_csv_file(c.measurements, meters);
  const Channel* ch = series.find(c.solar_meter, Measurand::p_tot);
  if (!ch) throw InputError(fmt::format("no p_tot channel for meter \"{}\"", c.solar_meter));
  double sign = 1.0;
  for (const auto& m : meters)
    if (m.id == c.solar_meter && m.sign == MeterSign::consumption) sign = -1.0;
  std::vector<TimeValue> out;
  for (std::size_t i = 0; i < ch->times.size(); ++i)
    if (std::isfinite(ch->values[i])) out.push_back({ch->times[i], sign * ch->values[i] / 1e6});
  return out;
}

}  // namespace

int run_export_limit(const ExportLimitConfig& c) {
  require(c.network, "--network");
  require(c.solar_bus, "--solar-bus");
  require(c.reference, "--reference");
  if (!(c.capacity_mw > 0.0)) throw InputError("--capacity must be positive");
  if (c.measured.empty() == c.measurements.empty())
    throw InputError("give exactly one of --measured or --measurements (with --solar-meter)");
  if (!c.measurements.empty()) require(c.solar_meter, "--solar-meter");
  if (c.cadence_s < 0.0) throw InputError("--cadence must not be negative");

  const NetworkModel model = load_network(c.network);
  std::vector<ExportScheme> schemes;
  for (const auto& s : c.schemes) schemes.push_back(parse_scheme(s));
  std::vector<TimeValue> measured = c.measured.empty() ? solar_from_meter(c) : read_time_values(c.measured);
  const std::vector<TimeValue> reference = read_time_values(c.reference);

  // Linearisation point: the network's declared operating state.
  const PowerFlowSolution base =
      solve_powerflow(model, InjectionSet::from_model(model), SlackSpec{model.slack_voltage_pu});
  const SensitivityMatrix sens = linearize(model, base, c.solar_bus);

  std::vector<Eigen::VectorXd> v_twin;
  if (!c.v_twin.empty()) {
    const VoltageRows rows = read_v_twin(c.v_twin);
    if (rows.labels != sens.labels) throw InputError(c.v_twin + ": node columns do not match the network");
    std::vector<TimeValue> kept;
    for (const auto& m : measured) {
      const auto it = rows.rows.find(m.time);
      if (it == rows.rows.end()) continue;
      kept.push_back(m);
      v_twin.push_back(it->second);
    }
    if (kept.size() < rows.rows.size())
      std::cerr << fmt::format("warning: {} v_twin row(s) have no solar measurement\n",
                               rows.rows.size() - kept.size());
    measured = std::move(kept);
  } else {
    // Synthetic twin voltages: the linear model driven by the measured export.
    const double to_pu = 1e6 / model.bases.power_va;
    for (const auto& m : measured) v_twin.push_back(predict_voltages(sens, sens.reference_magnitude, m.value * to_pu, 0.0));
  }

  double offset = c.offset_mw;
  if (c.fit_offset && !measured.empty()) {
    // Uncurtailed samples: those below 90 % of the highest measured export.
    double peak = 0.0;
    for (const auto& m : measured) peak = std::max(peak, m.value);
    auto use = std::make_unique<bool[]>(measured.size());
    for (std::size_t i = 0; i < measured.size(); ++i) use[i] = measured[i].value < 0.9 * peak;
    offset = fit_profile_offset(measured, reference, c.capacity_mw, std::span<const bool>(use.get(), measured.size()));
  }

  CurtailmentSeries curt;
  if (!measured.empty()) curt = estimate_curtailment(measured, reference, c.capacity_mw, offset);
  Economics econ;
  econ.price_per_mwh = c.price;
  econ.carbon_kg_per_mwh = c.carbon;
  econ.cadence_s = c.cadence_s > 0.0 ? c.cadence_s : curt.cadence_s;
  if (v_twin.empty()) v_twin.push_back(sens.reference_magnitude);
  const BenefitReport report = scheme_benefit(curt, schemes, sens, v_twin, econ);

  const fs::path out = prepare_out(c.out);
  write_file(out / "sensitivity.csv", render([&](std::ostream& os) { write_sensitivity_table(os, sens); }));
  std::string curt_csv = fmt::format("# offset_mw={:.6f}\ntimestamp,potential_mw,measured_mw,curtailment_mw\n", offset);
  for (const auto& p : curt.points)
    curt_csv += fmt::format("{},{:.6f},{:.6f},{:.6f}\n", format_timestamp(p.time), p.potential_mw, p.measured_mw,
                            p.curtailment_mw);
  write_file(out / "curtailment.csv", curt_csv);
  for (const auto& r : report.schemes) {
    std::string name = r.scheme.name;
    std::replace_if(name.begin(), name.end(), [](char ch) { return ch == ':' || ch == '@' || ch == '/'; }, '_');
    write_file(out / ("scheme_" + name + ".csv"), render([&](std::ostream& os) { write_scheme_series(os, r); }));
  }
  write_file(out / "benefit_summary.csv", render([&](std::ostream& os) { write_benefit_summary(os, report); }));
  if (c.svg) write_file(out / "benefit.svg", render([&](std::ostream& os) { write_benefit_svg(os, report); }));
  for (const auto& r : report.schemes)
    std::cout << fmt::format("{}: {:.4f} MWh, revenue {:.2f}, emissions avoided {:.4f} t\n", r.scheme.name,
                             r.energy_mwh, r.revenue, r.emissions_t);
  return 0;
}

}  // namespace dtwin::cli
