#pragma once

#include <Eigen/Dense>
#include <iosfwd>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "dtwin/netmodel.hpp"
#include "dtwin/powerflow.hpp"
#include "dtwin/telemetry.hpp"

namespace dtwin {

enum class MeasurementKind { line_voltage_magnitude, phase_voltage_magnitude, p_phase, q_phase };
enum class DsseMode { raw_send, synthetic };

std::string_view measurement_kind_name(MeasurementKind k);

/// One scalar measurement in per-unit. Voltages: phase magnitudes on the
/// line-to-neutral base, line magnitudes on the line-to-line base. Powers:
/// net injection at the bus on the per-phase base (meter sign removed).
struct MeasurementFunction {
  MeasurementKind kind = MeasurementKind::phase_voltage_magnitude;
  std::size_t bus = 0;
  Phase phase = Phase::a;
  Phase phase_to = Phase::b;  // second phase of a line voltage
  double value = 0.0;
  double sigma = 1.0;
  std::string meter_id;
  std::string channel;      // source channel, e.g. "v_ab" or "p_tot"
  std::string provenance;   // how the value was formed and any quality notes
  double si_per_pu = 1.0;   // converts pu residuals back to channel units
  double si_sign = 1.0;     // meter sign, so value_si = si_sign * value * si_per_pu
};

struct DsseProblem {
  std::shared_ptr<const NetworkModel> model;
  std::shared_ptr<const PowerFlowSystem> system;
  std::vector<MeasurementFunction> measurements;
  /// Nodes with no attached device on that phase (non-slack): P = Q = 0.
  std::vector<std::size_t> zero_injection_nodes;
  std::size_t slack_bus = 0;
  double reference_angle_rad = 0.0;
  /// Pin the slack zero-sequence voltage (line-voltage-only data).
  bool pin_zero_sequence = false;
  /// Pin every slack phase angle, not just the first. Per-phase magnitudes
  /// leave the inter-phase angles resting on mutual coupling alone.
  bool pin_phase_angles = false;
  /// Slack phasors used for the flat start.
  PhaseComplex slack_guess = balanced_phasors();
  DsseMode mode = DsseMode::synthetic;
  std::optional<Timestamp> time;
  std::vector<std::string> warnings;

  std::size_t state_size() const { return 2 * system->nodes().size(); }
};

struct AssembleOptions {
  DsseMode mode = DsseMode::synthetic;
  /// Channels flagged here are handled per the quality rules.
  const QualityReport* quality = nullptr;
  double reference_angle_deg = 0.0;
};

/// Builds measurement functions for the meters' readings at `t`.
DsseProblem assemble_problem(std::shared_ptr<const NetworkModel> model, std::span<const MeterSpec> meters,
                             const MeasurementSeries& series, Timestamp t, const AssembleOptions& options = {});

/// Building block for fixtures: a problem with no measurements yet.
DsseProblem empty_problem(std::shared_ptr<const NetworkModel> model, DsseMode mode = DsseMode::synthetic,
                          double reference_angle_deg = 0.0);

// Evaluation on a state vector x = [e; f] over all nodes.
Eigen::VectorXd measurement_values(const DsseProblem& p, const Eigen::VectorXd& x);
Eigen::MatrixXd measurement_jacobian(const DsseProblem& p, const Eigen::VectorXd& x);
Eigen::VectorXd weighted_residual_vector(const DsseProblem& p, const Eigen::VectorXd& x);
Eigen::VectorXd constraint_values(const DsseProblem& p, const Eigen::VectorXd& x);
Eigen::MatrixXd constraint_jacobian(const DsseProblem& p, const Eigen::VectorXd& x);
/// Sum of (h_m(x) - z_m)^2 / sigma_m^2.
double dsse_objective(const DsseProblem& p, const Eigen::VectorXd& x);
Eigen::VectorXd dsse_gradient(const DsseProblem& p, const Eigen::VectorXd& x);
Eigen::VectorXd flat_start_state(const DsseProblem& p);
Eigen::VectorXd state_vector(const Eigen::VectorXcd& v);
Eigen::VectorXcd state_phasors(const Eigen::VectorXd& x);

struct EstimatorOptions {
  double tolerance = 1e-10;  // step size (relative) and constraint violation
  int max_iterations = 100;
  double damping = 1e-6;     // initial lambda, relative to max diag(J^T J)
  double min_damping = 1e-12;
};

struct StateEstimate {
  ComplexVoltageState state;
  Eigen::VectorXcd injections;   // per node, pu
  Eigen::VectorXd weighted_residuals;
  Eigen::VectorXd raw_residuals;  // h(x) - z, pu
  double objective = 0.0;
  double max_constraint_violation = 0.0;
  double gradient_norm = 0.0;    // projected onto the constraint tangent space
  int iterations = 0;
  bool converged = false;
  std::vector<double> gradient_history;
  std::vector<std::string> bus_labels;  // "observable", "unobservable" or "unknown"
};

StateEstimate estimate_state(const DsseProblem& problem, const std::optional<Eigen::VectorXd>& init = std::nullopt,
                             const EstimatorOptions& options = {});

struct ResidualRow {
  std::string bus;
  std::string meter_id;
  std::string channel;
  std::string label;  // e.g. "ss05.ab"
  MeasurementKind kind = MeasurementKind::phase_voltage_magnitude;
  double measured = 0.0;   // channel units (V, W, var)
  double estimated = 0.0;
  double residual = 0.0;   // estimated - measured, channel units
  double residual_pu = 0.0;
  double weighted = 0.0;   // (h - z) / sigma
  std::string provenance;
};

/// Per-measurement residuals sorted by bus order (stable within a bus).
std::vector<ResidualRow> residual_report(const StateEstimate& estimate, const DsseProblem& problem);

struct ObservabilityOptions {
  double rank_tolerance = 1e-8;        // singular values below this x max are zero
  double null_space_threshold = 1e-6; // projection ratio for an unobservable functional
  double residual_zero_threshold = 6e-5;  // pu
};

struct ObservabilityReport {
  std::vector<std::string> observable;
  std::vector<std::string> unobservable;
  std::map<std::string, double> evidence;  // largest null-space projection per bus
  std::map<std::string, bool> residual_zero;
  int rank = 0;
  int state_dimension = 0;

  bool is_observable(const std::string& bus) const;
};

ObservabilityReport observability_analysis(const DsseProblem& problem, const ObservabilityOptions& options = {});
/// Marks buses whose voltage residuals are all below the threshold.
void mark_residual_zero(ObservabilityReport& report, const StateEstimate& estimate, const DsseProblem& problem,
                        double threshold = 6e-5);
void label_observability(StateEstimate& estimate, const ObservabilityReport& report, const DsseProblem& problem);

void write_estimate_table(std::ostream& os, const DsseProblem& problem, const StateEstimate& estimate);
void write_residual_table(std::ostream& os, const std::vector<ResidualRow>& rows);
std::string observability_to_json(const ObservabilityReport& report);

// ---------------------------------------------------------------------------
// Power-flow inputs from measurements and the tap sweep

struct PowerFlowCase {
  InjectionSet injections;
  SlackSpec slack;
  std::vector<std::string> warnings;
};

struct CaseOptions {
  std::uint64_t seed = 1;
  std::optional<std::string> slack_load_id;
};

/// Slack phasors from the slack-bus meter's line voltages, device powers from
/// metered buses, and the unmetered residual spread over unmetered loads.
PowerFlowCase build_powerflow_case(const NetworkModel& model, std::span<const MeterSpec> meters,
                                   const MeasurementSeries& series, Timestamp t, const CaseOptions& options = {});

struct TapSweepOptions {
  std::vector<std::string> transformers;  // empty: all
  /// Optional per-transformer bounds; default is the transformer's own range.
  std::map<std::string, std::pair<int, int>> bounds;
  int max_passes = 10;
  std::size_t jobs = 1;
  PowerFlowOptions powerflow;
  CaseOptions cases;
};

struct ScatterPoint {
  Timestamp time;
  std::string meter_id;
  std::string channel;
  double measured_v = 0.0;
  double before_v = 0.0;
  double after_v = 0.0;
};

struct TapChange {
  std::string transformer;
  int from = 0;
  int to = 0;
};

struct TapSweepReport {
  double rms_before_pu = 0.0;
  double rms_after_pu = 0.0;
  std::vector<TapChange> taps;
  std::vector<ScatterPoint> scatter;
  std::vector<std::string> skipped;  // candidates whose power flow failed
  std::vector<std::string> warnings;
  int passes = 0;
  int evaluations = 0;
};

struct TapSweepResult {
  NetworkModel model;
  TapSweepReport report;
};

TapSweepResult tap_sweep(const NetworkModel& model, std::span<const MeterSpec> meters,
                         const MeasurementSeries& series, std::span<const Timestamp> timestamps,
                         const TapSweepOptions& options = {});

void write_tap_scatter(std::ostream& os, const TapSweepReport& report);
std::string tap_report_to_json(const TapSweepReport& report);

}  // namespace dtwin
