#pragma once

#include <Eigen/Dense>
#include <iosfwd>
#include <map>
#include <string>
#include <vector>

#include "dtwin/netmodel.hpp"

namespace dtwin {

/// Per-node complex voltages in per-unit, indexed by a NodeMap.
struct ComplexVoltageState {
  NodeMap nodes;
  Eigen::VectorXcd voltage;

  Complex at(std::size_t bus, Phase p) const;
  /// Phasors of one bus; absent phases are zero.
  PhaseComplex bus_voltage(std::size_t bus) const;
  Eigen::VectorXd magnitudes() const { return voltage.cwiseAbs(); }
};

/// Complex power per phase of each device, per-unit on the per-phase base
/// (S_base / 3). Loads consume, generators produce.
struct InjectionSet {
  std::map<std::string, PhaseComplex> loads;
  std::map<std::string, PhaseComplex> generators;

  /// Device powers as declared in the model.
  static InjectionSet from_model(const NetworkModel& model);
};

struct SlackSpec {
  PhaseComplex voltage_pu = balanced_phasors();
};

struct PowerFlowOptions {
  double tolerance = 1e-8;  // pu, max complex mismatch per node
  int max_iterations = 50;
};

struct BranchFlow {
  std::string id;
  PhaseSet phases;
  PhaseComplex from{};  // pu, into the branch at the from end
  PhaseComplex to{};    // pu, into the branch at the to end
};

struct PowerFlowSolution {
  ComplexVoltageState state;
  std::vector<BranchFlow> branch_flows;
  PhaseComplex slack_injection{};  // pu per phase, delivered by the slack
  int iterations = 0;
  double max_mismatch = 0.0;
  std::vector<double> mismatch_history;
  bool converged = false;
};

/// Nodal model shared by the power-flow, linearisation and estimation code.
class PowerFlowSystem {
 public:
  explicit PowerFlowSystem(const NetworkModel& model);

  const NetworkModel& model() const noexcept { return *model_; }
  const NodeMap& nodes() const noexcept { return nodes_; }
  const Eigen::MatrixXcd& ybus() const noexcept { return ybus_; }
  const std::vector<BranchAdmittance>& branches() const noexcept { return branches_; }
  const std::vector<std::size_t>& slack_nodes() const noexcept { return slack_nodes_; }
  const std::vector<std::size_t>& free_nodes() const noexcept { return free_nodes_; }

  /// Net specified injection (generation minus demand) per node.
  Eigen::VectorXcd node_injection(const InjectionSet& inj) const;
  /// Complex power injected at every node for voltages `v`.
  Eigen::VectorXcd injected_power(const Eigen::VectorXcd& v) const;
  /// [P_calc - P_spec; Q_calc - Q_spec] over the free nodes.
  Eigen::VectorXd mismatch(const Eigen::VectorXcd& v, const Eigen::VectorXcd& s_spec) const;
  /// d(mismatch)/d[e; f] over the free nodes.
  Eigen::MatrixXd jacobian(const Eigen::VectorXcd& v) const;
  /// Slack phasors carried through lines and transformer ratios.
  Eigen::VectorXcd flat_start(const PhaseComplex& slack) const;
  std::vector<BranchFlow> branch_flows(const Eigen::VectorXcd& v) const;

 private:
  const NetworkModel* model_;
  NodeMap nodes_;
  std::vector<BranchAdmittance> branches_;
  Eigen::MatrixXcd ybus_;
  std::vector<std::size_t> slack_nodes_;
  std::vector<std::size_t> free_nodes_;
};

/// Slack phasors at 0/-120/+120 degrees whose differences reproduce the
/// measured line-voltage magnitudes (least squares). Result in pu of
/// `base_ll_v`.
PhaseComplex slack_from_line_voltages(double v_ab, double v_bc, double v_ca, double base_ll_v);

/// Throws ConvergenceError / SingularJacobianError on failure.
PowerFlowSolution solve_powerflow(const NetworkModel& model, const InjectionSet& injections,
                                  const SlackSpec& slack = {}, const PowerFlowOptions& options = {});

/// Voltage-magnitude response of every node to a balanced three-phase
/// injection at one bus. Column 0 is d|V|/dP, column 1 d|V|/dQ, both per pu
/// of the system power base.
struct SensitivityMatrix {
  Eigen::MatrixXd m;                   // nodes x 2
  Eigen::VectorXd reference_magnitude; // |V| at the linearisation point
  std::vector<std::string> labels;     // "bus.phase"
  std::string injection_bus;
  double power_base_va = 1.0e6;
};

SensitivityMatrix linearize(const NetworkModel& model, const PowerFlowSolution& reference,
                            const std::string& injection_bus);

/// v_twin + M [p; q], p and q in pu of the system power base.
Eigen::VectorXd predict_voltages(const SensitivityMatrix& sens, const Eigen::VectorXd& v_twin, double p_pu,
                                 double q_pu);

// Tabular exports.
void write_voltage_table(std::ostream& os, const NetworkModel& model, const PowerFlowSolution& sol);
void write_branch_flow_table(std::ostream& os, const NetworkModel& model, const PowerFlowSolution& sol);
void write_sensitivity_table(std::ostream& os, const SensitivityMatrix& sens);

}  // namespace dtwin
