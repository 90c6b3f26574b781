#pragma once

#include <Eigen/Dense>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "dtwin/phase.hpp"

namespace dtwin {

// Per-unit convention: every bus carries a line-to-line voltage base; phase
// quantities use the line-to-neutral base V_ll/sqrt(3) and the per-phase
// power base S_base/3. A balanced three-phase injection of x pu (on S_base)
// therefore puts x pu on each phase.
struct PerUnitBase {
  double v_ll = 1.0;     // volts
  double s_total = 1.0;  // VA, three-phase

  double v_ln() const;
  double s_phase() const { return s_total / 3.0; }
  double z() const { return v_ll * v_ll / s_total; }
  double y() const { return 1.0 / z(); }
  double i() const { return s_phase() / v_ln(); }
};

struct VoltageLimits {
  double lower_pu = 0.94;
  double upper_pu = 1.06;

  friend bool operator==(const VoltageLimits&, const VoltageLimits&) = default;
};

struct Bus {
  std::string id;
  double base_voltage_v = 0.0;  // line-to-line
  PhaseSet phases;
  VoltageLimits limits;

  friend bool operator==(const Bus&, const Bus&) = default;
};

enum class ImpedanceUnits { siemens, per_unit };

/// Pi-model line. Admittances are totals for the segment; `units` says whether
/// they are in siemens or already per-unit on the system base.
struct LineSegment {
  std::string id;
  std::string from_bus;
  std::string to_bus;
  PhaseSet phases;
  double length_m = 0.0;
  ImpedanceUnits units = ImpedanceUnits::siemens;
  Eigen::MatrixXcd series_admittance;  // k x k, k = |phases|
  Eigen::MatrixXcd shunt_from;         // k x k
  Eigen::MatrixXcd shunt_to;           // k x k

  bool operator==(const LineSegment& o) const;
};

enum class WindingConnection { wye_grounded, delta };

struct TransformerBranch {
  std::string id;
  std::string from_bus;  // HV
  std::string to_bus;    // LV
  double rated_power_va = 0.0;
  Complex series_impedance_pu{0.0, 0.0};  // on the transformer's own rating
  WindingConnection hv_connection = WindingConnection::delta;
  WindingConnection lv_connection = WindingConnection::wye_grounded;
  double nominal_ratio = 1.0;  // V_hv / V_lv, line-to-line
  double tap_step_pct = 0.0;
  int tap_position = 0;
  int tap_min = 0;
  int tap_max = 0;

  /// nominal_ratio * (1 + tap_position * tap_step_pct / 100)
  double effective_ratio() const { return effective_ratio_at(tap_position); }
  double effective_ratio_at(int tap) const;

  friend bool operator==(const TransformerBranch&, const TransformerBranch&) = default;
};

enum class DeviceKind { fixed, allocated };

/// A load or generator. Power is per phase in VA (SI); phases not in the set
/// hold zero. Loads use consumption sign, generators production sign.
struct PowerDevice {
  std::string id;
  std::string bus;
  PhaseSet phases;
  PhaseComplex power_va{};
  DeviceKind kind = DeviceKind::fixed;

  friend bool operator==(const PowerDevice&, const PowerDevice&) = default;
};

using LoadSpec = PowerDevice;
using GeneratorSpec = PowerDevice;

struct SystemBases {
  double power_va = 1.0e6;
  double frequency_hz = 50.0;

  friend bool operator==(const SystemBases&, const SystemBases&) = default;
};

/// Balanced 1 pu phasors at 0, -120, +120 degrees.
PhaseComplex balanced_phasors(double magnitude_pu = 1.0, double angle_deg = 0.0);

struct NetworkModel {
  std::vector<Bus> buses;
  std::vector<LineSegment> lines;
  std::vector<TransformerBranch> transformers;
  std::vector<LoadSpec> loads;
  std::vector<GeneratorSpec> generators;
  std::string slack_bus;
  SystemBases bases;
  /// Default slack set-point used when callers do not supply one.
  PhaseComplex slack_voltage_pu = balanced_phasors();

  std::optional<std::size_t> find_bus(std::string_view id) const;
  /// Throws InputError for unknown ids.
  std::size_t bus_index(std::string_view id) const;
  std::optional<std::size_t> find_transformer(std::string_view id) const;
  std::optional<std::size_t> find_load(std::string_view id) const;
  std::optional<std::size_t> find_generator(std::string_view id) const;
  PerUnitBase base_of(std::size_t bus) const { return {buses[bus].base_voltage_v, bases.power_va}; }

  bool operator==(const NetworkModel&) const;
};

struct ValidationReport {
  std::vector<std::string> warnings;
  /// Buses not reachable from the slack through any branch.
  std::vector<std::string> unreachable_buses;
};

/// Structural checks. Hard errors throw InputError; disconnected buses are
/// reported as warnings.
ValidationReport validate(const NetworkModel& model);

/// Buses unreachable from the slack (breadth-first search over branches).
std::vector<std::string> unreachable_from_slack(const NetworkModel& model);

/// Parses the JSON network document. The result is validated; warnings
/// (e.g. unreachable buses) go to `report` when given.
NetworkModel parse_network(std::string_view text, ValidationReport* report = nullptr);
NetworkModel load_network(const std::string& path, ValidationReport* report = nullptr);
/// Serialises a model back into the document format.
std::string network_to_json(const NetworkModel& model);

/// Copy of `model` with one transformer moved to `tap_position`.
NetworkModel apply_tap(const NetworkModel& model, std::string_view transformer_id, int tap_position);

/// 3x3 phase impedance from positive/zero-sequence values.
Eigen::Matrix3cd sequence_to_phase(Complex z1, Complex z0);

// ---------------------------------------------------------------------------
// Node indexing and admittances

struct Node {
  std::size_t bus = 0;
  Phase phase = Phase::a;
};

/// Enumerates (bus, phase) nodes in bus order, phases a,b,c within a bus.
class NodeMap {
 public:
  NodeMap() = default;
  explicit NodeMap(const NetworkModel& model);

  std::size_t size() const noexcept { return nodes_.size(); }
  const Node& operator[](std::size_t i) const { return nodes_[i]; }
  std::span<const Node> nodes() const noexcept { return nodes_; }
  /// -1 when the bus does not carry that phase.
  int index(std::size_t bus, Phase p) const;
  /// Node indices of a bus, in phase order.
  std::vector<std::size_t> bus_nodes(std::size_t bus) const;
  std::string label(std::size_t i) const;
  const std::vector<std::string>& bus_ids() const noexcept { return bus_ids_; }

 private:
  std::vector<Node> nodes_;
  std::vector<std::array<int, 3>> lookup_;
  std::vector<std::string> bus_ids_;
};

enum class BranchKind { line, transformer };

/// Two-port admittance of a branch in per-unit on the system base:
///   I_from = Y_ff V_from + Y_ft V_to,  I_to = Y_tf V_from + Y_tt V_to.
/// For reciprocal Pi branches Y_ft == Y_tf == -Y_series.
struct BranchAdmittance {
  std::string id;
  BranchKind kind = BranchKind::line;
  std::size_t from_bus = 0;
  std::size_t to_bus = 0;
  PhaseSet phases;
  Eigen::MatrixXcd y_ff, y_ft, y_tf, y_tt;

  Eigen::MatrixXcd series() const { return -y_ft; }
  Eigen::MatrixXcd shunt_from() const { return y_ff + y_ft; }
  Eigen::MatrixXcd shunt_to() const { return y_tt + y_tf; }
  /// Full 2k x 2k two-port matrix [[Y_ff, Y_ft], [Y_tf, Y_tt]].
  Eigen::MatrixXcd two_port() const;
};

std::vector<BranchAdmittance> build_admittance(const NetworkModel& model);

/// Dense nodal admittance matrix (per-unit).
Eigen::MatrixXcd assemble_bus_admittance(const NodeMap& nodes, std::span<const BranchAdmittance> branches);

// Per-unit conversion of branch quantities.
Eigen::MatrixXcd admittance_to_pu(const Eigen::MatrixXcd& y_siemens, const PerUnitBase& base);
Eigen::MatrixXcd admittance_from_pu(const Eigen::MatrixXcd& y_pu, const PerUnitBase& base);

}  // namespace dtwin
