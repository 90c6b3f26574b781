#pragma once

#include <json.hpp>
#include <string>
#include <vector>

#include "dtwin/dsse.hpp"
#include "dtwin/netmodel.hpp"
#include "dtwin/powerflow.hpp"
#include "dtwin/telemetry.hpp"

namespace dtwin::test {

std::string data_path(const std::string& name);
std::string cli_path();
/// Fresh scratch directory under the build tree.
std::string scratch_dir(const std::string& name);

NetworkModel twin33();
std::vector<MeterSpec> twin33_meters();
inline constexpr const char* kTwinSolarBus = "ss18";

Timestamp t0();

/// Builds network documents in the JSON input format.
class NetworkBuilder {
 public:
  explicit NetworkBuilder(double power_kva = 1000.0);
  NetworkBuilder& bus(const std::string& id, double v_ll, const std::string& phases = "abc");
  NetworkBuilder& slack(const std::string& bus, double v_pu = 1.0, double angle_deg = 0.0);
  /// Uncoupled line with the same per-unit impedance on every phase, no shunt.
  NetworkBuilder& line_pu(const std::string& id, const std::string& from, const std::string& to, Complex z_pu,
                          const std::string& phases = "abc");
  /// Cable from sequence data in ohm/km and microsiemens/km.
  NetworkBuilder& cable(const std::string& id, const std::string& from, const std::string& to, double length_m,
                        double r1 = 0.164, double x1 = 0.092, double r0 = 0.62, double x0 = 0.31, double b1 = 110.0);
  NetworkBuilder& transformer(const std::string& id, const std::string& hv, const std::string& lv, double kva,
                              double ratio, int tap = 0, double step_pct = 1.25, int tap_min = -4, int tap_max = 4,
                              const std::string& hv_conn = "delta", const std::string& lv_conn = "wye_grounded");
  /// Balanced totals in kW / kvar.
  NetworkBuilder& load(const std::string& id, const std::string& bus, double kw, double kvar,
                       const std::string& kind = "fixed");
  NetworkBuilder& load_phases(const std::string& id, const std::string& bus, const std::string& phases,
                              std::vector<double> kw, std::vector<double> kvar);
  NetworkBuilder& generator(const std::string& id, const std::string& bus, double kw, double kvar = 0.0);

  std::string json() const { return doc_.dump(); }
  NetworkModel build() const;

 private:
  nlohmann::json doc_;
};

/// Two buses at 11 kV joined by an uncoupled per-unit impedance, balanced load
/// (three-phase total in pu of the 1 MVA base) at the far end.
NetworkModel two_bus(Complex z_pu, Complex load_pu, double slack_pu = 1.0);

/// Slack f1, MV buses f2..f5, a Dyn transformer f3 -> l1, loads on f2, f4,
/// l1 and an unbalanced load on f5, generator on f5.
NetworkModel small_feeder();
/// Same feeder with every load balanced, so splitting totals by phase
/// current reproduces the true per-phase powers.
NetworkModel balanced_small_feeder();

/// Per-phase meters (v_a..c, p_a..c, q_a..c) on every bus with a device plus
/// the slack.
std::vector<MeterSpec> small_feeder_phase_meters();
/// SEND-style meters (line voltages, currents, totals) on the same buses.
std::vector<MeterSpec> small_feeder_send_meters();

/// Feeder whose two tail buses carry unmetered loads and voltage-only meters.
NetworkModel unmetered_tail_feeder();
std::vector<MeterSpec> unmetered_tail_meters();
inline const std::vector<std::string> kTailBuses{"t1", "t2"};

MeterSpec phase_meter(const std::string& id, const std::string& bus, double rated_v_ln, double rated_a,
                      MeterSign sign = MeterSign::consumption);
MeterSpec send_meter(const std::string& id, const std::string& bus, double rated_v_ln, double rated_a,
                     MeterSign sign = MeterSign::consumption);
MeterSpec voltage_meter(const std::string& id, const std::string& bus, double rated_v_ln);
/// Every measurand.
MeterSpec full_meter(const std::string& id, const std::string& bus, double rated_v_ln, double rated_a,
                     MeterSign sign = MeterSign::consumption);

PowerFlowSolution solve(const NetworkModel& model);

/// One timestamp of synthetic data for the model's declared state.
MeasurementSeries synth_once(const NetworkModel& model, const PowerFlowSolution& sol,
                             const std::vector<MeterSpec>& meters, std::uint64_t seed, double noise_scale,
                             Timestamp t = t0());

/// Voltage-quality fixtures: one meter "m" with v_a (slow rise), i_a and p_a
/// over 200 samples at 30 s from t0(). The fault is applied to v_a only.
enum class ChannelFault { none, stuck, stepped, spike };
inline constexpr int kQualitySamples = 200;
MeasurementSeries quality_fixture(std::uint64_t seed, ChannelFault fault = ChannelFault::none);
/// Sample time k of the quality fixture.
Timestamp quality_time(int k);
/// Stuck from sample 80 for 61 samples, quantised to 2.3 V steps, or +30 V at sample 100.
inline constexpr int kStuckFrom = 80;
inline constexpr int kStuckLength = 61;
inline constexpr double kQuantStep = 2.3;
inline constexpr int kSpikeAt = 100;

/// Buses for which some voltage functional (|V|^2 per node, Re/Im of
/// V_p conj(V_q) per node pair) raises the rank of the stacked measurement
/// and constraint Jacobian at the flat start (column-pivoted QR rank test).
std::vector<std::string> brute_force_unobservable(const DsseProblem& problem);

/// max |V_est - V_true| over nodes, removing the global angle difference at
/// the first slack node.
double state_error(const Eigen::VectorXcd& estimate, const Eigen::VectorXcd& truth);

}  // namespace dtwin::test
