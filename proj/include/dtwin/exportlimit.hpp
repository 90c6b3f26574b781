#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <iosfwd>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "dtwin/netmodel.hpp"
#include "dtwin/powerflow.hpp"
#include "dtwin/telemetry.hpp"

namespace dtwin {

// ---------------------------------------------------------------------------
// Load allocation

struct AllocationOptions {
  std::uint64_t seed = 1;
  /// Receives the residual when no unmetered load exists.
  std::optional<std::string> slack_load_id;
};

struct LoadAllocation {
  std::map<std::string, PhaseComplex> loads;  // VA per phase, every load of the model
  Complex residual_power{};                   // PCC total minus metered total, VA
  std::uint64_t seed = 1;
  bool residual_allocated = true;
  std::vector<std::string> warnings;
};

/// Metered loads are split equally over their phases; the residual is spread
/// over unmetered loads with weights drawn uniformly from [0, 2] x the mean
/// share and renormalised.
LoadAllocation allocate_loads(const NetworkModel& model, const std::map<std::string, Complex>& metered_powers_va,
                              Complex pcc_injection_va, const AllocationOptions& options = {});

/// Sum of all allocated powers: loads in model order, phases a, b, c.
Complex allocation_total(const NetworkModel& model, const LoadAllocation& allocation);

// ---------------------------------------------------------------------------
// Voltage-rise scalars

inline constexpr double kMinPowerFactor = 0.1;

/// sqrt(1 - pf^2) / pf. Throws InputError outside [0.1, 1].
double pf_coefficient(double power_factor);

struct VoltageRiseModel {
  double r_pu = 0.0;  // d|V|/dP
  double x_pu = 0.0;  // d|V|/dQ
};

struct InjectionSensitivity {
  double mw_per_pct = 0.0;  // MW of export per 1 % voltage rise
  bool unbounded = false;   // R - X c <= 0: the voltage never binds
};

/// 1 % / (R - X c_pf), converted to MW on `power_base_va`.
InjectionSensitivity injection_voltage_sensitivity(double r_pu, double x_pu, double power_factor,
                                                   double power_base_va = 1.0e6);

/// epsilon (%) x sensitivity (MW per %).
double safety_factor(double tolerance_pct, double sensitivity_mw_per_pct);

/// R and X of one row of a sensitivity matrix.
VoltageRiseModel voltage_rise_model(const SensitivityMatrix& sens, Eigen::Index node);

struct MaxInjection {
  double mw = 0.0;
  double pu = 0.0;
  bool unbounded = false;
  Eigen::Index binding_node = -1;
};

/// min over nodes with positive combined sensitivity of
/// (U+ - v_twin) / (M_P - c M_Q).
MaxInjection max_injection(const SensitivityMatrix& sens, const Eigen::VectorXd& v_twin, double u_plus,
                           double power_factor);

// ---------------------------------------------------------------------------
// Curtailment and benefit

struct TimeValue {
  Timestamp time;
  double value = 0.0;
};

/// Two-column CSV "timestamp,<value>" with a header row.
std::vector<TimeValue> read_time_values(const std::string& path);
std::vector<TimeValue> read_time_values(std::istream& in);

struct CurtailmentPoint {
  Timestamp time;
  double potential_mw = 0.0;
  double measured_mw = 0.0;
  double curtailment_mw = 0.0;
};

struct CurtailmentSeries {
  std::vector<CurtailmentPoint> points;
  double cadence_s = 120.0;
};

/// Linear interpolation of `series` at `t`; throws InputError outside its span.
double resample_at(std::span<const TimeValue> series, Timestamp t);

/// potential = reference x capacity + offset; curtailment = max(potential - measured, 0).
/// The reference is resampled onto the measured timestamps.
CurtailmentSeries estimate_curtailment(std::span<const TimeValue> measured_mw, std::span<const TimeValue> reference,
                                       double capacity_mw, double offset_mw);

/// Least-squares offset over samples where `use` is true (uncurtailed periods).
double fit_profile_offset(std::span<const TimeValue> measured_mw, std::span<const TimeValue> reference,
                          double capacity_mw, std::span<const bool> use);

enum class SchemeKind { dynamic_unity, q_control, conservative };

struct ExportScheme {
  SchemeKind kind = SchemeKind::dynamic_unity;
  std::string name;
  double power_factor = 1.0;
  double tolerance_pct = 0.0;  // conservative only
  double u_plus = 1.06;

  void validate() const;
};

std::string_view scheme_kind_name(SchemeKind k);
/// "unity", "q_control:0.9", "conservative:0.5" (optionally "@1.05" for U+).
ExportScheme parse_scheme(std::string_view text);

struct Economics {
  double price_per_mwh = 100.0;
  double carbon_kg_per_mwh = 400.0;
  double cadence_s = 120.0;
};

struct SchemeStep {
  Timestamp time;
  double curtailment_mw = 0.0;
  double pmax_mw = 0.0;
  double recovered_mw = 0.0;
};

struct SchemeResult {
  ExportScheme scheme;
  std::vector<SchemeStep> steps;
  double energy_mwh = 0.0;
  double revenue = 0.0;
  double emissions_t = 0.0;
  std::size_t negative_pmax_steps = 0;
};

struct BenefitReport {
  std::vector<SchemeResult> schemes;
  Economics economics;
};

/// Recovered power per step is min(curtailment, max(P_max, 0)); conservative
/// schemes subtract the safety factor first. `v_twin` holds one magnitude
/// vector per curtailment point (or a single vector reused for all).
BenefitReport scheme_benefit(const CurtailmentSeries& curtailment, std::span<const ExportScheme> schemes,
                             const SensitivityMatrix& sens, std::span<const Eigen::VectorXd> v_twin,
                             const Economics& economics = {});

/// energy (MWh) -> revenue and emissions (tonnes)
double revenue_for(double energy_mwh, const Economics& e);
double emissions_for(double energy_mwh, const Economics& e);

void write_scheme_series(std::ostream& os, const SchemeResult& result);
void write_benefit_summary(std::ostream& os, const BenefitReport& report);
void write_benefit_svg(std::ostream& os, const BenefitReport& report);

}  // namespace dtwin
