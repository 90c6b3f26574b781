#pragma once

#include <chrono>
#include <cstdint>
#include <iosfwd>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "dtwin/netmodel.hpp"

namespace dtwin {

struct PowerFlowSolution;

using Timestamp = std::chrono::sys_seconds;

/// "2021-06-01T12:00:00Z" (a trailing "Z" or "+00:00" is accepted, as is a
/// space instead of "T"). Throws InputError.
Timestamp parse_timestamp(std::string_view text);
std::string format_timestamp(Timestamp t);

/// Meter channels. CSV column names equal measurand_name().
enum class Measurand : std::uint8_t {
  v_ab, v_bc, v_ca,  // line voltage, V
  i_a, i_b, i_c,     // phase current, A
  p_tot, q_tot,      // three-phase power, W / var (kW / kVAr in CSV)
  v_a, v_b, v_c,     // phase voltage, V
  p_a, p_b, p_c,     // per-phase power
  q_a, q_b, q_c,
};

inline constexpr std::size_t kMeasurandCount = 17;

std::string_view measurand_name(Measurand m);
std::optional<Measurand> parse_measurand(std::string_view name);
/// kW/kVAr columns are scaled by 1000 on ingest.
double csv_scale(Measurand m);
bool is_line_voltage(Measurand m);
bool is_phase_voltage(Measurand m);
bool is_current(Measurand m);
bool is_active_power(Measurand m);
bool is_reactive_power(Measurand m);
/// Phase of a per-phase channel; for line voltages the first phase of the pair.
Phase measurand_phase(Measurand m);

/// Sign convention of a meter's power channels relative to the bus net injection.
enum class MeterSign { consumption, generation };

struct MeterSpec {
  std::string id;
  std::string bus;
  double rated_voltage_v = 230.0;  // line-to-neutral
  double rated_current_a = 100.0;
  std::vector<Measurand> measurands;
  double voltage_tol_pct = 0.5;
  double current_tol_pct = 0.2;
  double p_tol_pct = 1.0;
  double q_tol_pct = 2.0;
  double valid_current_floor_pct = 20.0;
  MeterSign sign = MeterSign::consumption;

  bool measures(Measurand m) const;
  void validate() const;
};

/// Sidecar document: {"<meter_id>": {"bus": ..., "rated_voltage_v": ..., ...}}.
std::vector<MeterSpec> parse_meters(std::string_view text);
std::vector<MeterSpec> load_meters(const std::string& path);
std::string meters_to_json(std::span<const MeterSpec> meters);

// ---------------------------------------------------------------------------
// Tolerances

enum class PowerKind { active, reactive };

/// current_tol% x max(I, floor% x I_rtd), amps.
double current_tolerance(const MeterSpec& meter, double measured_current);
/// p_tol% (or q_tol%) x U_rtd x max(|I|, floor% x I_rtd), W or var.
double phase_power_tolerance(const MeterSpec& meter, double measured_current_phase, PowerKind kind);
/// phase_power_tolerance for all three phases at once.
PhaseReal phase_power_tolerances(const MeterSpec& meter, const PhaseReal& phase_currents, PowerKind kind);
/// voltage_tol% of the measured magnitude.
double voltage_tolerance(const MeterSpec& meter, double measured_voltage);

/// Splits a three-phase total in proportion to the phase-current magnitudes,
/// with an equal split when all currents are zero. The parts satisfy
/// (p[0] + p[1]) + p[2] == p_total exactly in double arithmetic.
PhaseReal split_total_power(double p_total, const PhaseReal& phase_currents);

// ---------------------------------------------------------------------------
// Series

struct Channel {
  std::string meter_id;
  Measurand measurand = Measurand::v_ab;
  std::vector<Timestamp> times;
  std::vector<double> values;  // SI units; NaN = missing
};

class MeasurementSeries {
 public:
  double cadence_s = 30.0;
  std::vector<std::string> warnings;

  void add(const std::string& meter_id, Measurand m, Timestamp t, double value);
  const Channel* find(std::string_view meter_id, Measurand m) const;
  /// Value at exactly `t`; nullopt if absent, NaN if recorded as missing.
  std::optional<double> value_at(std::string_view meter_id, Measurand m, Timestamp t) const;
  /// Union of all timestamps, ascending.
  std::vector<Timestamp> timestamps() const;
  std::vector<std::string> meter_ids() const;
  /// Channels ordered by meter id then measurand.
  std::vector<const Channel*> channels() const;
  std::vector<const Channel*> channels_of(std::string_view meter_id) const;
  std::size_t sample_count() const;

 private:
  std::map<std::pair<std::string, Measurand>, Channel> channels_;
};

/// Parses `timestamp,meter_id,<measurand columns...>`. When `meters` is
/// given, meter ids and channel declarations are checked. Non-monotone
/// timestamps are kept and reported in `warnings`.
MeasurementSeries ingest_csv(std::istream& in, std::span<const MeterSpec> meters = {});
MeasurementSeries ingest_csv_file(const std::string& path, std::span<const MeterSpec> meters = {});
void write_csv(std::ostream& out, const MeasurementSeries& series);

// ---------------------------------------------------------------------------
// Quality screening

enum class QualityFlag : std::uint8_t { ok = 1, stuck = 2, stepped = 4, gross_error = 8, missing = 16 };

struct QualityOptions {
  std::size_t stuck_min_len = 20;
  double gross_z_threshold = 8.0;
  bool step_detect = true;
  std::size_t window = 21;             // centred window for robust z-scores
  std::size_t stepped_min_changes = 3;
  double stepped_min_hold_fraction = 0.5;  // share of unchanged consecutive pairs
};

struct ChannelQuality {
  std::string meter_id;
  Measurand measurand = Measurand::v_ab;
  std::uint8_t flags = 0;
  std::size_t samples = 0;
  std::size_t missing = 0;
  std::size_t longest_run = 0;
  std::optional<Timestamp> stuck_from;
  std::optional<double> inferred_step;      // median absolute change, channel units
  std::optional<double> inferred_step_pct;  // relative to the median magnitude
  std::vector<Timestamp> gross_errors;

  bool has(QualityFlag f) const { return (flags & static_cast<std::uint8_t>(f)) != 0; }
};

struct QualityReport {
  std::vector<ChannelQuality> channels;
  std::map<std::string, std::size_t> summary;  // flag name -> channel count

  const ChannelQuality* find(std::string_view meter_id, Measurand m) const;
};

std::string_view quality_flag_name(QualityFlag f);
QualityReport detect_quality_issues(const MeasurementSeries& series, const QualityOptions& options = {});
std::string quality_report_to_json(const QualityReport& report);

// ---------------------------------------------------------------------------
// Synthesis

struct SynthOptions {
  std::uint64_t seed = 1;
  double noise_scale = 1.0;  // multiplies every sigma; 0 gives noiseless values
};

struct TimedSolution {
  Timestamp time;
  const PowerFlowSolution* solution = nullptr;
};

/// Noise-free value of one channel for a solved network, SI units.
double true_measurement(const NetworkModel& model, const PowerFlowSolution& sol, const MeterSpec& meter,
                        Measurand m);
/// Standard deviation (tolerance / 3) of one channel at the given true value.
double measurement_sigma(const NetworkModel& model, const PowerFlowSolution& sol, const MeterSpec& meter,
                         Measurand m, double true_value);

MeasurementSeries synthesize_measurements(const NetworkModel& model, std::span<const TimedSolution> solutions,
                                          std::span<const MeterSpec> meters, const SynthOptions& options = {});

}  // namespace dtwin
