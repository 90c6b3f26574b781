#include <cmath>
#include <fmt/format.h>
#include <random>

#include "dtwin/errors.hpp"
#include "dtwin/powerflow.hpp"
#include "dtwin/telemetry.hpp"

namespace dtwin {

namespace {

struct BusReading {
  PhaseComplex v_volts{};  // line-to-neutral phasors
  PhaseComplex s_va{};     // net injection, meter sign applied
  PhaseReal i_amps{};
};

BusReading read_bus(const PowerFlowSystem& sys, const Eigen::VectorXcd& s_inj, const Eigen::VectorXcd& v,
                    const MeterSpec& meter) {
  const NetworkModel& model = sys.model();
  const auto bus = model.find_bus(meter.bus);
  if (!bus) throw InputError(fmt::format("meter \"{}\": bus \"{}\" is not in the solution", meter.id, meter.bus));
  const PerUnitBase base = model.base_of(*bus);
  const double sign = meter.sign == MeterSign::generation ? 1.0 : -1.0;
  BusReading r;
  for (Phase p : kAllPhases) {
    const int n = sys.nodes().index(*bus, p);
    if (n < 0) continue;
    const int k = phase_index(p);
    r.v_volts[k] = v[n] * base.v_ln();
    r.s_va[k] = sign * s_inj[n] * base.s_phase();
    const double vm = std::abs(r.v_volts[k]);
    r.i_amps[k] = vm > 0.0 ? std::abs(r.s_va[k]) / vm : 0.0;
  }
  return r;
}

double value_of(const BusReading& r, Measurand m) {
  switch (m) {
    case Measurand::v_ab: return std::abs(r.v_volts[0] - r.v_volts[1]);
    case Measurand::v_bc: return std::abs(r.v_volts[1] - r.v_volts[2]);
    case Measurand::v_ca: return std::abs(r.v_volts[2] - r.v_volts[0]);
    case Measurand::v_a: case Measurand::v_b: case Measurand::v_c:
      return std::abs(r.v_volts[phase_index(measurand_phase(m))]);
    case Measurand::i_a: case Measurand::i_b: case Measurand::i_c:
      return r.i_amps[phase_index(measurand_phase(m))];
    case Measurand::p_tot: return r.s_va[0].real() + r.s_va[1].real() + r.s_va[2].real();
    case Measurand::q_tot: return r.s_va[0].imag() + r.s_va[1].imag() + r.s_va[2].imag();
    case Measurand::p_a: case Measurand::p_b: case Measurand::p_c:
      return r.s_va[phase_index(measurand_phase(m))].real();
    case Measurand::q_a: case Measurand::q_b: case Measurand::q_c:
      return r.s_va[phase_index(measurand_phase(m))].imag();
  }
  return 0.0;
}

double sigma_of(const BusReading& r, const MeterSpec& meter, Measurand m, double value) {
  if (is_line_voltage(m) || is_phase_voltage(m)) return voltage_tolerance(meter, value) / 3.0;
  if (is_current(m)) return current_tolerance(meter, value) / 3.0;
  const PowerKind kind = is_active_power(m) ? PowerKind::active : PowerKind::reactive;
  if (m == Measurand::p_tot || m == Measurand::q_tot) {
    const PhaseReal tol = phase_power_tolerances(meter, r.i_amps, kind);
    return (tol[0] + tol[1] + tol[2]) / 3.0;
  }
  return phase_power_tolerance(meter, r.i_amps[phase_index(measurand_phase(m))], kind) / 3.0;
}

}  // namespace

double true_measurement(const NetworkModel& model, const PowerFlowSolution& sol, const MeterSpec& meter,
                        Measurand m) {
  const PowerFlowSystem sys(model);
  const Eigen::VectorXcd& v = sol.state.voltage;
  return value_of(read_bus(sys, sys.injected_power(v), v, meter), m);
}

double measurement_sigma(const NetworkModel& model, const PowerFlowSolution& sol, const MeterSpec& meter,
                         Measurand m, double true_value) {
  const PowerFlowSystem sys(model);
  const Eigen::VectorXcd& v = sol.state.voltage;
  return sigma_of(read_bus(sys, sys.injected_power(v), v, meter), meter, m, true_value);
}

MeasurementSeries synthesize_measurements(const NetworkModel& model, std::span<const TimedSolution> solutions,
                                          std::span<const MeterSpec> meters, const SynthOptions& options) {
  if (!(options.noise_scale >= 0.0)) throw InputError("synthesis: noise scale must be non-negative");
  const PowerFlowSystem sys(model);
  std::mt19937_64 rng(options.seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  MeasurementSeries out;
  if (solutions.size() >= 2)
    out.cadence_s = static_cast<double>((solutions[1].time - solutions[0].time).count());
  for (const auto& ts : solutions) {
    if (!ts.solution || ts.solution->state.voltage.size() != static_cast<Eigen::Index>(sys.nodes().size()))
      throw InputError("synthesis: solution does not match the network model");
    const Eigen::VectorXcd& v = ts.solution->state.voltage;
    const Eigen::VectorXcd s_inj = sys.injected_power(v);
    for (const auto& meter : meters) {
      const BusReading r = read_bus(sys, s_inj, v, meter);
      for (Measurand m : meter.measurands) {
        const double truth = value_of(r, m);
        const double sigma = sigma_of(r, meter, m, truth) * options.noise_scale;
        const double z = normal(rng);
        out.add(meter.id, m, ts.time, truth + sigma * z);
      }
    }
  }
  return out;
}

}  // namespace dtwin
