#include <algorithm>
#include <cmath>

#include "dtwin/kernels.hpp"
#include "dtwin/telemetry.hpp"

namespace dtwin {

double current_tolerance(const MeterSpec& meter, double measured_current) {
  const double floor = meter.valid_current_floor_pct / 100.0 * meter.rated_current_a;
  return meter.current_tol_pct / 100.0 * std::max(std::fabs(measured_current), floor);
}

double phase_power_tolerance(const MeterSpec& meter, double measured_current_phase, PowerKind kind) {
  const double pct = kind == PowerKind::active ? meter.p_tol_pct : meter.q_tol_pct;
  const double floor = meter.valid_current_floor_pct / 100.0 * meter.rated_current_a;
  return pct / 100.0 * meter.rated_voltage_v * std::max(std::fabs(measured_current_phase), floor);
}

PhaseReal phase_power_tolerances(const MeterSpec& meter, const PhaseReal& phase_currents, PowerKind kind) {
  const double pct = kind == PowerKind::active ? meter.p_tol_pct : meter.q_tol_pct;
  const double floor = meter.valid_current_floor_pct / 100.0 * meter.rated_current_a;
  PhaseReal out{};
  kernels::floored_scale(out, phase_currents, floor, pct / 100.0 * meter.rated_voltage_v);
  return out;
}

double voltage_tolerance(const MeterSpec& meter, double measured_voltage) {
  return meter.voltage_tol_pct / 100.0 * std::fabs(measured_voltage);
}

PhaseReal split_total_power(double p_total, const PhaseReal& phase_currents) {
  PhaseReal w{std::fabs(phase_currents[0]), std::fabs(phase_currents[1]), std::fabs(phase_currents[2])};
  double sum = w[0] + w[1] + w[2];
  if (!(sum > 0.0) || !std::isfinite(sum)) {
    w = {1.0, 1.0, 1.0};
    sum = 3.0;
  }
  PhaseReal out{p_total * (w[0] / sum), p_total * (w[1] / sum), p_total * (w[2] / sum)};
  if (!std::isfinite(p_total)) return out;

  // The last addend absorbs the rounding remainder: feed the residual of the
  // left-to-right sum back into it, falling back to ulp nudges when the
  // residual is below its resolution. When ties-to-even makes the target
  // unreachable, shift the partial sum by one ulp and try again.
  auto total = [&] { return (out[0] + out[1]) + out[2]; };
  const std::size_t shift = std::fabs(out[0]) >= std::fabs(out[1]) ? 0 : 1;
  const double base = out[shift];
  for (int attempt = 0; attempt < 4; ++attempt) {
    out[2] = p_total - (out[0] + out[1]);
    for (int guard = 0; guard < 64; ++guard) {
      const double t = total();
      if (t == p_total) return out;
      const double next = out[2] + (p_total - t);
      out[2] = next != out[2] ? next : std::nextafter(out[2], t < p_total ? INFINITY : -INFINITY);
    }
    // Offsets tried in order: +1, -1, +2 ulp.
    out[shift] = base;
    for (int k = 0; k <= attempt / 2; ++k) out[shift] = std::nextafter(out[shift], attempt % 2 == 0 ? INFINITY : -INFINITY);
  }
  return out;
}

}  // namespace dtwin
