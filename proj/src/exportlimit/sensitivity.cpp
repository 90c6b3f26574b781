#include <cmath>
#include <fmt/format.h>
#include <limits>

#include "dtwin/errors.hpp"
#include "dtwin/exportlimit.hpp"
#include "dtwin/kernels.hpp"

namespace dtwin {

double pf_coefficient(double power_factor) {
  if (!(power_factor >= kMinPowerFactor && power_factor <= 1.0))
    throw InputError(fmt::format("power factor {} outside [{}, 1]", power_factor, kMinPowerFactor));
  return std::sqrt(1.0 - power_factor * power_factor) / power_factor;
}

InjectionSensitivity injection_voltage_sensitivity(double r_pu, double x_pu, double power_factor,
                                                   double power_base_va) {
  const double denom = r_pu - x_pu * pf_coefficient(power_factor);
  if (!(denom > 0.0)) return {std::numeric_limits<double>::infinity(), true};
  return {0.01 / denom * power_base_va / 1.0e6, false};
}

double safety_factor(double tolerance_pct, double sensitivity_mw_per_pct) {
  if (!(tolerance_pct >= 0.0)) throw InputError("safety factor: tolerance must be non-negative");
  return tolerance_pct * sensitivity_mw_per_pct;
}

VoltageRiseModel voltage_rise_model(const SensitivityMatrix& sens, Eigen::Index node) {
  if (node < 0 || node >= sens.m.rows()) throw InputError("voltage rise model: node out of range");
  return {sens.m(node, 0), sens.m(node, 1)};
}

MaxInjection max_injection(const SensitivityMatrix& sens, const Eigen::VectorXd& v_twin, double u_plus,
                           double power_factor) {
  const Eigen::Index n = sens.m.rows();
  if (v_twin.size() != n) throw InputError("max_injection: dimension mismatch");
  const double c = pf_coefficient(power_factor);
  const auto sz = static_cast<std::size_t>(n);
  const Eigen::VectorXd mp = sens.m.col(0), mq = sens.m.col(1);
  Eigen::VectorXd combined(n), headroom(n);
  kernels::combine({combined.data(), sz}, {mp.data(), sz}, {mq.data(), sz}, -c);
  kernels::scale_offset({headroom.data(), sz}, {v_twin.data(), sz}, -1.0, u_plus);
  const kernels::MinRatio best = kernels::min_positive_ratio({headroom.data(), sz}, {combined.data(), sz});

  MaxInjection out;
  if (best.index < 0) {
    out.unbounded = true;
    out.pu = out.mw = std::numeric_limits<double>::infinity();
    return out;
  }
  out.binding_node = best.index;
  out.pu = best.value;
  out.mw = best.value * sens.power_base_va / 1.0e6;
  return out;
}

}  // namespace dtwin
