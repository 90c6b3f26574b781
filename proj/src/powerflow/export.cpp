#include <cmath>
#include <fmt/format.h>
#include <numbers>
#include <ostream>

#include "dtwin/powerflow.hpp"

namespace dtwin {

void write_voltage_table(std::ostream& os, const NetworkModel& model, const PowerFlowSolution& sol) {
  os << fmt::format("# power_base_va={:.6g}\n", model.bases.power_va);
  os << "bus,phase,base_voltage_v,magnitude_pu,angle_deg\n";
  const auto& nodes = sol.state.nodes;
  for (std::size_t i = 0; i < nodes.size(); ++i) {
    const Complex v = sol.state.voltage[static_cast<Eigen::Index>(i)];
    const Bus& bus = model.buses[nodes[i].bus];
    os << fmt::format("{},{},{:.6g},{:.10f},{:.8f}\n", bus.id, phase_letter(nodes[i].phase), bus.base_voltage_v,
                      std::abs(v), std::arg(v) * 180.0 / std::numbers::pi);
  }
}

void write_branch_flow_table(std::ostream& os, const NetworkModel& model, const PowerFlowSolution& sol) {
  os << fmt::format("# power_base_va={:.6g}\n", model.bases.power_va);
  os << "branch,phase,p_from_pu,q_from_pu,p_to_pu,q_to_pu\n";
  for (const auto& bf : sol.branch_flows)
    for (Phase p : bf.phases.phases()) {
      const int k = phase_index(p);
      os << fmt::format("{},{},{:.10f},{:.10f},{:.10f},{:.10f}\n", bf.id, phase_letter(p), bf.from[k].real(),
                        bf.from[k].imag(), bf.to[k].real(), bf.to[k].imag());
    }
}

void write_sensitivity_table(std::ostream& os, const SensitivityMatrix& sens) {
  os << fmt::format("# injection_bus={} power_base_va={:.6g}\n", sens.injection_bus, sens.power_base_va);
  os << "node,v_ref_pu,dv_dp,dv_dq\n";
  for (Eigen::Index i = 0; i < sens.m.rows(); ++i)
    os << fmt::format("{},{:.10f},{:.10e},{:.10e}\n", sens.labels[static_cast<std::size_t>(i)],
                      sens.reference_magnitude[i], sens.m(i, 0), sens.m(i, 1));
}

}  // namespace dtwin
