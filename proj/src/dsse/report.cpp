#include <algorithm>
#include <cmath>
#include <fmt/format.h>
#include <numbers>
#include <ostream>

#include <json.hpp>

#include "dtwin/dsse.hpp"

namespace dtwin {

std::vector<ResidualRow> residual_report(const StateEstimate& estimate, const DsseProblem& problem) {
  std::vector<std::pair<std::size_t, ResidualRow>> rows;
  const auto& model = *problem.model;
  for (std::size_t m = 0; m < problem.measurements.size(); ++m) {
    const auto& f = problem.measurements[m];
    const auto mi = static_cast<Eigen::Index>(m);
    ResidualRow r;
    r.bus = model.buses[f.bus].id;
    r.meter_id = f.meter_id;
    r.channel = f.channel;
    r.kind = f.kind;
    r.label = f.kind == MeasurementKind::line_voltage_magnitude
                  ? fmt::format("{}.{}{}", r.bus, phase_letter(f.phase), phase_letter(f.phase_to))
                  : fmt::format("{}.{}", r.bus, phase_letter(f.phase));
    const double h = f.value + estimate.raw_residuals[mi];
    r.measured = f.si_sign * f.value * f.si_per_pu;
    r.estimated = f.si_sign * h * f.si_per_pu;
    r.residual = r.estimated - r.measured;
    r.residual_pu = estimate.raw_residuals[mi];
    r.weighted = estimate.weighted_residuals[mi];
    r.provenance = f.provenance;
    rows.emplace_back(f.bus, std::move(r));
  }
  std::stable_sort(rows.begin(), rows.end(), [](const auto& a, const auto& b) { return a.first < b.first; });
  std::vector<ResidualRow> out;
  out.reserve(rows.size());
  for (auto& [bus, r] : rows) out.push_back(std::move(r));
  return out;
}

void write_estimate_table(std::ostream& os, const DsseProblem& problem, const StateEstimate& estimate) {
  const auto& model = *problem.model;
  os << fmt::format("# power_base_va={:.6g} objective={:.6e} iterations={} converged={}\n", model.bases.power_va,
                    estimate.objective, estimate.iterations, estimate.converged ? "true" : "false");
  os << "bus,phase,base_voltage_v,magnitude_pu,angle_deg,p_inj_pu,q_inj_pu,observability\n";
  const auto& nodes = estimate.state.nodes;
  for (std::size_t i = 0; i < nodes.size(); ++i) {
    const auto k = static_cast<Eigen::Index>(i);
    const Complex v = estimate.state.voltage[k];
    const Complex s = estimate.injections[k];
    const Bus& bus = model.buses[nodes[i].bus];
    os << fmt::format("{},{},{:.6g},{:.10f},{:.8f},{:.10f},{:.10f},{}\n", bus.id, phase_letter(nodes[i].phase),
                      bus.base_voltage_v, std::abs(v), std::arg(v) * 180.0 / std::numbers::pi, s.real(), s.imag(),
                      estimate.bus_labels.empty() ? "unknown" : estimate.bus_labels[nodes[i].bus]);
  }
}

void write_residual_table(std::ostream& os, const std::vector<ResidualRow>& rows) {
  os << "bus,label,meter_id,channel,kind,measured,estimated,residual,residual_pu,weighted,provenance\n";
  for (const auto& r : rows)
    os << fmt::format("{},{},{},{},{},{:.8g},{:.8g},{:.6e},{:.6e},{:.6e},\"{}\"\n", r.bus, r.label, r.meter_id,
                      r.channel, measurement_kind_name(r.kind), r.measured, r.estimated, r.residual, r.residual_pu,
                      r.weighted, r.provenance);
}

std::string observability_to_json(const ObservabilityReport& report) {
  nlohmann::ordered_json j;
  j["rank"] = report.rank;
  j["state_dimension"] = report.state_dimension;
  j["observable"] = report.observable;
  j["unobservable"] = report.unobservable;
  nlohmann::ordered_json ev = nlohmann::ordered_json::object();
  for (const auto& [bus, v] : report.evidence) ev[bus] = v;
  j["null_space_evidence"] = ev;
  nlohmann::ordered_json rz = nlohmann::ordered_json::object();
  for (const auto& [bus, v] : report.residual_zero) rz[bus] = v;
  j["residual_zero"] = rz;
  return j.dump(2) + "\n";
}

}  // namespace dtwin
