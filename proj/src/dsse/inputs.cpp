#include <cmath>
#include <fmt/format.h>

#include "dtwin/dsse.hpp"
#include "dtwin/errors.hpp"
#include "dtwin/exportlimit.hpp"

namespace dtwin {

namespace {

double reading(const MeasurementSeries& s, const MeterSpec& m, Measurand x, Timestamp t) {
  if (!m.measures(x)) return std::nan("");
  const auto v = s.value_at(m.id, x, t);
  return v ? *v : std::nan("");
}

Measurand offset(Measurand base, int k) { return static_cast<Measurand>(static_cast<int>(base) + k); }

// Net consumption per phase in VA at the meter's bus, or nullopt when the
// meter has no usable power channels.
std::optional<PhaseComplex> net_consumption(const MeasurementSeries& s, const MeterSpec& m, Timestamp t,
                                            std::vector<std::string>& warnings) {
  const double sign = m.sign == MeterSign::consumption ? 1.0 : -1.0;
  PhaseComplex out{};
  bool per_phase = true;
  for (int k = 0; k < 3; ++k) {
    const double p = reading(s, m, offset(Measurand::p_a, k), t);
    const double q = reading(s, m, offset(Measurand::q_a, k), t);
    if (std::isnan(p)) {
      per_phase = false;
      break;
    }
    out[k] = sign * Complex{p, std::isnan(q) ? 0.0 : q};
  }
  if (per_phase) return out;

  const double pt = reading(s, m, Measurand::p_tot, t);
  if (std::isnan(pt)) return std::nullopt;
  double qt = reading(s, m, Measurand::q_tot, t);
  if (std::isnan(qt)) {
    warnings.push_back(fmt::format("meter \"{}\": q_tot missing at {}, taken as 0", m.id, format_timestamp(t)));
    qt = 0.0;
  }
  PhaseReal currents{};
  for (int k = 0; k < 3; ++k) {
    const double i = reading(s, m, offset(Measurand::i_a, k), t);
    if (std::isnan(i)) {
      currents = {0.0, 0.0, 0.0};
      break;
    }
    currents[k] = i;
  }
  const PhaseReal ps = split_total_power(pt, currents), qs = split_total_power(qt, currents);
  for (int k = 0; k < 3; ++k) out[k] = sign * Complex{ps[k], qs[k]};
  return out;
}

}  // namespace

PowerFlowCase build_powerflow_case(const NetworkModel& model, std::span<const MeterSpec> meters,
                                   const MeasurementSeries& series, Timestamp t, const CaseOptions& options) {
  PowerFlowCase pf;
  pf.injections = InjectionSet::from_model(model);
  pf.slack.voltage_pu = model.slack_voltage_pu;
  const std::size_t slack = model.bus_index(model.slack_bus);
  const double s_phase = model.bases.power_va / 3.0;

  std::optional<Complex> pcc;  // power delivered into the network at the slack, VA
  bool slack_set = false;
  std::map<std::size_t, PhaseComplex> bus_consumption;
  for (const auto& m : meters) {
    const std::size_t bus = model.bus_index(m.bus);
    if (bus == slack) {
      const double vab = reading(series, m, Measurand::v_ab, t), vbc = reading(series, m, Measurand::v_bc, t),
                   vca = reading(series, m, Measurand::v_ca, t);
      const double base = model.buses[bus].base_voltage_v;
      if (!slack_set && !std::isnan(vab) && !std::isnan(vbc) && !std::isnan(vca)) {
        pf.slack.voltage_pu = slack_from_line_voltages(vab, vbc, vca, base);
        slack_set = true;
      } else if (!slack_set) {
        const double va = reading(series, m, Measurand::v_a, t), vb = reading(series, m, Measurand::v_b, t),
                     vc = reading(series, m, Measurand::v_c, t);
        if (!std::isnan(va) && !std::isnan(vb) && !std::isnan(vc)) {
          const double vln = model.base_of(bus).v_ln();
          const PhaseComplex unit = balanced_phasors();
          pf.slack.voltage_pu = {unit[0] * (va / vln), unit[1] * (vb / vln), unit[2] * (vc / vln)};
          slack_set = true;
        }
      }
      if (const auto c = net_consumption(series, m, t, pf.warnings)) pcc = -((*c)[0] + (*c)[1] + (*c)[2]);
      continue;
    }
    if (const auto c = net_consumption(series, m, t, pf.warnings)) {
      auto& acc = bus_consumption[bus];
      for (int k = 0; k < 3; ++k) acc[k] += (*c)[k];
    }
  }
  if (!slack_set)
    pf.warnings.push_back(fmt::format("no slack voltage reading at {}; using the model set-point", format_timestamp(t)));

  // Metered buses: loads carry the net consumption, generators are folded in.
  std::map<std::string, PhaseComplex> metered_loads;
  Complex metered_total{};
  for (const auto& [bus, cons] : bus_consumption) {
    const std::string& id = model.buses[bus].id;
    std::vector<const PowerDevice*> loads, gens;
    for (const auto& l : model.loads)
      if (l.bus == id) loads.push_back(&l);
    for (const auto& g : model.generators)
      if (g.bus == id) gens.push_back(&g);
    metered_total += cons[0] + cons[1] + cons[2];
    if (!loads.empty()) {
      for (const auto* g : gens) pf.injections.generators[g->id] = PhaseComplex{};
      for (const auto* l : loads) {
        PhaseComplex share{};
        for (int k = 0; k < 3; ++k)
          if (l->phases.contains(kAllPhases[k])) share[k] = cons[k] / static_cast<double>(loads.size());
        metered_loads[l->id] = share;
      }
    } else if (!gens.empty()) {
      for (const auto* g : gens) {
        PhaseComplex share{};
        for (int k = 0; k < 3; ++k)
          if (g->phases.contains(kAllPhases[k]))
            share[k] = -cons[k] / static_cast<double>(gens.size()) / s_phase;
        pf.injections.generators[g->id] = share;
      }
    } else if (std::abs(cons[0] + cons[1] + cons[2]) > 1.0) {
      pf.warnings.push_back(fmt::format("metered bus \"{}\" has no devices; its power is ignored", id));
    }
  }

  // Unmetered loads share the residual when the PCC is metered.
  bool any_unmetered = false;
  for (const auto& l : model.loads) any_unmetered = any_unmetered || !metered_loads.contains(l.id);
  if (pcc && (any_unmetered || options.slack_load_id)) {
    Complex unmetered_gen{};
    for (const auto& g : model.generators) {
      if (bus_consumption.contains(model.bus_index(g.bus))) continue;
      for (const Complex& s : pf.injections.generators.at(g.id)) unmetered_gen += s * s_phase;
    }
    std::map<std::string, Complex> totals;
    Complex metered_load_total{};
    for (const auto& [id, s] : metered_loads) {
      totals[id] = s[0] + s[1] + s[2];
      metered_load_total += totals[id];
    }
    // demand left for unmetered loads = PCC + unmetered generation - metered net consumption
    const Complex load_pcc = metered_load_total + (*pcc + unmetered_gen - metered_total);
    const LoadAllocation alloc =
        allocate_loads(model, totals, load_pcc, AllocationOptions{options.seed, options.slack_load_id});
    pf.warnings.insert(pf.warnings.end(), alloc.warnings.begin(), alloc.warnings.end());
    for (const auto& [id, s] : alloc.loads) {
      if (metered_loads.contains(id) && !(options.slack_load_id && *options.slack_load_id == id)) continue;
      PhaseComplex pu{};
      for (int k = 0; k < 3; ++k) pu[k] = s[k] / s_phase;
      pf.injections.loads[id] = pu;
    }
  } else if (any_unmetered && !pcc) {
    pf.warnings.push_back("PCC power not metered; unmetered loads keep their declared values");
  }
  for (const auto& [id, s] : metered_loads) {
    if (options.slack_load_id && *options.slack_load_id == id && pcc && !any_unmetered) continue;
    PhaseComplex pu{};
    for (int k = 0; k < 3; ++k) pu[k] = s[k] / s_phase;
    pf.injections.loads[id] = pu;
  }
  return pf;
}

}  // namespace dtwin
