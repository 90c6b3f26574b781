#include <cmath>
#include <numbers>
#include <queue>

#include "dtwin/errors.hpp"
#include "dtwin/netmodel.hpp"

namespace dtwin {

double PerUnitBase::v_ln() const { return v_ll / std::numbers::sqrt3; }

PhaseComplex balanced_phasors(double magnitude_pu, double angle_deg) {
  constexpr double deg = std::numbers::pi / 180.0;
  return {std::polar(magnitude_pu, angle_deg * deg), std::polar(magnitude_pu, (angle_deg - 120.0) * deg),
          std::polar(magnitude_pu, (angle_deg + 120.0) * deg)};
}

double TransformerBranch::effective_ratio_at(int tap) const {
  return nominal_ratio * (1.0 + tap * tap_step_pct / 100.0);
}

bool LineSegment::operator==(const LineSegment& o) const {
  return id == o.id && from_bus == o.from_bus && to_bus == o.to_bus && phases == o.phases &&
         length_m == o.length_m && units == o.units && series_admittance == o.series_admittance &&
         shunt_from == o.shunt_from && shunt_to == o.shunt_to;
}

bool NetworkModel::operator==(const NetworkModel& o) const {
  return buses == o.buses && lines == o.lines && transformers == o.transformers && loads == o.loads &&
         generators == o.generators && slack_bus == o.slack_bus && bases == o.bases &&
         slack_voltage_pu == o.slack_voltage_pu;
}

namespace {
template <typename T>
std::optional<std::size_t> find_by_id(const std::vector<T>& items, std::string_view id) {
  for (std::size_t i = 0; i < items.size(); ++i)
    if (items[i].id == id) return i;
  return std::nullopt;
}
}  // namespace

std::optional<std::size_t> NetworkModel::find_bus(std::string_view id) const { return find_by_id(buses, id); }
std::optional<std::size_t> NetworkModel::find_transformer(std::string_view id) const {
  return find_by_id(transformers, id);
}
std::optional<std::size_t> NetworkModel::find_load(std::string_view id) const { return find_by_id(loads, id); }
std::optional<std::size_t> NetworkModel::find_generator(std::string_view id) const {
  return find_by_id(generators, id);
}

std::size_t NetworkModel::bus_index(std::string_view id) const {
  if (auto i = find_bus(id)) return *i;
  throw InputError("unknown bus \"" + std::string(id) + "\"");
}

std::vector<std::string> unreachable_from_slack(const NetworkModel& model) {
  const std::size_t n = model.buses.size();
  std::vector<std::vector<std::size_t>> adj(n);
  auto link = [&](const std::string& a, const std::string& b) {
    auto ia = model.find_bus(a);
    auto ib = model.find_bus(b);
    if (!ia || !ib) return;
    adj[*ia].push_back(*ib);
    adj[*ib].push_back(*ia);
  };
  for (const auto& l : model.lines) link(l.from_bus, l.to_bus);
  for (const auto& t : model.transformers) link(t.from_bus, t.to_bus);

  std::vector<bool> seen(n, false);
  if (auto s = model.find_bus(model.slack_bus)) {
    std::queue<std::size_t> q;
    q.push(*s);
    seen[*s] = true;
    while (!q.empty()) {
      auto u = q.front();
      q.pop();
      for (auto v : adj[u])
        if (!seen[v]) {
          seen[v] = true;
          q.push(v);
        }
    }
  }
  std::vector<std::string> out;
  for (std::size_t i = 0; i < n; ++i)
    if (!seen[i]) out.push_back(model.buses[i].id);
  return out;
}

ValidationReport validate(const NetworkModel& model) {
  ValidationReport report;
  if (model.bases.power_va <= 0.0) throw InputError("power base must be positive");
  if (model.buses.empty()) throw InputError("network has no buses");

  for (std::size_t i = 0; i < model.buses.size(); ++i) {
    const Bus& b = model.buses[i];
    if (b.id.empty()) throw InputError("bus with empty id");
    if (!(b.base_voltage_v > 0.0)) throw InputError("bus \"" + b.id + "\": base voltage must be positive");
    if (!(b.limits.lower_pu < b.limits.upper_pu))
      throw InputError("bus \"" + b.id + "\": lower voltage limit must be below upper limit");
    for (std::size_t j = 0; j < i; ++j)
      if (model.buses[j].id == b.id) throw InputError("duplicate id \"" + b.id + "\"");
  }

  // Branch and device ids share one namespace with each other (not with buses).
  std::vector<std::string> ids;
  auto claim = [&](const std::string& id) {
    if (id.empty()) throw InputError("element with empty id");
    for (const auto& s : ids)
      if (s == id) throw InputError("duplicate id \"" + id + "\"");
    ids.push_back(id);
  };

  auto slack = model.find_bus(model.slack_bus);
  if (!slack) throw InputError("unknown bus \"" + model.slack_bus + "\" (slack)");

  for (const auto& l : model.lines) {
    claim(l.id);
    const auto f = model.bus_index(l.from_bus);
    const auto t = model.bus_index(l.to_bus);
    if (f == t) throw InputError("line \"" + l.id + "\" connects a bus to itself");
    if (!(l.length_m > 0.0)) throw InputError("line \"" + l.id + "\": length must be positive");
    const auto k = static_cast<Eigen::Index>(l.phases.size());
    if (l.series_admittance.rows() != k || l.series_admittance.cols() != k)
      throw InputError("line \"" + l.id + "\": admittance size does not match phases");
    if (!l.series_admittance.isApprox(l.series_admittance.transpose(), 1e-9))
      throw InputError("line \"" + l.id + "\": series admittance must be symmetric");
    for (Phase p : l.phases.phases())
      if (!model.buses[f].phases.contains(p) || !model.buses[t].phases.contains(p))
        throw InputError("line \"" + l.id + "\": phase-set mismatch with its buses");
    if (l.units == ImpedanceUnits::siemens && model.buses[f].base_voltage_v != model.buses[t].base_voltage_v)
      throw InputError("line \"" + l.id + "\" connects buses with different base voltages");
  }
  for (const auto& t : model.transformers) {
    claim(t.id);
    const auto f = model.bus_index(t.from_bus);
    const auto to = model.bus_index(t.to_bus);
    if (f == to) throw InputError("transformer \"" + t.id + "\" connects a bus to itself");
    if (!(t.rated_power_va > 0.0)) throw InputError("transformer \"" + t.id + "\": rated power must be positive");
    if (t.tap_min > t.tap_max) throw InputError("transformer \"" + t.id + "\": empty tap range");
    if (t.tap_position < t.tap_min || t.tap_position > t.tap_max)
      throw InputError("transformer \"" + t.id + "\": tap position outside tap range");
    if (!(t.effective_ratio() > 0.0)) throw InputError("transformer \"" + t.id + "\": ratio must be positive");
    if (std::abs(t.series_impedance_pu) == 0.0)
      throw InputError("transformer \"" + t.id + "\": series impedance must be non-zero");
    if (!model.buses[f].phases.is_three_phase() || !model.buses[to].phases.is_three_phase())
      throw InputError("transformer \"" + t.id + "\": phase-set mismatch (three-phase buses required)");
  }
  auto check_device = [&](const PowerDevice& d, const char* what) {
    claim(d.id);
    const auto b = model.find_bus(d.bus);
    if (!b) throw InputError(std::string(what) + " \"" + d.id + "\": unknown bus \"" + d.bus + "\"");
    for (Phase p : kAllPhases) {
      const bool on = d.phases.contains(p);
      if (on && !model.buses[*b].phases.contains(p))
        throw InputError(std::string(what) + " \"" + d.id + "\": phase-set mismatch with bus");
      if (!on && d.power_va[phase_index(p)] != Complex{})
        throw InputError(std::string(what) + " \"" + d.id + "\": power on a phase it is not connected to");
    }
  };
  for (const auto& l : model.loads) check_device(l, "load");
  for (const auto& g : model.generators) check_device(g, "generator");

  report.unreachable_buses = unreachable_from_slack(model);
  for (const auto& id : report.unreachable_buses)
    report.warnings.push_back("bus \"" + id + "\" is not connected to the slack");
  return report;
}

NetworkModel apply_tap(const NetworkModel& model, std::string_view transformer_id, int tap_position) {
  auto idx = model.find_transformer(transformer_id);
  if (!idx) throw InputError("unknown transformer \"" + std::string(transformer_id) + "\"");
  const auto& t = model.transformers[*idx];
  if (tap_position < t.tap_min || tap_position > t.tap_max)
    throw InputError("tap position " + std::to_string(tap_position) + " outside range [" +
                     std::to_string(t.tap_min) + ", " + std::to_string(t.tap_max) + "] for \"" + t.id + "\"");
  NetworkModel copy = model;
  copy.transformers[*idx].tap_position = tap_position;
  return copy;
}

Eigen::Matrix3cd sequence_to_phase(Complex z1, Complex z0) {
  const Complex self = (2.0 * z1 + z0) / 3.0;
  const Complex mutual = (z0 - z1) / 3.0;
  Eigen::Matrix3cd z;
  z.setConstant(mutual);
  z.diagonal().setConstant(self);
  return z;
}

NodeMap::NodeMap(const NetworkModel& model) {
  lookup_.assign(model.buses.size(), {-1, -1, -1});
  for (std::size_t b = 0; b < model.buses.size(); ++b) {
    bus_ids_.push_back(model.buses[b].id);
    for (Phase p : model.buses[b].phases.phases()) {
      lookup_[b][phase_index(p)] = static_cast<int>(nodes_.size());
      nodes_.push_back({b, p});
    }
  }
}

int NodeMap::index(std::size_t bus, Phase p) const { return lookup_.at(bus)[phase_index(p)]; }

std::vector<std::size_t> NodeMap::bus_nodes(std::size_t bus) const {
  std::vector<std::size_t> out;
  for (int i : lookup_.at(bus))
    if (i >= 0) out.push_back(static_cast<std::size_t>(i));
  return out;
}

std::string NodeMap::label(std::size_t i) const {
  const Node& n = nodes_.at(i);
  return bus_ids_[n.bus] + "." + phase_letter(n.phase);
}

}  // namespace dtwin
