#include <cmath>
#include <fmt/format.h>
#include <numbers>

#include "dtwin/dsse.hpp"
#include "dtwin/errors.hpp"
#include "dtwin/kernels.hpp"

namespace dtwin {

std::string_view measurement_kind_name(MeasurementKind k) {
  switch (k) {
    case MeasurementKind::line_voltage_magnitude: return "line_voltage";
    case MeasurementKind::phase_voltage_magnitude: return "phase_voltage";
    case MeasurementKind::p_phase: return "p_phase";
    case MeasurementKind::q_phase: return "q_phase";
  }
  return "?";
}

DsseProblem empty_problem(std::shared_ptr<const NetworkModel> model, DsseMode mode, double reference_angle_deg) {
  if (!model) throw InputError("dsse: null network model");
  DsseProblem p;
  p.model = model;
  p.system = std::make_shared<const PowerFlowSystem>(*model);
  p.mode = mode;
  p.slack_bus = model->bus_index(model->slack_bus);
  p.reference_angle_rad = reference_angle_deg * std::numbers::pi / 180.0;
  p.pin_zero_sequence = mode == DsseMode::raw_send;
  p.pin_phase_angles = mode == DsseMode::synthetic;
  p.slack_guess = balanced_phasors(1.0, reference_angle_deg);

  std::vector<std::uint8_t> device_mask(model->buses.size(), 0);
  for (const auto* devices : {&model->loads, &model->generators})
    for (const auto& d : *devices) device_mask[model->bus_index(d.bus)] |= d.phases.mask();
  const NodeMap& nodes = p.system->nodes();
  for (std::size_t i = 0; i < nodes.size(); ++i) {
    const Node& n = nodes[i];
    if (n.bus == p.slack_bus) continue;
    if (!((device_mask[n.bus] >> phase_index(n.phase)) & 1U)) p.zero_injection_nodes.push_back(i);
  }
  return p;
}

namespace {

bool excluded(const QualityReport* q, const std::string& meter, Measurand m, Timestamp t, std::string& why) {
  if (!q) return false;
  const ChannelQuality* c = q->find(meter, m);
  if (!c) return false;
  if (c->has(QualityFlag::stuck)) why = "stuck";
  else if (c->has(QualityFlag::stepped)) why = "stepped";
  else if (std::find(c->gross_errors.begin(), c->gross_errors.end(), t) != c->gross_errors.end())
    why = "gross_error";
  else return false;
  return true;
}

std::string flag_note(const QualityReport* q, const std::string& meter, Measurand m) {
  if (!q) return {};
  const ChannelQuality* c = q->find(meter, m);
  if (!c) return {};
  std::string out;
  for (QualityFlag f : {QualityFlag::stuck, QualityFlag::stepped, QualityFlag::gross_error})
    if (c->has(f)) out += (out.empty() ? "" : "+") + std::string(quality_flag_name(f));
  return out;
}

}  // namespace

DsseProblem assemble_problem(std::shared_ptr<const NetworkModel> model, std::span<const MeterSpec> meters,
                             const MeasurementSeries& series, Timestamp t, const AssembleOptions& options) {
  DsseProblem p = empty_problem(model, options.mode, options.reference_angle_deg);
  p.time = t;
  const QualityReport* quality = options.quality;
  const bool raw = options.mode == DsseMode::raw_send;

  for (const auto& meter : meters) {
    const auto bus_opt = model->find_bus(meter.bus);
    if (!bus_opt) throw InputError(fmt::format("meter \"{}\": unknown bus \"{}\"", meter.id, meter.bus));
    const std::size_t bus = *bus_opt;
    const Bus& b = model->buses[bus];
    const PerUnitBase base = model->base_of(bus);
    const double sign = meter.sign == MeterSign::generation ? 1.0 : -1.0;

    // Reading with missing/quality handling. Returns NaN when unusable.
    auto read = [&](Measurand m, bool quality_exclusion) {
      const auto v = series.value_at(meter.id, m, t);
      if (!v || std::isnan(*v)) {
        p.warnings.push_back(fmt::format("meter \"{}\": missing channel {} at {}", meter.id, measurand_name(m),
                                         format_timestamp(t)));
        return std::nan("");
      }
      std::string why;
      if (quality_exclusion && excluded(quality, meter.id, m, t, why)) {
        p.warnings.push_back(fmt::format("meter \"{}\": channel {} excluded ({})", meter.id, measurand_name(m), why));
        return std::nan("");
      }
      return *v;
    };

    // --- voltages
    const bool has_line = meter.measures(Measurand::v_ab) || meter.measures(Measurand::v_bc) ||
                          meter.measures(Measurand::v_ca);
    const bool has_phase = meter.measures(Measurand::v_a) || meter.measures(Measurand::v_b) ||
                           meter.measures(Measurand::v_c);
    const bool use_line = has_line && (raw || !has_phase);
    if (use_line) {
      constexpr std::array<std::pair<Phase, Phase>, 3> pairs{
          {{Phase::a, Phase::b}, {Phase::b, Phase::c}, {Phase::c, Phase::a}}};
      for (int k = 0; k < 3; ++k) {
        const auto m = static_cast<Measurand>(static_cast<int>(Measurand::v_ab) + k);
        if (!meter.measures(m) || !b.phases.contains(pairs[k].first) || !b.phases.contains(pairs[k].second))
          continue;
        const double v = read(m, true);
        if (std::isnan(v)) continue;
        MeasurementFunction f;
        f.kind = MeasurementKind::line_voltage_magnitude;
        f.bus = bus;
        f.phase = pairs[k].first;
        f.phase_to = pairs[k].second;
        f.value = v / base.v_ll;
        f.sigma = voltage_tolerance(meter, v) / 3.0 / base.v_ll;
        f.meter_id = meter.id;
        f.channel = std::string(measurand_name(m));
        f.provenance = "measured";
        f.si_per_pu = base.v_ll;
        p.measurements.push_back(std::move(f));
      }
    } else if (has_phase) {
      for (Phase ph : b.phases.phases()) {
        const auto m = static_cast<Measurand>(static_cast<int>(Measurand::v_a) + phase_index(ph));
        if (!meter.measures(m)) continue;
        const double v = read(m, true);
        if (std::isnan(v)) continue;
        MeasurementFunction f;
        f.kind = MeasurementKind::phase_voltage_magnitude;
        f.bus = bus;
        f.phase = ph;
        f.value = v / base.v_ln();
        f.sigma = voltage_tolerance(meter, v) / 3.0 / base.v_ln();
        f.meter_id = meter.id;
        f.channel = std::string(measurand_name(m));
        f.provenance = "measured";
        f.si_per_pu = base.v_ln();
        p.measurements.push_back(std::move(f));
      }
    }

    // --- powers
    const bool has_tot = meter.measures(Measurand::p_tot) || meter.measures(Measurand::q_tot);
    const bool has_per_phase = meter.measures(Measurand::p_a) || meter.measures(Measurand::p_b) ||
                               meter.measures(Measurand::p_c) || meter.measures(Measurand::q_a) ||
                               meter.measures(Measurand::q_b) || meter.measures(Measurand::q_c);
    const bool use_split = has_tot && (raw || !has_per_phase);

    // Phase currents: measured where available (quality flags noted, not excluded).
    PhaseReal current{};
    std::array<bool, 3> current_ok{false, false, false};
    std::array<std::string, 3> current_note{};
    for (int k = 0; k < 3; ++k) {
      const auto m = static_cast<Measurand>(static_cast<int>(Measurand::i_a) + k);
      if (!meter.measures(m)) continue;
      const auto v = series.value_at(meter.id, m, t);
      if (!v || std::isnan(*v)) continue;
      current[k] = std::fabs(*v);
      current_ok[k] = true;
      current_note[k] = flag_note(quality, meter.id, m);
    }

    auto push_power = [&](MeasurementKind kind, Phase ph, double value_si, double current_a, std::string channel,
                          std::string provenance) {
      MeasurementFunction f;
      f.kind = kind;
      f.bus = bus;
      f.phase = ph;
      f.value = sign * value_si / base.s_phase();
      const PowerKind pk = kind == MeasurementKind::p_phase ? PowerKind::active : PowerKind::reactive;
      f.sigma = phase_power_tolerance(meter, current_a, pk) / 3.0 / base.s_phase();
      f.meter_id = meter.id;
      f.channel = std::move(channel);
      f.provenance = std::move(provenance);
      f.si_per_pu = base.s_phase();
      f.si_sign = sign;
      p.measurements.push_back(std::move(f));
    };

    if (use_split) {
      const bool all_currents = current_ok[0] && current_ok[1] && current_ok[2];
      std::string prov = all_currents ? "split by i_a,i_b,i_c" : "equal split (phase currents unavailable)";
      for (int k = 0; k < 3; ++k)
        if (!current_note[k].empty())
          prov += fmt::format("; {} flagged {}", measurand_name(static_cast<Measurand>(3 + k)), current_note[k]);
      const PhaseReal weights = all_currents ? current : PhaseReal{0.0, 0.0, 0.0};
      for (auto [tot, kind] : {std::pair{Measurand::p_tot, MeasurementKind::p_phase},
                               std::pair{Measurand::q_tot, MeasurementKind::q_phase}}) {
        if (!meter.measures(tot)) continue;
        const double total = read(tot, true);
        if (std::isnan(total)) continue;
        const PhaseReal parts = split_total_power(total, weights);
        for (Phase ph : b.phases.phases()) {
          const int k = phase_index(ph);
          double i_k = current_ok[k] ? current[k] : 0.0;
          if (!current_ok[k]) {
            // estimate |I| from the split share and the nominal phase voltage
            i_k = std::fabs(parts[k]) / base.v_ln();
          }
          push_power(kind, ph, parts[k], i_k, std::string(measurand_name(tot)), prov);
        }
        for (int k = 0; k < 3; ++k)
          if (!b.phases.contains(kAllPhases[k]) && parts[k] != 0.0)
            p.warnings.push_back(fmt::format("meter \"{}\": {} share on absent phase {} dropped", meter.id,
                                             measurand_name(tot), phase_letter(kAllPhases[k])));
      }
    } else if (has_per_phase) {
      for (Phase ph : b.phases.phases()) {
        const int k = phase_index(ph);
        const auto mp = static_cast<Measurand>(static_cast<int>(Measurand::p_a) + k);
        const auto mq = static_cast<Measurand>(static_cast<int>(Measurand::q_a) + k);
        const double pv = meter.measures(mp) ? read(mp, true) : std::nan("");
        const double qv = meter.measures(mq) ? read(mq, true) : std::nan("");
        double i_k = current[k];
        if (!current_ok[k]) {
          // |I| = |S| / |V| from the same meter's readings
          const auto vm = static_cast<Measurand>(static_cast<int>(Measurand::v_a) + k);
          const auto vv = series.value_at(meter.id, vm, t);
          const double v = vv && std::isfinite(*vv) && *vv > 0.0 ? *vv : base.v_ln();
          i_k = std::hypot(std::isnan(pv) ? 0.0 : pv, std::isnan(qv) ? 0.0 : qv) / v;
        }
        if (!std::isnan(pv)) push_power(MeasurementKind::p_phase, ph, pv, i_k, std::string(measurand_name(mp)),
                                        "measured");
        if (!std::isnan(qv)) push_power(MeasurementKind::q_phase, ph, qv, i_k, std::string(measurand_name(mq)),
                                        "measured");
      }
    }
  }
  if (p.measurements.empty())
    throw InputError(fmt::format("dsse: no usable measurements at {}", format_timestamp(t)));
  return p;
}

// ---------------------------------------------------------------------------
// Evaluation

Eigen::VectorXd state_vector(const Eigen::VectorXcd& v) {
  Eigen::VectorXd x(2 * v.size());
  x.head(v.size()) = v.real();
  x.tail(v.size()) = v.imag();
  return x;
}

Eigen::VectorXcd state_phasors(const Eigen::VectorXd& x) {
  const Eigen::Index n = x.size() / 2;
  Eigen::VectorXcd v(n);
  for (Eigen::Index i = 0; i < n; ++i) v[i] = {x[i], x[n + i]};
  return v;
}

Eigen::VectorXd flat_start_state(const DsseProblem& p) { return state_vector(p.system->flat_start(p.slack_guess)); }

namespace {

struct NodeRef {
  Eigen::Index i;
  Eigen::Index j;  // second node for line voltages
};

NodeRef locate(const DsseProblem& p, const MeasurementFunction& f) {
  const NodeMap& nodes = p.system->nodes();
  const int i = nodes.index(f.bus, f.phase);
  const int j = f.kind == MeasurementKind::line_voltage_magnitude ? nodes.index(f.bus, f.phase_to) : i;
  if (i < 0 || j < 0) throw InputError("dsse: measurement refers to an absent phase");
  return {i, j};
}

// d(P_i, Q_i)/d(e, f) rows into `row_p`/`row_q` of `jac` (either may be -1).
void power_rows(const Eigen::MatrixXcd& y, const Eigen::VectorXcd& v, const Eigen::VectorXcd& cur, Eigen::Index i,
                Eigen::MatrixXd& jac, Eigen::Index row_p, Eigen::Index row_q) {
  const Eigen::Index n = v.size();
  const double e = v[i].real(), f = v[i].imag();
  for (Eigen::Index k = 0; k < n; ++k) {
    const double g = y(i, k).real(), b = y(i, k).imag();
    if (g == 0.0 && b == 0.0) continue;
    if (row_p >= 0) {
      jac(row_p, k) += e * g + f * b;
      jac(row_p, n + k) += -e * b + f * g;
    }
    if (row_q >= 0) {
      jac(row_q, k) += f * g - e * b;
      jac(row_q, n + k) += -f * b - e * g;
    }
  }
  const double a = cur[i].real(), bi = cur[i].imag();
  if (row_p >= 0) {
    jac(row_p, i) += a;
    jac(row_p, n + i) += bi;
  }
  if (row_q >= 0) {
    jac(row_q, i) -= bi;
    jac(row_q, n + i) += a;
  }
}

struct GaugePin {
  Eigen::Index node;
  double angle;
};

std::vector<GaugePin> gauge_pins(const DsseProblem& p) {
  const NodeMap& nodes = p.system->nodes();
  std::vector<GaugePin> out;
  for (std::size_t s : nodes.bus_nodes(p.slack_bus)) {
    out.push_back({static_cast<Eigen::Index>(s),
                   p.reference_angle_rad - 2.0 * std::numbers::pi / 3.0 * phase_index(nodes[s].phase)});
    if (!p.pin_phase_angles) break;
  }
  return out;
}

}  // namespace

Eigen::VectorXd measurement_values(const DsseProblem& p, const Eigen::VectorXd& x) {
  const Eigen::VectorXcd v = state_phasors(x);
  const Eigen::VectorXcd cur = p.system->ybus() * v;
  Eigen::VectorXd h(static_cast<Eigen::Index>(p.measurements.size()));
  for (std::size_t m = 0; m < p.measurements.size(); ++m) {
    const auto& f = p.measurements[m];
    const NodeRef r = locate(p, f);
    const auto mi = static_cast<Eigen::Index>(m);
    switch (f.kind) {
      case MeasurementKind::phase_voltage_magnitude: h[mi] = std::abs(v[r.i]); break;
      case MeasurementKind::line_voltage_magnitude: h[mi] = std::abs(v[r.i] - v[r.j]) / std::numbers::sqrt3; break;
      case MeasurementKind::p_phase: h[mi] = (v[r.i] * std::conj(cur[r.i])).real(); break;
      case MeasurementKind::q_phase: h[mi] = (v[r.i] * std::conj(cur[r.i])).imag(); break;
    }
  }
  return h;
}

Eigen::MatrixXd measurement_jacobian(const DsseProblem& p, const Eigen::VectorXd& x) {
  const Eigen::VectorXcd v = state_phasors(x);
  const Eigen::VectorXcd cur = p.system->ybus() * v;
  const Eigen::Index n = v.size();
  Eigen::MatrixXd jac = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(p.measurements.size()), 2 * n);
  for (std::size_t m = 0; m < p.measurements.size(); ++m) {
    const auto& f = p.measurements[m];
    const NodeRef r = locate(p, f);
    const auto mi = static_cast<Eigen::Index>(m);
    switch (f.kind) {
      case MeasurementKind::phase_voltage_magnitude: {
        const double mag = std::abs(v[r.i]);
        if (mag > 0.0) {
          jac(mi, r.i) = v[r.i].real() / mag;
          jac(mi, n + r.i) = v[r.i].imag() / mag;
        }
        break;
      }
      case MeasurementKind::line_voltage_magnitude: {
        const Complex d = v[r.i] - v[r.j];
        const double mag = std::abs(d);
        if (mag > 0.0) {
          const double de = d.real() / (mag * std::numbers::sqrt3), df = d.imag() / (mag * std::numbers::sqrt3);
          jac(mi, r.i) = de;
          jac(mi, n + r.i) = df;
          jac(mi, r.j) = -de;
          jac(mi, n + r.j) = -df;
        }
        break;
      }
      case MeasurementKind::p_phase: power_rows(p.system->ybus(), v, cur, r.i, jac, mi, -1); break;
      case MeasurementKind::q_phase: power_rows(p.system->ybus(), v, cur, r.i, jac, -1, mi); break;
    }
  }
  return jac;
}

Eigen::VectorXd weighted_residual_vector(const DsseProblem& p, const Eigen::VectorXd& x) {
  const Eigen::VectorXd h = measurement_values(p, x);
  const Eigen::Index m = h.size();
  Eigen::VectorXd z(m), sigma(m), r(m);
  for (Eigen::Index k = 0; k < m; ++k) {
    z[k] = p.measurements[static_cast<std::size_t>(k)].value;
    sigma[k] = p.measurements[static_cast<std::size_t>(k)].sigma;
  }
  const auto n = static_cast<std::size_t>(m);
  kernels::weighted_residuals({r.data(), n}, {h.data(), n}, {z.data(), n}, {sigma.data(), n});
  return r;
}

Eigen::VectorXd constraint_values(const DsseProblem& p, const Eigen::VectorXd& x) {
  const Eigen::VectorXcd v = state_phasors(x);
  const Eigen::VectorXcd cur = p.system->ybus() * v;
  const auto nz = static_cast<Eigen::Index>(p.zero_injection_nodes.size());
  const auto pins = gauge_pins(p);
  const auto np = static_cast<Eigen::Index>(pins.size());
  Eigen::VectorXd c(2 * nz + np + (p.pin_zero_sequence ? 2 : 0));
  for (Eigen::Index k = 0; k < nz; ++k) {
    const auto i = static_cast<Eigen::Index>(p.zero_injection_nodes[static_cast<std::size_t>(k)]);
    const Complex s = v[i] * std::conj(cur[i]);
    c[2 * k] = s.real();
    c[2 * k + 1] = s.imag();
  }
  for (Eigen::Index k = 0; k < np; ++k) {
    const auto& [g, angle] = pins[static_cast<std::size_t>(k)];
    c[2 * nz + k] = -std::sin(angle) * v[g].real() + std::cos(angle) * v[g].imag();
  }
  if (p.pin_zero_sequence) {
    Complex sum{};
    for (std::size_t i : p.system->nodes().bus_nodes(p.slack_bus)) sum += v[static_cast<Eigen::Index>(i)];
    c[2 * nz + np] = sum.real();
    c[2 * nz + np + 1] = sum.imag();
  }
  return c;
}

Eigen::MatrixXd constraint_jacobian(const DsseProblem& p, const Eigen::VectorXd& x) {
  const Eigen::VectorXcd v = state_phasors(x);
  const Eigen::VectorXcd cur = p.system->ybus() * v;
  const Eigen::Index n = v.size();
  const auto nz = static_cast<Eigen::Index>(p.zero_injection_nodes.size());
  const auto pins = gauge_pins(p);
  const auto np = static_cast<Eigen::Index>(pins.size());
  Eigen::MatrixXd jac = Eigen::MatrixXd::Zero(2 * nz + np + (p.pin_zero_sequence ? 2 : 0), 2 * n);
  for (Eigen::Index k = 0; k < nz; ++k) {
    const auto i = static_cast<Eigen::Index>(p.zero_injection_nodes[static_cast<std::size_t>(k)]);
    power_rows(p.system->ybus(), v, cur, i, jac, 2 * k, 2 * k + 1);
  }
  for (Eigen::Index k = 0; k < np; ++k) {
    const auto& [g, angle] = pins[static_cast<std::size_t>(k)];
    jac(2 * nz + k, g) = -std::sin(angle);
    jac(2 * nz + k, n + g) = std::cos(angle);
  }
  if (p.pin_zero_sequence)
    for (std::size_t i : p.system->nodes().bus_nodes(p.slack_bus)) {
      jac(2 * nz + np, static_cast<Eigen::Index>(i)) = 1.0;
      jac(2 * nz + np + 1, n + static_cast<Eigen::Index>(i)) = 1.0;
    }
  return jac;
}

double dsse_objective(const DsseProblem& p, const Eigen::VectorXd& x) {
  return weighted_residual_vector(p, x).squaredNorm();
}

Eigen::VectorXd dsse_gradient(const DsseProblem& p, const Eigen::VectorXd& x) {
  const Eigen::VectorXd r = weighted_residual_vector(p, x);
  Eigen::MatrixXd j = measurement_jacobian(p, x);
  for (Eigen::Index m = 0; m < j.rows(); ++m) j.row(m) /= p.measurements[static_cast<std::size_t>(m)].sigma;
  return 2.0 * j.transpose() * r;
}

}  // namespace dtwin
