#include <algorithm>
#include <charconv>
#include <cmath>
#include <fmt/format.h>
#include <ostream>

#include "dtwin/errors.hpp"
#include "dtwin/exportlimit.hpp"

namespace dtwin {

std::string_view scheme_kind_name(SchemeKind k) {
  switch (k) {
    case SchemeKind::dynamic_unity: return "unity";
    case SchemeKind::q_control: return "q_control";
    case SchemeKind::conservative: return "conservative";
  }
  return "?";
}

void ExportScheme::validate() const {
  if (!(power_factor > 0.0 && power_factor <= 1.0)) throw InputError(fmt::format("scheme {}: bad power factor", name));
  pf_coefficient(power_factor);
  if (kind == SchemeKind::dynamic_unity && power_factor != 1.0)
    throw InputError(fmt::format("scheme {}: unity scheme must have power factor 1", name));
  if (!(tolerance_pct >= 0.0)) throw InputError(fmt::format("scheme {}: negative tolerance", name));
  if (!(u_plus > 1.0)) throw InputError(fmt::format("scheme {}: upper voltage limit must exceed 1 pu", name));
}

namespace {

double parse_number(std::string_view s, std::string_view whole) {
  double v = 0.0;
  const auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc{} || p != s.data() + s.size()) throw InputError(fmt::format("bad scheme \"{}\"", whole));
  return v;
}

}  // namespace

ExportScheme parse_scheme(std::string_view text) {
  ExportScheme s;
  std::string_view body = text;
  if (const auto at = body.find('@'); at != std::string_view::npos) {
    s.u_plus = parse_number(body.substr(at + 1), text);
    body = body.substr(0, at);
  }
  std::string_view head = body, arg;
  if (const auto colon = body.find(':'); colon != std::string_view::npos) {
    head = body.substr(0, colon);
    arg = body.substr(colon + 1);
  }
  if (head == "unity") {
    s.kind = SchemeKind::dynamic_unity;
    if (!arg.empty()) throw InputError(fmt::format("bad scheme \"{}\"", text));
  } else if (head == "q_control") {
    s.kind = SchemeKind::q_control;
    s.power_factor = arg.empty() ? 0.9 : parse_number(arg, text);
  } else if (head == "conservative") {
    s.kind = SchemeKind::conservative;
    s.tolerance_pct = arg.empty() ? 0.5 : parse_number(arg, text);
  } else {
    throw InputError(fmt::format("unknown scheme \"{}\" (unity, q_control[:pf], conservative[:pct])", text));
  }
  s.name = std::string(text);
  s.validate();
  return s;
}

double revenue_for(double energy_mwh, const Economics& e) { return energy_mwh * e.price_per_mwh; }
double emissions_for(double energy_mwh, const Economics& e) { return energy_mwh * e.carbon_kg_per_mwh / 1000.0; }

BenefitReport scheme_benefit(const CurtailmentSeries& curtailment, std::span<const ExportScheme> schemes,
                             const SensitivityMatrix& sens, std::span<const Eigen::VectorXd> v_twin,
                             const Economics& economics) {
  if (!(economics.cadence_s > 0.0)) throw InputError("benefit: cadence must be positive");
  const std::size_t steps = curtailment.points.size();
  if (steps > 0 && v_twin.size() != 1 && v_twin.size() != steps)
    throw InputError("benefit: need one voltage vector per curtailment step (or exactly one)");
  BenefitReport report;
  report.economics = economics;
  for (const auto& scheme : schemes) {
    scheme.validate();
    SchemeResult res;
    res.scheme = scheme;
    double energy = 0.0;
    for (std::size_t k = 0; k < steps; ++k) {
      const auto& pt = curtailment.points[k];
      const Eigen::VectorXd& v = v_twin.size() == 1 ? v_twin[0] : v_twin[k];
      const MaxInjection mi = max_injection(sens, v, scheme.u_plus, scheme.power_factor);
      double pmax = mi.mw;
      if (pmax < 0.0) ++res.negative_pmax_steps;
      if (scheme.kind == SchemeKind::conservative && !mi.unbounded) {
        const VoltageRiseModel rx = voltage_rise_model(sens, mi.binding_node);
        const InjectionSensitivity is =
            injection_voltage_sensitivity(rx.r_pu, rx.x_pu, scheme.power_factor, sens.power_base_va);
        pmax = std::max(pmax - safety_factor(scheme.tolerance_pct, is.mw_per_pct), 0.0);
      }
      SchemeStep st;
      st.time = pt.time;
      st.curtailment_mw = pt.curtailment_mw;
      st.pmax_mw = pmax;
      st.recovered_mw = std::min(pt.curtailment_mw, std::max(pmax, 0.0));
      energy += st.recovered_mw * economics.cadence_s / 3600.0;
      res.steps.push_back(st);
    }
    res.energy_mwh = energy;
    res.revenue = revenue_for(energy, economics);
    res.emissions_t = emissions_for(energy, economics);
    report.schemes.push_back(std::move(res));
  }
  return report;
}

void write_scheme_series(std::ostream& os, const SchemeResult& result) {
  os << "timestamp,curtailment_mw,pmax_mw,recovered_mw\n";
  for (const auto& s : result.steps)
    os << fmt::format("{},{:.6f},{:.6f},{:.6f}\n", format_timestamp(s.time), s.curtailment_mw, s.pmax_mw,
                      s.recovered_mw);
}

void write_benefit_summary(std::ostream& os, const BenefitReport& report) {
  os << fmt::format("# price_per_mwh={} carbon_kg_per_mwh={} cadence_s={}\n", report.economics.price_per_mwh,
                    report.economics.carbon_kg_per_mwh, report.economics.cadence_s);
  os << "scheme,kind,power_factor,tolerance_pct,u_plus,energy_mwh,revenue,emissions_t,negative_pmax_steps\n";
  for (const auto& r : report.schemes)
    os << fmt::format("{},{},{:.4f},{:.4f},{:.4f},{:.6f},{:.2f},{:.6f},{}\n", r.scheme.name,
                      scheme_kind_name(r.scheme.kind), r.scheme.power_factor, r.scheme.tolerance_pct, r.scheme.u_plus,
                      r.energy_mwh, r.revenue, r.emissions_t, r.negative_pmax_steps);
}

void write_benefit_svg(std::ostream& os, const BenefitReport& report) {
  const double width = 480, height = 300, left = 60, bottom = 40, top = 20;
  double peak = 0.0;
  for (const auto& r : report.schemes) peak = std::max(peak, r.energy_mwh);
  if (peak <= 0.0) peak = 1.0;
  const std::size_t n = std::max<std::size_t>(report.schemes.size(), 1);
  const double slot = (width - left - 20) / static_cast<double>(n);
  os << fmt::format("<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{}\" height=\"{}\">\n", width, height);
  os << fmt::format("<line x1=\"{}\" y1=\"{}\" x2=\"{}\" y2=\"{}\" stroke=\"black\"/>\n", left, height - bottom,
                    width - 10, height - bottom);
  os << fmt::format("<text x=\"10\" y=\"{}\" font-size=\"12\">MWh</text>\n", top + 10);
  for (std::size_t i = 0; i < report.schemes.size(); ++i) {
    const auto& r = report.schemes[i];
    const double h = (height - bottom - top) * r.energy_mwh / peak;
    const double x = left + slot * static_cast<double>(i) + slot * 0.15;
    os << fmt::format("<rect x=\"{:.1f}\" y=\"{:.1f}\" width=\"{:.1f}\" height=\"{:.1f}\" fill=\"#4a7ab5\"/>\n", x,
                      height - bottom - h, slot * 0.7, h);
    os << fmt::format("<text x=\"{:.1f}\" y=\"{:.1f}\" font-size=\"11\">{:.2f}</text>\n", x, height - bottom - h - 4,
                      r.energy_mwh);
    os << fmt::format("<text x=\"{:.1f}\" y=\"{:.1f}\" font-size=\"11\">{}</text>\n", x, height - bottom + 16,
                      r.scheme.name);
  }
  os << "</svg>\n";
}

}  // namespace dtwin
