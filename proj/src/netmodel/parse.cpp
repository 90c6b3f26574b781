#include <cmath>
#include <fstream>
#include <numbers>
#include <set>
#include <sstream>

#include <json.hpp>

#include "dtwin/errors.hpp"
#include "dtwin/netmodel.hpp"

namespace dtwin {

using nlohmann::json;

namespace {

/// Wraps a JSON object with its document path; rejects keys that were never read.
class Obj {
 public:
  Obj(const json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) throw InputError(path_ + ": expected an object");
  }

  void allow(std::initializer_list<const char*> keys) {
    std::set<std::string> ok(keys.begin(), keys.end());
    for (auto it = j_.begin(); it != j_.end(); ++it)
      if (!ok.contains(it.key())) throw InputError(path_ + ": unknown key \"" + it.key() + "\"");
  }

  bool has(const char* key) const { return j_.contains(key); }
  const json& raw(const char* key) const {
    if (!j_.contains(key)) throw InputError(path_ + ": missing key \"" + key + "\"");
    return j_.at(key);
  }
  std::string path(const char* key) const { return path_ + "." + key; }

  std::string str(const char* key) const {
    const json& v = raw(key);
    if (!v.is_string()) throw InputError(path(key) + ": expected a string");
    return v.get<std::string>();
  }
  std::string str_or(const char* key, std::string fallback) const { return has(key) ? str(key) : fallback; }

  double num(const char* key) const {
    const json& v = raw(key);
    if (!v.is_number()) throw InputError(path(key) + ": expected a number");
    return v.get<double>();
  }
  double num_or(const char* key, double fallback) const { return has(key) ? num(key) : fallback; }

  int integer(const char* key) const {
    const json& v = raw(key);
    if (!v.is_number_integer()) throw InputError(path(key) + ": expected an integer");
    return v.get<int>();
  }
  int integer_or(const char* key, int fallback) const { return has(key) ? integer(key) : fallback; }

 private:
  const json& j_;
  std::string path_;
};

const json& array_at(const json& doc, const char* key) {
  static const json empty = json::array();
  if (!doc.contains(key)) return empty;
  const json& v = doc.at(key);
  if (!v.is_array()) throw InputError(std::string(key) + ": expected an array");
  return v;
}

Eigen::MatrixXd real_matrix(const json& v, std::size_t k, const std::string& path) {
  if (!v.is_array() || v.size() != k) throw InputError(path + ": expected a " + std::to_string(k) + "x" + std::to_string(k) + " matrix");
  Eigen::MatrixXd m(k, k);
  for (std::size_t r = 0; r < k; ++r) {
    const json& row = v[r];
    if (!row.is_array() || row.size() != k) throw InputError(path + ": row " + std::to_string(r) + " has wrong size");
    for (std::size_t c = 0; c < k; ++c) {
      if (!row[c].is_number()) throw InputError(path + ": non-numeric entry");
      m(r, c) = row[c].get<double>();
    }
  }
  return m;
}

Eigen::MatrixXcd invert_impedance(const Eigen::MatrixXcd& z, const std::string& path) {
  Eigen::FullPivLU<Eigen::MatrixXcd> lu(z);
  if (!lu.isInvertible()) throw InputError(path + ": singular series impedance");
  return lu.inverse();
}

WindingConnection parse_connection(const std::string& s, const std::string& path) {
  if (s == "delta") return WindingConnection::delta;
  if (s == "wye_grounded" || s == "wye-g" || s == "yg") return WindingConnection::wye_grounded;
  throw InputError(path + ": unknown winding connection \"" + s + "\" (expected delta or wye_grounded)");
}

const char* connection_name(WindingConnection c) { return c == WindingConnection::delta ? "delta" : "wye_grounded"; }

void parse_line(const json& j, const std::string& path, NetworkModel& model) {
  Obj o(j, path);
  o.allow({"id", "from", "to", "length_m", "phases", "impedance"});
  LineSegment line;
  line.id = o.str("id");
  line.from_bus = o.str("from");
  line.to_bus = o.str("to");
  line.length_m = o.num("length_m");
  line.phases = PhaseSet::parse(o.str_or("phases", "abc"));
  if (!(line.length_m > 0.0)) throw InputError(o.path("length_m") + ": length must be positive");

  Obj imp(o.raw("impedance"), o.path("impedance"));
  const std::string format = imp.str("format");
  const std::string units = imp.str("units");
  const auto k = line.phases.size();
  const double km = line.length_m / 1000.0;

  double scale = 1.0;  // impedance multiplier to get segment totals
  if (units == "ohm_per_km") {
    scale = km;
    line.units = ImpedanceUnits::siemens;
  } else if (units == "ohm") {
    line.units = ImpedanceUnits::siemens;
  } else if (units == "pu") {
    line.units = ImpedanceUnits::per_unit;
  } else {
    throw InputError(imp.path("units") + ": expected ohm_per_km, ohm or pu");
  }

  Eigen::MatrixXcd z(k, k);
  Eigen::MatrixXd b = Eigen::MatrixXd::Zero(k, k);
  if (format == "sequence") {
    imp.allow({"format", "units", "r1", "x1", "r0", "x0", "b1", "b0"});
    const Eigen::Matrix3cd zp = sequence_to_phase({imp.num("r1"), imp.num("x1")}, {imp.num("r0"), imp.num("x0")});
    // charging susceptance uses the same symmetric transform (real-valued)
    const Eigen::Matrix3cd bp = sequence_to_phase({imp.num_or("b1", 0.0), 0.0}, {imp.num_or("b0", 0.0), 0.0});
    const auto ph = line.phases.phases();
    for (std::size_t r = 0; r < k; ++r)
      for (std::size_t c = 0; c < k; ++c) {
        z(r, c) = zp(phase_index(ph[r]), phase_index(ph[c]));
        b(r, c) = bp(phase_index(ph[r]), phase_index(ph[c])).real();
      }
  } else if (format == "matrix") {
    imp.allow({"format", "units", "r", "x", "b"});
    const Eigen::MatrixXd r = real_matrix(imp.raw("r"), k, imp.path("r"));
    const Eigen::MatrixXd x = real_matrix(imp.raw("x"), k, imp.path("x"));
    z = r.cast<Complex>() + Complex(0.0, 1.0) * x.cast<Complex>();
    if (imp.has("b")) b = real_matrix(imp.raw("b"), k, imp.path("b"));
  } else {
    throw InputError(imp.path("format") + ": expected sequence or matrix");
  }
  z *= scale;
  // b is in microsiemens (per km or total) for SI units, per-unit otherwise.
  Eigen::MatrixXd b_total = b * scale;
  if (line.units == ImpedanceUnits::siemens) b_total *= 1e-6;

  if (!z.isApprox(z.transpose(), 1e-12)) throw InputError(path + ": series impedance must be symmetric");
  line.series_admittance = invert_impedance(z, path);
  line.series_admittance = 0.5 * (line.series_admittance + line.series_admittance.transpose()).eval();
  line.shunt_from = Complex(0.0, 0.5) * b_total.cast<Complex>();
  line.shunt_to = line.shunt_from;
  model.lines.push_back(std::move(line));
}

void parse_transformer(const json& j, const std::string& path, NetworkModel& model) {
  Obj o(j, path);
  o.allow({"id", "from", "to", "rated_kva", "r_pu", "x_pu", "hv_connection", "lv_connection", "nominal_ratio",
           "tap_step_pct", "tap", "tap_min", "tap_max"});
  TransformerBranch t;
  t.id = o.str("id");
  t.from_bus = o.str("from");
  t.to_bus = o.str("to");
  t.rated_power_va = o.num("rated_kva") * 1e3;
  if (!(t.rated_power_va > 0.0)) throw InputError(o.path("rated_kva") + ": rating must be positive");
  t.series_impedance_pu = {o.num("r_pu"), o.num("x_pu")};
  t.hv_connection = parse_connection(o.str("hv_connection"), o.path("hv_connection"));
  t.lv_connection = parse_connection(o.str("lv_connection"), o.path("lv_connection"));
  t.nominal_ratio = o.num("nominal_ratio");
  if (!(t.nominal_ratio > 0.0)) throw InputError(o.path("nominal_ratio") + ": singular transformer ratio");
  t.tap_step_pct = o.num_or("tap_step_pct", 0.0);
  t.tap_position = o.integer_or("tap", 0);
  t.tap_min = o.integer_or("tap_min", t.tap_position);
  t.tap_max = o.integer_or("tap_max", t.tap_position);
  model.transformers.push_back(t);
}

PhaseReal per_phase_values(const json& v, PhaseSet phases, const std::string& path) {
  PhaseReal out{0.0, 0.0, 0.0};
  const auto ph = phases.phases();
  if (v.is_number()) {
    for (Phase p : ph) out[phase_index(p)] = v.get<double>() / static_cast<double>(ph.size());
  } else if (v.is_array() && v.size() == ph.size()) {
    for (std::size_t i = 0; i < ph.size(); ++i) {
      if (!v[i].is_number()) throw InputError(path + ": non-numeric entry");
      out[phase_index(ph[i])] = v[i].get<double>();
    }
  } else {
    throw InputError(path + ": expected a total or one value per phase");
  }
  return out;
}

PowerDevice parse_device(const json& j, const std::string& path) {
  Obj o(j, path);
  o.allow({"id", "bus", "phases", "kw", "kvar", "kind"});
  PowerDevice d;
  d.id = o.str("id");
  d.bus = o.str("bus");
  d.phases = PhaseSet::parse(o.str_or("phases", "abc"));
  const PhaseReal kw = per_phase_values(o.raw("kw"), d.phases, o.path("kw"));
  const PhaseReal kvar = o.has("kvar") ? per_phase_values(o.raw("kvar"), d.phases, o.path("kvar")) : PhaseReal{};
  for (int p = 0; p < 3; ++p) d.power_va[p] = Complex(kw[p], kvar[p]) * 1e3;
  const std::string kind = o.str_or("kind", "fixed");
  if (kind == "fixed") d.kind = DeviceKind::fixed;
  else if (kind == "allocated") d.kind = DeviceKind::allocated;
  else throw InputError(o.path("kind") + ": expected fixed or allocated");
  return d;
}

}  // namespace

NetworkModel parse_network(std::string_view text, ValidationReport* report) {
  json doc;
  try {
    doc = json::parse(text.begin(), text.end());
  } catch (const json::parse_error& e) {
    throw InputError(std::string("syntax error at byte ") + std::to_string(e.byte) + ": " + e.what());
  }
  Obj top(doc, "network");
  top.allow({"buses", "lines", "transformers", "loads", "generators", "slack", "bases"});

  NetworkModel model;
  if (top.has("bases")) {
    Obj b(top.raw("bases"), "bases");
    b.allow({"power_kva", "frequency_hz"});
    model.bases.power_va = b.num_or("power_kva", 1000.0) * 1e3;
    model.bases.frequency_hz = b.num_or("frequency_hz", 50.0);
  }

  const json& buses = array_at(doc, "buses");
  for (std::size_t i = 0; i < buses.size(); ++i) {
    Obj o(buses[i], "buses[" + std::to_string(i) + "]");
    o.allow({"id", "base_voltage_v", "phases", "vmin_pu", "vmax_pu"});
    Bus bus;
    bus.id = o.str("id");
    bus.base_voltage_v = o.num("base_voltage_v");
    bus.phases = PhaseSet::parse(o.str_or("phases", "abc"));
    bus.limits.lower_pu = o.num_or("vmin_pu", 0.94);
    bus.limits.upper_pu = o.num_or("vmax_pu", 1.06);
    model.buses.push_back(std::move(bus));
  }

  {
    const json& s = top.raw("slack");
    if (s.is_string()) {
      model.slack_bus = s.get<std::string>();
    } else {
      Obj o(s, "slack");
      o.allow({"bus", "voltage_pu", "angle_deg"});
      model.slack_bus = o.str("bus");
      PhaseReal mag{1.0, 1.0, 1.0};
      PhaseReal ang{0.0, -120.0, 120.0};
      auto triple = [&](const char* key, PhaseReal& dst) {
        const json& v = o.raw(key);
        if (!v.is_array() || v.size() != 3) throw InputError(o.path(key) + ": expected three values");
        for (int p = 0; p < 3; ++p) dst[p] = v[p].get<double>();
      };
      if (o.has("voltage_pu")) triple("voltage_pu", mag);
      if (o.has("angle_deg")) triple("angle_deg", ang);
      for (int p = 0; p < 3; ++p) model.slack_voltage_pu[p] = std::polar(mag[p], ang[p] * std::numbers::pi / 180.0);
    }
  }

  const json& lines = array_at(doc, "lines");
  for (std::size_t i = 0; i < lines.size(); ++i) parse_line(lines[i], "lines[" + std::to_string(i) + "]", model);
  const json& trs = array_at(doc, "transformers");
  for (std::size_t i = 0; i < trs.size(); ++i)
    parse_transformer(trs[i], "transformers[" + std::to_string(i) + "]", model);
  const json& loads = array_at(doc, "loads");
  for (std::size_t i = 0; i < loads.size(); ++i)
    model.loads.push_back(parse_device(loads[i], "loads[" + std::to_string(i) + "]"));
  const json& gens = array_at(doc, "generators");
  for (std::size_t i = 0; i < gens.size(); ++i)
    model.generators.push_back(parse_device(gens[i], "generators[" + std::to_string(i) + "]"));

  ValidationReport r = validate(model);
  if (report) *report = std::move(r);
  return model;
}

NetworkModel load_network(const std::string& path, ValidationReport* report) {
  std::ifstream in(path);
  if (!in) throw InputError("file not found: " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_network(ss.str(), report);
}

std::string network_to_json(const NetworkModel& model) {
  json doc;
  doc["bases"] = {{"power_kva", model.bases.power_va / 1e3}, {"frequency_hz", model.bases.frequency_hz}};
  json mags = json::array(), angs = json::array();
  for (const Complex& v : model.slack_voltage_pu) {
    mags.push_back(std::abs(v));
    angs.push_back(std::arg(v) * 180.0 / std::numbers::pi);
  }
  doc["slack"] = {{"bus", model.slack_bus}, {"voltage_pu", mags}, {"angle_deg", angs}};

  doc["buses"] = json::array();
  for (const auto& b : model.buses)
    doc["buses"].push_back({{"id", b.id},
                            {"base_voltage_v", b.base_voltage_v},
                            {"phases", b.phases.to_string()},
                            {"vmin_pu", b.limits.lower_pu},
                            {"vmax_pu", b.limits.upper_pu}});

  // Lines are written back as explicit matrices so any input form round-trips.
  doc["lines"] = json::array();
  for (const auto& l : model.lines) {
    const auto k = l.series_admittance.rows();
    const Eigen::MatrixXcd z = l.series_admittance.inverse();
    const bool si = l.units == ImpedanceUnits::siemens;
    json r = json::array(), x = json::array(), b = json::array();
    for (Eigen::Index i = 0; i < k; ++i) {
      json rr = json::array(), xr = json::array(), br = json::array();
      for (Eigen::Index j = 0; j < k; ++j) {
        rr.push_back(z(i, j).real());
        xr.push_back(z(i, j).imag());
        const double btot = 2.0 * l.shunt_from(i, j).imag();
        br.push_back(si ? btot * 1e6 : btot);
      }
      r.push_back(rr);
      x.push_back(xr);
      b.push_back(br);
    }
    doc["lines"].push_back({{"id", l.id},
                            {"from", l.from_bus},
                            {"to", l.to_bus},
                            {"length_m", l.length_m},
                            {"phases", l.phases.to_string()},
                            {"impedance", {{"format", "matrix"}, {"units", si ? "ohm" : "pu"}, {"r", r}, {"x", x}, {"b", b}}}});
  }

  doc["transformers"] = json::array();
  for (const auto& t : model.transformers)
    doc["transformers"].push_back({{"id", t.id},
                                   {"from", t.from_bus},
                                   {"to", t.to_bus},
                                   {"rated_kva", t.rated_power_va / 1e3},
                                   {"r_pu", t.series_impedance_pu.real()},
                                   {"x_pu", t.series_impedance_pu.imag()},
                                   {"hv_connection", connection_name(t.hv_connection)},
                                   {"lv_connection", connection_name(t.lv_connection)},
                                   {"nominal_ratio", t.nominal_ratio},
                                   {"tap_step_pct", t.tap_step_pct},
                                   {"tap", t.tap_position},
                                   {"tap_min", t.tap_min},
                                   {"tap_max", t.tap_max}});

  auto devices = [](const std::vector<PowerDevice>& list) {
    json arr = json::array();
    for (const auto& d : list) {
      json kw = json::array(), kvar = json::array();
      for (Phase p : d.phases.phases()) {
        kw.push_back(d.power_va[phase_index(p)].real() / 1e3);
        kvar.push_back(d.power_va[phase_index(p)].imag() / 1e3);
      }
      arr.push_back({{"id", d.id},
                     {"bus", d.bus},
                     {"phases", d.phases.to_string()},
                     {"kw", kw},
                     {"kvar", kvar},
                     {"kind", d.kind == DeviceKind::fixed ? "fixed" : "allocated"}});
    }
    return arr;
  };
  doc["loads"] = devices(model.loads);
  doc["generators"] = devices(model.generators);
  return doc.dump(2) + "\n";
}

}  // namespace dtwin
