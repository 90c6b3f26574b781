#include <fmt/format.h>
#include <fstream>
#include <set>
#include <sstream>

#include <json.hpp>

#include "dtwin/errors.hpp"
#include "dtwin/telemetry.hpp"

namespace dtwin {

using nlohmann::json;

bool MeterSpec::measures(Measurand m) const {
  return std::find(measurands.begin(), measurands.end(), m) != measurands.end();
}

void MeterSpec::validate() const {
  const std::string where = "meter \"" + id + "\"";
  if (id.empty()) throw InputError("meter with empty id");
  if (bus.empty()) throw InputError(where + ": missing bus");
  if (!(rated_voltage_v > 0.0) || !(rated_current_a > 0.0))
    throw InputError(where + ": rated voltage and current must be positive");
  if (!(voltage_tol_pct > 0.0) || !(current_tol_pct > 0.0) || !(p_tol_pct > 0.0) || !(q_tol_pct > 0.0))
    throw InputError(where + ": tolerance percentages must be positive");
  if (!(valid_current_floor_pct >= 0.0)) throw InputError(where + ": negative current floor");
  if (measurands.empty()) throw InputError(where + ": no measurands");
  std::set<Measurand> seen;
  for (Measurand m : measurands)
    if (!seen.insert(m).second)
      throw InputError(fmt::format("{}: measurand {} listed twice", where, measurand_name(m)));
}

namespace {

double number(const json& obj, const char* key, double fallback, const std::string& where) {
  if (!obj.contains(key)) return fallback;
  const json& v = obj.at(key);
  if (!v.is_number()) throw InputError(fmt::format("{}.{}: expected a number", where, key));
  return v.get<double>();
}

}  // namespace

std::vector<MeterSpec> parse_meters(std::string_view text) {
  json doc;
  try {
    doc = json::parse(text);
  } catch (const json::parse_error& e) {
    throw InputError(fmt::format("meter file: syntax error at byte {}", e.byte));
  }
  if (!doc.is_object()) throw InputError("meter file: expected an object keyed by meter id");
  static const std::set<std::string> allowed{"bus",           "rated_voltage_v", "rated_current_a", "measurands",
                                             "voltage_tol_pct", "current_tol_pct", "p_tol_pct",       "q_tol_pct",
                                             "valid_current_floor_pct", "sign"};
  std::vector<MeterSpec> out;
  for (auto it = doc.begin(); it != doc.end(); ++it) {
    const std::string where = "meters." + it.key();
    const json& j = it.value();
    if (!j.is_object()) throw InputError(where + ": expected an object");
    for (auto k = j.begin(); k != j.end(); ++k)
      if (!allowed.contains(k.key())) throw InputError(where + ": unknown key \"" + k.key() + "\"");
    MeterSpec m;
    m.id = it.key();
    if (!j.contains("bus") || !j.at("bus").is_string()) throw InputError(where + ": missing bus");
    m.bus = j.at("bus").get<std::string>();
    m.rated_voltage_v = number(j, "rated_voltage_v", m.rated_voltage_v, where);
    m.rated_current_a = number(j, "rated_current_a", m.rated_current_a, where);
    m.voltage_tol_pct = number(j, "voltage_tol_pct", m.voltage_tol_pct, where);
    m.current_tol_pct = number(j, "current_tol_pct", m.current_tol_pct, where);
    m.p_tol_pct = number(j, "p_tol_pct", m.p_tol_pct, where);
    m.q_tol_pct = number(j, "q_tol_pct", m.q_tol_pct, where);
    m.valid_current_floor_pct = number(j, "valid_current_floor_pct", m.valid_current_floor_pct, where);
    if (!j.contains("measurands") || !j.at("measurands").is_array())
      throw InputError(where + ": measurands must be a list");
    for (const auto& name : j.at("measurands")) {
      const auto ms = name.is_string() ? parse_measurand(name.get<std::string>()) : std::nullopt;
      if (!ms) throw InputError(fmt::format("{}: unknown measurand {}", where, name.dump()));
      m.measurands.push_back(*ms);
    }
    if (j.contains("sign")) {
      const std::string s = j.at("sign").is_string() ? j.at("sign").get<std::string>() : "";
      if (s == "consumption") m.sign = MeterSign::consumption;
      else if (s == "generation") m.sign = MeterSign::generation;
      else throw InputError(where + ": sign must be \"consumption\" or \"generation\"");
    }
    m.validate();
    out.push_back(std::move(m));
  }
  return out;
}

std::vector<MeterSpec> load_meters(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw InputError("file not found: " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_meters(ss.str());
}

std::string meters_to_json(std::span<const MeterSpec> meters) {
  json doc = json::object();
  for (const auto& m : meters) {
    json names = json::array();
    for (Measurand x : m.measurands) names.push_back(std::string(measurand_name(x)));
    doc[m.id] = {{"bus", m.bus},
                 {"rated_voltage_v", m.rated_voltage_v},
                 {"rated_current_a", m.rated_current_a},
                 {"measurands", names},
                 {"voltage_tol_pct", m.voltage_tol_pct},
                 {"current_tol_pct", m.current_tol_pct},
                 {"p_tol_pct", m.p_tol_pct},
                 {"q_tol_pct", m.q_tol_pct},
                 {"valid_current_floor_pct", m.valid_current_floor_pct},
                 {"sign", m.sign == MeterSign::consumption ? "consumption" : "generation"}};
  }
  return doc.dump(2) + "\n";
}

}  // namespace dtwin
