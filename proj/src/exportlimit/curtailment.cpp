#include <algorithm>
#include <charconv>
#include <fmt/format.h>
#include <fstream>
#include <istream>

#include "dtwin/errors.hpp"
#include "dtwin/exportlimit.hpp"
#include "dtwin/kernels.hpp"

namespace dtwin {

std::vector<TimeValue> read_time_values(std::istream& in) {
  std::vector<TimeValue> out;
  std::string line;
  std::size_t line_no = 0;
  bool header = true;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty() || line.front() == '#') continue;
    if (header) {
      header = false;
      continue;
    }
    const auto comma = line.find(',');
    if (comma == std::string::npos) throw InputError(fmt::format("line {}: expected timestamp,value", line_no));
    TimeValue tv;
    try {
      tv.time = parse_timestamp(std::string_view(line).substr(0, comma));
    } catch (const InputError& e) {
      throw InputError(fmt::format("line {}: {}", line_no, e.what()));
    }
    std::string_view num = std::string_view(line).substr(comma + 1);
    while (!num.empty() && num.front() == ' ') num.remove_prefix(1);
    const auto [p, ec] = std::from_chars(num.data(), num.data() + num.size(), tv.value);
    if (ec != std::errc{} || p != num.data() + num.size())
      throw InputError(fmt::format("line {}: cannot parse value \"{}\"", line_no, num));
    out.push_back(tv);
  }
  return out;
}

std::vector<TimeValue> read_time_values(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw InputError("file not found: " + path);
  return read_time_values(in);
}

double resample_at(std::span<const TimeValue> series, Timestamp t) {
  if (series.empty()) throw InputError("resampling: empty series");
  const auto it =
      std::lower_bound(series.begin(), series.end(), t, [](const TimeValue& a, Timestamp b) { return a.time < b; });
  if (it != series.end() && it->time == t) return it->value;
  if (it == series.begin() || it == series.end())
    throw InputError(fmt::format("resampling: {} lies outside the reference series", format_timestamp(t)));
  const TimeValue& lo = *(it - 1);
  const TimeValue& hi = *it;
  const double w = static_cast<double>((t - lo.time).count()) / static_cast<double>((hi.time - lo.time).count());
  return lo.value + w * (hi.value - lo.value);
}

namespace {

void require_sorted(std::span<const TimeValue> s, const char* what) {
  for (std::size_t i = 1; i < s.size(); ++i)
    if (!(s[i - 1].time < s[i].time)) throw InputError(fmt::format("{}: timestamps must increase", what));
}

}  // namespace

CurtailmentSeries estimate_curtailment(std::span<const TimeValue> measured_mw, std::span<const TimeValue> reference,
                                       double capacity_mw, double offset_mw) {
  require_sorted(measured_mw, "measured generation");
  require_sorted(reference, "reference profile");
  if (!(capacity_mw > 0.0)) throw InputError("curtailment: capacity must be positive");
  CurtailmentSeries out;
  if (measured_mw.size() >= 2)
    out.cadence_s = static_cast<double>((measured_mw[1].time - measured_mw[0].time).count());
  const std::size_t n = measured_mw.size();
  std::vector<double> profile(n), potential(n), measured(n), curtailed(n);
  for (std::size_t i = 0; i < n; ++i) {
    profile[i] = resample_at(reference, measured_mw[i].time);
    measured[i] = measured_mw[i].value;
  }
  kernels::scale_offset(potential, profile, capacity_mw, offset_mw);
  kernels::clamped_difference(curtailed, potential, measured);
  for (std::size_t i = 0; i < n; ++i)
    out.points.push_back({measured_mw[i].time, potential[i], measured[i], curtailed[i]});
  return out;
}

double fit_profile_offset(std::span<const TimeValue> measured_mw, std::span<const TimeValue> reference,
                          double capacity_mw, std::span<const bool> use) {
  if (use.size() != measured_mw.size()) throw InputError("offset fit: mask length mismatch");
  double sum = 0.0;
  std::size_t n = 0;
  for (std::size_t i = 0; i < measured_mw.size(); ++i) {
    if (!use[i]) continue;
    sum += measured_mw[i].value - resample_at(reference, measured_mw[i].time) * capacity_mw;
    ++n;
  }
  if (n == 0) throw InputError("offset fit: no uncurtailed samples selected");
  return sum / static_cast<double>(n);
}

}  // namespace dtwin
