#include <algorithm>
#include <array>
#include <charconv>
#include <cmath>
#include <fmt/format.h>

#include "dtwin/errors.hpp"
#include "dtwin/telemetry.hpp"

namespace dtwin {

namespace {

constexpr std::array<std::string_view, kMeasurandCount> kNames{
    "v_ab", "v_bc", "v_ca", "i_a", "i_b", "i_c", "p_tot", "q_tot", "v_a",
    "v_b",  "v_c",  "p_a",  "p_b", "p_c", "q_a", "q_b",   "q_c"};

int parse_int(std::string_view s, std::string_view whole) {
  int v = 0;
  const auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc{} || p != s.data() + s.size()) throw InputError(fmt::format("bad timestamp \"{}\"", whole));
  return v;
}

}  // namespace

Timestamp parse_timestamp(std::string_view text) {
  std::string_view s = text;
  if (s.ends_with('Z')) s.remove_suffix(1);
  else if (s.ends_with("+00:00")) s.remove_suffix(6);
  // YYYY-MM-DDTHH:MM:SS
  if (s.size() != 19 || s[4] != '-' || s[7] != '-' || (s[10] != 'T' && s[10] != ' ') || s[13] != ':' ||
      s[16] != ':')
    throw InputError(fmt::format("bad timestamp \"{}\" (expected ISO-8601 UTC)", text));
  using namespace std::chrono;
  const year_month_day ymd{year{parse_int(s.substr(0, 4), text)}, month{unsigned(parse_int(s.substr(5, 2), text))},
                           day{unsigned(parse_int(s.substr(8, 2), text))}};
  const int hh = parse_int(s.substr(11, 2), text), mm = parse_int(s.substr(14, 2), text),
            ss = parse_int(s.substr(17, 2), text);
  if (!ymd.ok() || hh > 23 || mm > 59 || ss > 60 || hh < 0 || mm < 0 || ss < 0)
    throw InputError(fmt::format("bad timestamp \"{}\"", text));
  return sys_days{ymd} + hours{hh} + minutes{mm} + seconds{ss};
}

std::string format_timestamp(Timestamp t) {
  using namespace std::chrono;
  const auto day = floor<days>(t);
  const year_month_day ymd{day};
  const hh_mm_ss hms{t - day};
  return fmt::format("{:04d}-{:02d}-{:02d}T{:02d}:{:02d}:{:02d}Z", int(ymd.year()), unsigned(ymd.month()),
                     unsigned(ymd.day()), hms.hours().count(), hms.minutes().count(), hms.seconds().count());
}

std::string_view measurand_name(Measurand m) { return kNames[static_cast<std::size_t>(m)]; }

std::optional<Measurand> parse_measurand(std::string_view name) {
  for (std::size_t i = 0; i < kNames.size(); ++i)
    if (kNames[i] == name) return static_cast<Measurand>(i);
  return std::nullopt;
}

bool is_line_voltage(Measurand m) { return m <= Measurand::v_ca; }
bool is_phase_voltage(Measurand m) { return m >= Measurand::v_a && m <= Measurand::v_c; }
bool is_current(Measurand m) { return m >= Measurand::i_a && m <= Measurand::i_c; }
bool is_active_power(Measurand m) {
  return m == Measurand::p_tot || (m >= Measurand::p_a && m <= Measurand::p_c);
}
bool is_reactive_power(Measurand m) {
  return m == Measurand::q_tot || (m >= Measurand::q_a && m <= Measurand::q_c);
}
double csv_scale(Measurand m) { return is_active_power(m) || is_reactive_power(m) ? 1000.0 : 1.0; }

Phase measurand_phase(Measurand m) {
  switch (m) {
    case Measurand::v_ab: case Measurand::i_a: case Measurand::v_a: case Measurand::p_a: case Measurand::q_a:
      return Phase::a;
    case Measurand::v_bc: case Measurand::i_b: case Measurand::v_b: case Measurand::p_b: case Measurand::q_b:
      return Phase::b;
    case Measurand::v_ca: case Measurand::i_c: case Measurand::v_c: case Measurand::p_c: case Measurand::q_c:
      return Phase::c;
    default:
      throw InputError(fmt::format("measurand {} has no phase", measurand_name(m)));
  }
}

void MeasurementSeries::add(const std::string& meter_id, Measurand m, Timestamp t, double value) {
  auto [it, inserted] = channels_.try_emplace({meter_id, m});
  Channel& ch = it->second;
  if (inserted) {
    ch.meter_id = meter_id;
    ch.measurand = m;
  }
  ch.times.push_back(t);
  ch.values.push_back(value);
}

const Channel* MeasurementSeries::find(std::string_view meter_id, Measurand m) const {
  const auto it = channels_.find({std::string(meter_id), m});
  return it == channels_.end() ? nullptr : &it->second;
}

std::optional<double> MeasurementSeries::value_at(std::string_view meter_id, Measurand m, Timestamp t) const {
  const Channel* ch = find(meter_id, m);
  if (!ch) return std::nullopt;
  const auto it = std::lower_bound(ch->times.begin(), ch->times.end(), t);
  if (it != ch->times.end() && *it == t) return ch->values[static_cast<std::size_t>(it - ch->times.begin())];
  // unsorted channel (ingest warned): fall back to a scan
  for (std::size_t i = 0; i < ch->times.size(); ++i)
    if (ch->times[i] == t) return ch->values[i];
  return std::nullopt;
}

std::vector<Timestamp> MeasurementSeries::timestamps() const {
  std::vector<Timestamp> out;
  for (const auto& [key, ch] : channels_) out.insert(out.end(), ch.times.begin(), ch.times.end());
  std::sort(out.begin(), out.end());
  out.erase(std::unique(out.begin(), out.end()), out.end());
  return out;
}

std::vector<std::string> MeasurementSeries::meter_ids() const {
  std::vector<std::string> out;
  for (const auto& [key, ch] : channels_)
    if (out.empty() || out.back() != key.first) out.push_back(key.first);
  return out;
}

std::vector<const Channel*> MeasurementSeries::channels() const {
  std::vector<const Channel*> out;
  for (const auto& [key, ch] : channels_) out.push_back(&ch);
  return out;
}

std::vector<const Channel*> MeasurementSeries::channels_of(std::string_view meter_id) const {
  std::vector<const Channel*> out;
  for (const auto& [key, ch] : channels_)
    if (key.first == meter_id) out.push_back(&ch);
  return out;
}

std::size_t MeasurementSeries::sample_count() const {
  std::size_t n = 0;
  for (const auto& [key, ch] : channels_) n += ch.values.size();
  return n;
}

}  // namespace dtwin
