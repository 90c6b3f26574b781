#include <charconv>
#include <cmath>
#include <fmt/format.h>
#include <fstream>
#include <istream>
#include <limits>
#include <map>
#include <ostream>

#include "dtwin/errors.hpp"
#include "dtwin/telemetry.hpp"

namespace dtwin {

namespace {

std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
  return s;
}

std::vector<std::string_view> split(std::string_view line) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  for (;;) {
    const std::size_t pos = line.find(',', start);
    out.push_back(trim(line.substr(start, pos == std::string_view::npos ? std::string_view::npos : pos - start)));
    if (pos == std::string_view::npos) break;
    start = pos + 1;
  }
  return out;
}

bool parse_value(std::string_view s, double& out) {
  if (s.empty() || s == "NaN" || s == "nan" || s == "NAN") {
    out = std::numeric_limits<double>::quiet_NaN();
    return true;
  }
  if (s.front() == '+') s.remove_prefix(1);
  const auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), out);
  return ec == std::errc{} && p == s.data() + s.size();
}

}  // namespace

MeasurementSeries ingest_csv(std::istream& in, std::span<const MeterSpec> meters) {
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!trim(line).empty()) break;
  }
  const auto header = split(line);
  if (header.size() < 3 || header[0] != "timestamp" || header[1] != "meter_id")
    throw InputError(fmt::format("line {}: header must start with timestamp,meter_id", line_no));
  std::vector<Measurand> columns;
  for (std::size_t c = 2; c < header.size(); ++c) {
    const auto m = parse_measurand(header[c]);
    if (!m) throw InputError(fmt::format("line {}: unknown column \"{}\"", line_no, header[c]));
    if (std::find(columns.begin(), columns.end(), *m) != columns.end())
      throw InputError(fmt::format("line {}: duplicate column \"{}\"", line_no, header[c]));
    columns.push_back(*m);
  }

  std::map<std::string, const MeterSpec*, std::less<>> known;
  for (const auto& m : meters) known[m.id] = &m;

  MeasurementSeries series;
  std::map<std::string, Timestamp, std::less<>> last_seen;
  std::map<std::string, bool, std::less<>> warned;
  while (std::getline(in, line)) {
    ++line_no;
    if (trim(line).empty()) continue;
    const auto cells = split(line);
    if (cells.size() != header.size())
      throw InputError(fmt::format("line {}: expected {} fields, found {}", line_no, header.size(), cells.size()));
    Timestamp t;
    try {
      t = parse_timestamp(cells[0]);
    } catch (const InputError& e) {
      throw InputError(fmt::format("line {}: {}", line_no, e.what()));
    }
    const std::string meter(cells[1]);
    if (meter.empty()) throw InputError(fmt::format("line {}: empty meter_id", line_no));
    const MeterSpec* spec = nullptr;
    if (!known.empty()) {
      const auto it = known.find(meter);
      if (it == known.end()) throw InputError(fmt::format("line {}: unknown meter id \"{}\"", line_no, meter));
      spec = it->second;
    }
    if (const auto it = last_seen.find(meter); it != last_seen.end() && t < it->second && !warned[meter]) {
      series.warnings.push_back(
          fmt::format("line {}: timestamps for meter \"{}\" are not monotone", line_no, meter));
      warned[meter] = true;
    }
    last_seen[meter] = t;

    for (std::size_t c = 0; c < columns.size(); ++c) {
      const std::string_view cell = cells[c + 2];
      double v = 0.0;
      if (!parse_value(cell, v))
        throw InputError(fmt::format("line {}: cannot parse {} value \"{}\"", line_no, measurand_name(columns[c]),
                                     cell));
      if (spec && !spec->measures(columns[c])) {
        if (std::isnan(v)) continue;
        throw InputError(fmt::format("line {}: meter \"{}\" does not declare channel {}", line_no, meter,
                                     measurand_name(columns[c])));
      }
      series.add(meter, columns[c], t, v * csv_scale(columns[c]));
    }
  }
  const auto ts = series.timestamps();
  if (ts.size() >= 2) series.cadence_s = static_cast<double>((ts[1] - ts[0]).count());
  return series;
}

MeasurementSeries ingest_csv_file(const std::string& path, std::span<const MeterSpec> meters) {
  std::ifstream in(path);
  if (!in) throw InputError("file not found: " + path);
  return ingest_csv(in, meters);
}

void write_csv(std::ostream& out, const MeasurementSeries& series) {
  std::vector<bool> used(kMeasurandCount, false);
  for (const Channel* ch : series.channels()) used[static_cast<std::size_t>(ch->measurand)] = true;
  std::vector<Measurand> columns;
  for (std::size_t i = 0; i < kMeasurandCount; ++i)
    if (used[i]) columns.push_back(static_cast<Measurand>(i));

  out << "timestamp,meter_id";
  for (Measurand m : columns) out << ',' << measurand_name(m);
  out << '\n';

  // rows keyed by (time, meter), values looked up per channel cursor
  std::map<std::pair<Timestamp, std::string>, std::vector<double>> rows;
  const double nan = std::numeric_limits<double>::quiet_NaN();
  for (const Channel* ch : series.channels()) {
    const auto col = static_cast<std::size_t>(std::find(columns.begin(), columns.end(), ch->measurand) -
                                              columns.begin());
    for (std::size_t i = 0; i < ch->times.size(); ++i) {
      auto& row = rows[{ch->times[i], ch->meter_id}];
      if (row.empty()) row.assign(columns.size(), nan);
      row[col] = ch->values[i];
    }
  }
  std::string buf;
  for (const auto& [key, values] : rows) {
    buf.clear();
    buf += format_timestamp(key.first);
    buf += ',';
    buf += key.second;
    for (std::size_t c = 0; c < columns.size(); ++c) {
      buf += ',';
      if (std::isnan(values[c])) buf += "NaN";
      else buf += fmt::format("{:.10g}", values[c] / csv_scale(columns[c]));
    }
    buf += '\n';
    out << buf;
  }
}

}  // namespace dtwin
