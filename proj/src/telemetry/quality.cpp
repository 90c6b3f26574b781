#include <algorithm>
#include <cmath>
#include <fmt/format.h>

#include <json.hpp>

#include "dtwin/telemetry.hpp"

namespace dtwin {

namespace {

double median_of(std::vector<double> v) {
  if (v.empty()) return std::nan("");
  const auto mid = v.begin() + static_cast<std::ptrdiff_t>(v.size() / 2);
  std::nth_element(v.begin(), mid, v.end());
  double m = *mid;
  if (v.size() % 2 == 0) m = 0.5 * (m + *std::max_element(v.begin(), mid));
  return m;
}

struct Run {
  std::size_t start = 0;
  std::size_t length = 0;
};

// Maximal runs of identical, non-missing values.
std::vector<Run> constant_runs(const std::vector<double>& x) {
  std::vector<Run> runs;
  for (std::size_t i = 0; i < x.size();) {
    if (std::isnan(x[i])) {
      ++i;
      continue;
    }
    std::size_t j = i + 1;
    while (j < x.size() && x[j] == x[i]) ++j;
    runs.push_back({i, j - i});
    i = j;
  }
  return runs;
}

bool varies_between(const Channel& ch, Timestamp from, Timestamp to) {
  bool seen = false;
  double first = 0.0;
  for (std::size_t i = 0; i < ch.times.size(); ++i) {
    if (ch.times[i] < from || ch.times[i] > to || std::isnan(ch.values[i])) continue;
    if (!seen) {
      first = ch.values[i];
      seen = true;
    } else if (ch.values[i] != first) {
      return true;
    }
  }
  return false;
}

void screen_gross(const Channel& ch, const QualityOptions& opt, ChannelQuality& q) {
  const auto& x = ch.values;
  const std::size_t n = x.size();
  const std::size_t half = std::max<std::size_t>(opt.window, 3) / 2;
  std::vector<double> win;
  for (std::size_t i = 0; i < n; ++i) {
    if (std::isnan(x[i])) continue;
    const std::size_t lo = i >= half ? i - half : 0;
    const std::size_t hi = std::min(n, i + half + 1);
    win.clear();
    for (std::size_t k = lo; k < hi; ++k)
      if (!std::isnan(x[k])) win.push_back(x[k]);
    if (win.size() < 5) continue;
    const double med = median_of(win);
    for (double& w : win) w = std::fabs(w - med);
    const double mad = median_of(win);
    const double scale = std::max(1.4826 * mad, 1e-9 * std::max(std::fabs(med), 1.0));
    const double dev = x[i] - med;
    if (!(std::fabs(dev) / scale > opt.gross_z_threshold)) continue;
    // A spike stands apart from both neighbours; a level change does not.
    auto apart = [&](std::size_t k) { return std::isnan(x[k]) || std::fabs(x[i] - x[k]) > 0.5 * std::fabs(dev); };
    const bool left = i == 0 || apart(i - 1);
    const bool right = i + 1 == n || apart(i + 1);
    if (left && right) q.gross_errors.push_back(ch.times[i]);
  }
  if (!q.gross_errors.empty()) q.flags |= static_cast<std::uint8_t>(QualityFlag::gross_error);
}

}  // namespace

std::string_view quality_flag_name(QualityFlag f) {
  switch (f) {
    case QualityFlag::ok: return "ok";
    case QualityFlag::stuck: return "stuck";
    case QualityFlag::stepped: return "stepped";
    case QualityFlag::gross_error: return "gross_error";
    case QualityFlag::missing: return "missing";
  }
  return "?";
}

const ChannelQuality* QualityReport::find(std::string_view meter_id, Measurand m) const {
  for (const auto& c : channels)
    if (c.meter_id == meter_id && c.measurand == m) return &c;
  return nullptr;
}

QualityReport detect_quality_issues(const MeasurementSeries& series, const QualityOptions& opt) {
  QualityReport report;
  for (const Channel* chp : series.channels()) {
    const Channel& ch = *chp;
    ChannelQuality q;
    q.meter_id = ch.meter_id;
    q.measurand = ch.measurand;
    q.samples = ch.values.size();
    q.missing = static_cast<std::size_t>(std::count_if(ch.values.begin(), ch.values.end(),
                                                       [](double v) { return std::isnan(v); }));
    if (q.missing > 0) q.flags |= static_cast<std::uint8_t>(QualityFlag::missing);
    if (q.missing == q.samples) {
      report.channels.push_back(std::move(q));
      continue;
    }

    const auto runs = constant_runs(ch.values);
    for (const auto& r : runs) q.longest_run = std::max(q.longest_run, r.length);

    // Stepped: mostly held values with occasional jumps, not a single constant.
    std::size_t pairs = 0, held = 0;
    std::vector<double> jumps;
    for (std::size_t i = 1; i < ch.values.size(); ++i) {
      const double a = ch.values[i - 1], b = ch.values[i];
      if (std::isnan(a) || std::isnan(b)) continue;
      ++pairs;
      if (a == b) ++held;
      else jumps.push_back(std::fabs(b - a));
    }
    std::vector<double> run_lengths;
    for (const auto& r : runs) run_lengths.push_back(static_cast<double>(r.length));
    const double typical_run = median_of(run_lengths);
    if (opt.step_detect && pairs > 0 && jumps.size() >= opt.stepped_min_changes &&
        static_cast<double>(held) >= opt.stepped_min_hold_fraction * static_cast<double>(pairs)) {
      q.flags |= static_cast<std::uint8_t>(QualityFlag::stepped);
      q.inferred_step = median_of(jumps);
      std::vector<double> mags;
      for (double v : ch.values)
        if (!std::isnan(v)) mags.push_back(std::fabs(v));
      const double level = median_of(mags);
      if (level > 0.0) q.inferred_step_pct = 100.0 * *q.inferred_step / level;
    }

    // Stuck: a long hold while sibling channels move. On a stepped channel the
    // hold must also be well beyond the channel's usual hold length.
    const auto siblings = series.channels_of(ch.meter_id);
    const double min_len = q.has(QualityFlag::stepped)
                               ? std::max(static_cast<double>(opt.stuck_min_len), 5.0 * typical_run)
                               : static_cast<double>(opt.stuck_min_len);
    for (const auto& r : runs) {
      if (static_cast<double>(r.length) < min_len) continue;
      const Timestamp from = ch.times[r.start], to = ch.times[r.start + r.length - 1];
      bool any_sibling = false, sibling_moves = false;
      for (const Channel* s : siblings) {
        if (s == chp) continue;
        any_sibling = true;
        if (varies_between(*s, from, to)) {
          sibling_moves = true;
          break;
        }
      }
      if (!any_sibling || sibling_moves) {
        q.flags |= static_cast<std::uint8_t>(QualityFlag::stuck);
        q.stuck_from = from;
        break;
      }
    }

    screen_gross(ch, opt, q);
    if (q.flags == 0) q.flags = static_cast<std::uint8_t>(QualityFlag::ok);
    report.channels.push_back(std::move(q));
  }

  for (QualityFlag f : {QualityFlag::ok, QualityFlag::stuck, QualityFlag::stepped, QualityFlag::gross_error,
                        QualityFlag::missing}) {
    std::size_t n = 0;
    for (const auto& c : report.channels) n += c.has(f) ? 1 : 0;
    report.summary[std::string(quality_flag_name(f))] = n;
  }
  return report;
}

std::string quality_report_to_json(const QualityReport& report) {
  using nlohmann::ordered_json;
  ordered_json doc;
  ordered_json summary = ordered_json::object();
  for (const auto& [k, v] : report.summary) summary[k] = v;
  doc["summary"] = summary;
  ordered_json channels = ordered_json::array();
  for (const auto& c : report.channels) {
    ordered_json j;
    j["meter_id"] = c.meter_id;
    j["channel"] = std::string(measurand_name(c.measurand));
    ordered_json flags = ordered_json::array();
    for (QualityFlag f : {QualityFlag::ok, QualityFlag::stuck, QualityFlag::stepped, QualityFlag::gross_error,
                          QualityFlag::missing})
      if (c.has(f)) flags.push_back(std::string(quality_flag_name(f)));
    j["flags"] = flags;
    j["samples"] = c.samples;
    j["missing"] = c.missing;
    j["longest_run"] = c.longest_run;
    if (c.stuck_from) j["stuck_from"] = format_timestamp(*c.stuck_from);
    if (c.inferred_step) j["inferred_step"] = *c.inferred_step;
    if (c.inferred_step_pct) j["inferred_step_pct"] = *c.inferred_step_pct;
    ordered_json gross = ordered_json::array();
    for (auto t : c.gross_errors) gross.push_back(format_timestamp(t));
    j["gross_errors"] = gross;
    channels.push_back(j);
  }
  doc["channels"] = channels;
  return doc.dump(2) + "\n";
}

}  // namespace dtwin
