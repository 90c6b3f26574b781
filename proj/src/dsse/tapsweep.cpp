#include <cmath>
#include <fmt/format.h>
#include <numbers>
#include <ostream>

#include <json.hpp>

#include "dtwin/dsse.hpp"
#include "dtwin/errors.hpp"
#include "dtwin/parallel.hpp"

namespace dtwin {

namespace {

struct VoltageChannel {
  std::size_t step = 0;  // index into timestamps
  std::string meter_id;
  Measurand measurand = Measurand::v_ab;
  std::size_t bus = 0;
  double measured_v = 0.0;
  double base_v = 1.0;  // pu base of this channel
};

struct Evaluation {
  double sse = 0.0;
  std::vector<double> simulated_v;  // per channel
};

double simulated(const PowerFlowSolution& sol, const VoltageChannel& ch, double v_ln) {
  const PhaseComplex v = sol.state.bus_voltage(ch.bus);
  switch (ch.measurand) {
    case Measurand::v_ab: return std::abs(v[0] - v[1]) * v_ln;
    case Measurand::v_bc: return std::abs(v[1] - v[2]) * v_ln;
    case Measurand::v_ca: return std::abs(v[2] - v[0]) * v_ln;
    default: return std::abs(v[phase_index(measurand_phase(ch.measurand))]) * v_ln;
  }
}

class Sweeper {
 public:
  Sweeper(std::span<const MeterSpec> meters, const MeasurementSeries& series, std::span<const Timestamp> times,
          const NetworkModel& model, const TapSweepOptions& opt, TapSweepReport& report)
      : opt_(opt), report_(report) {
    for (std::size_t k = 0; k < times.size(); ++k) {
      PowerFlowCase c = build_powerflow_case(model, meters, series, times[k], opt.cases);
      for (auto& w : c.warnings) report.warnings.push_back(format_timestamp(times[k]) + ": " + w);
      cases_.push_back(std::move(c));
      for (const auto& m : meters) {
        const std::size_t bus = model.bus_index(m.bus);
        for (Measurand x : m.measurands) {
          if (!is_line_voltage(x) && !is_phase_voltage(x)) continue;
          const auto v = series.value_at(m.id, x, times[k]);
          if (!v || std::isnan(*v)) continue;
          const PerUnitBase base = model.base_of(bus);
          channels_.push_back({k, m.id, x, bus, *v, is_line_voltage(x) ? base.v_ll : base.v_ln()});
        }
      }
    }
    if (channels_.empty()) throw InputError("tap sweep: no voltage readings at the requested timestamps");
  }

  std::optional<Evaluation> evaluate(const NetworkModel& model) {
    ++report_.evaluations;
    std::vector<std::optional<PowerFlowSolution>> sols(cases_.size());
    parallel_for(cases_.size(), opt_.jobs, [&](std::size_t k) {
      try {
        sols[k] = solve_powerflow(model, cases_[k].injections, cases_[k].slack, opt_.powerflow);
      } catch (const NumericalError&) {
        sols[k].reset();
      }
    });
    Evaluation e;
    e.simulated_v.reserve(channels_.size());
    for (const auto& ch : channels_) {
      if (!sols[ch.step]) return std::nullopt;
      const double v_ln = model.base_of(ch.bus).v_ln();
      const double sim = simulated(*sols[ch.step], ch, v_ln);
      const double err = (sim - ch.measured_v) / ch.base_v;
      e.sse += err * err;
      e.simulated_v.push_back(sim);
    }
    return e;
  }

  double rms(const Evaluation& e) const { return std::sqrt(e.sse / static_cast<double>(channels_.size())); }
  const std::vector<VoltageChannel>& channels() const { return channels_; }

 private:
  const TapSweepOptions& opt_;
  TapSweepReport& report_;
  std::vector<PowerFlowCase> cases_;
  std::vector<VoltageChannel> channels_;
};

}  // namespace

TapSweepResult tap_sweep(const NetworkModel& model, std::span<const MeterSpec> meters,
                         const MeasurementSeries& series, std::span<const Timestamp> timestamps,
                         const TapSweepOptions& options) {
  if (timestamps.empty()) throw InputError("tap sweep: no timestamps");
  TapSweepResult result{model, {}};
  TapSweepReport& report = result.report;
  Sweeper sweeper(meters, series, timestamps, model, options, report);

  std::vector<std::string> subset = options.transformers;
  if (subset.empty())
    for (const auto& t : model.transformers) subset.push_back(t.id);
  for (const auto& id : subset)
    if (!model.find_transformer(id)) throw InputError(fmt::format("tap sweep: unknown transformer \"{}\"", id));

  const auto initial = sweeper.evaluate(model);
  if (!initial) throw NumericalError("tap sweep: power flow fails at the starting taps");
  Evaluation best = *initial;
  NetworkModel& current = result.model;

  for (int pass = 0; pass < options.max_passes; ++pass) {
    ++report.passes;
    bool improved = false;
    for (const auto& id : subset) {
      const TransformerBranch& tr = current.transformers[*current.find_transformer(id)];
      int lo = tr.tap_min, hi = tr.tap_max;
      if (const auto it = options.bounds.find(id); it != options.bounds.end()) {
        lo = std::max(lo, it->second.first);
        hi = std::min(hi, it->second.second);
      }
      int pos = tr.tap_position;
      for (int dir : {+1, -1}) {
        bool moved = false;
        while (pos + dir >= lo && pos + dir <= hi) {
          NetworkModel candidate = apply_tap(current, id, pos + dir);
          const auto e = sweeper.evaluate(candidate);
          if (!e) {
            report.skipped.push_back(fmt::format("{}@{}", id, pos + dir));
            break;
          }
          if (!(e->sse < best.sse * (1.0 - 1e-12))) break;
          current = std::move(candidate);
          best = *e;
          pos += dir;
          moved = improved = true;
        }
        if (moved) break;
      }
    }
    if (!improved) break;
  }

  report.rms_before_pu = sweeper.rms(*initial);
  report.rms_after_pu = sweeper.rms(best);
  for (const auto& t : model.transformers) {
    const int after = current.transformers[*current.find_transformer(t.id)].tap_position;
    if (after != t.tap_position) report.taps.push_back({t.id, t.tap_position, after});
  }
  const auto& chans = sweeper.channels();
  for (std::size_t c = 0; c < chans.size(); ++c)
    report.scatter.push_back({timestamps[chans[c].step], chans[c].meter_id, std::string(measurand_name(chans[c].measurand)),
                              chans[c].measured_v, initial->simulated_v[c], best.simulated_v[c]});
  return result;
}

void write_tap_scatter(std::ostream& os, const TapSweepReport& report) {
  os << "timestamp,meter_id,channel,measured_v,simulated_before_v,simulated_after_v\n";
  for (const auto& p : report.scatter)
    os << fmt::format("{},{},{},{:.6f},{:.6f},{:.6f}\n", format_timestamp(p.time), p.meter_id, p.channel,
                      p.measured_v, p.before_v, p.after_v);
}

std::string tap_report_to_json(const TapSweepReport& report) {
  nlohmann::ordered_json j;
  j["rms_before_pu"] = report.rms_before_pu;
  j["rms_after_pu"] = report.rms_after_pu;
  j["improvement_factor"] = report.rms_after_pu > 0.0 ? report.rms_before_pu / report.rms_after_pu : 0.0;
  nlohmann::ordered_json taps = nlohmann::ordered_json::array();
  for (const auto& t : report.taps) taps.push_back({{"transformer", t.transformer}, {"from", t.from}, {"to", t.to}});
  j["tap_changes"] = taps;
  j["skipped_candidates"] = report.skipped;
  j["passes"] = report.passes;
  j["evaluations"] = report.evaluations;
  j["warnings"] = report.warnings;
  return j.dump(2) + "\n";
}

}  // namespace dtwin
