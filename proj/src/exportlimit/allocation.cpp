#include <cmath>
#include <fmt/format.h>
#include <random>

#include "dtwin/errors.hpp"
#include "dtwin/exportlimit.hpp"

namespace dtwin {

Complex allocation_total(const NetworkModel& model, const LoadAllocation& allocation) {
  double re = 0.0, im = 0.0;
  for (const auto& l : model.loads) {
    const auto it = allocation.loads.find(l.id);
    if (it == allocation.loads.end()) continue;
    for (const Complex& s : it->second) {
      re += s.real();
      im += s.imag();
    }
  }
  return {re, im};
}

namespace {

// Moves one component until the canonical total hits `target` exactly.
void reconcile(const NetworkModel& model, LoadAllocation& alloc, const std::string& load_id, int phase,
               Complex target) {
  for (int part = 0; part < 2; ++part) {
    for (int guard = 0; guard < 200; ++guard) {
      const Complex total = allocation_total(model, alloc);
      const double have = part == 0 ? total.real() : total.imag();
      const double want = part == 0 ? target.real() : target.imag();
      if (have == want) break;
      Complex& s = alloc.loads[load_id][phase];
      double x = part == 0 ? s.real() : s.imag();
      const double moved = x + (want - have);
      x = moved != x ? moved : std::nextafter(x, want > have ? INFINITY : -INFINITY);
      s = part == 0 ? Complex{x, s.imag()} : Complex{s.real(), x};
    }
  }
}

PhaseComplex equal_split(const PowerDevice& load, Complex total) {
  PhaseComplex out{};
  const double k = static_cast<double>(load.phases.size());
  for (Phase p : load.phases.phases()) out[phase_index(p)] = total / k;
  return out;
}

int last_phase(const PowerDevice& load) { return phase_index(load.phases.phases().back()); }

}  // namespace

LoadAllocation allocate_loads(const NetworkModel& model, const std::map<std::string, Complex>& metered,
                              Complex pcc_injection_va, const AllocationOptions& options) {
  LoadAllocation out;
  out.seed = options.seed;
  Complex metered_total{};
  for (const auto& [id, s] : metered) {
    if (!model.find_load(id)) throw InputError(fmt::format("allocation: metered load \"{}\" is not in the model", id));
    metered_total += s;
  }
  std::vector<const PowerDevice*> unmetered;
  for (const auto& l : model.loads) {
    const auto it = metered.find(l.id);
    if (it != metered.end()) out.loads[l.id] = equal_split(l, it->second);
    else {
      out.loads[l.id] = PhaseComplex{};
      unmetered.push_back(&l);
    }
  }
  out.residual_power = pcc_injection_va - metered_total;
  const Complex residual = out.residual_power;
  if (residual == Complex{}) return out;

  if (residual.real() < 0.0)
    out.warnings.push_back(
        fmt::format("allocation: metered demand exceeds the PCC total by {:.1f} W; allocated as negative demand",
                    -residual.real()));

  if (!unmetered.empty()) {
    std::mt19937_64 rng(options.seed);
    std::uniform_real_distribution<double> uniform(0.0, 2.0);
    std::vector<double> w(unmetered.size());
    double sum = 0.0;
    for (double& x : w) sum += (x = uniform(rng));
    if (!(sum > 0.0)) {
      std::fill(w.begin(), w.end(), 1.0);
      sum = static_cast<double>(w.size());
    }
    for (std::size_t k = 0; k < unmetered.size(); ++k)
      out.loads[unmetered[k]->id] = equal_split(*unmetered[k], residual * (w[k] / sum));
    const PowerDevice& last = *unmetered.back();
    reconcile(model, out, last.id, last_phase(last), metered_total + residual);
    return out;
  }

  if (options.slack_load_id) {
    const auto idx = model.find_load(*options.slack_load_id);
    if (!idx) throw InputError(fmt::format("allocation: slack load \"{}\" is not in the model", *options.slack_load_id));
    const PowerDevice& slack = model.loads[*idx];
    PhaseComplex& s = out.loads[slack.id];
    const PhaseComplex extra = equal_split(slack, residual);
    for (int k = 0; k < 3; ++k) s[k] += extra[k];
    reconcile(model, out, slack.id, last_phase(slack), metered_total + residual);
    out.warnings.push_back(fmt::format("allocation: no unmetered loads; residual assigned to \"{}\"", slack.id));
    return out;
  }

  out.residual_allocated = false;
  out.warnings.push_back("allocation: no unmetered loads and no slack load configured; residual left unallocated");
  return out;
}

}  // namespace dtwin
