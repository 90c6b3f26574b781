#include <algorithm>
#include <cmath>
#include <deque>
#include <fmt/format.h>

#include "dtwin/errors.hpp"
#include "dtwin/powerflow.hpp"

namespace dtwin {

Complex ComplexVoltageState::at(std::size_t bus, Phase p) const {
  const int i = nodes.index(bus, p);
  return i < 0 ? Complex{} : voltage[i];
}

PhaseComplex ComplexVoltageState::bus_voltage(std::size_t bus) const {
  PhaseComplex out{};
  for (Phase p : kAllPhases) out[phase_index(p)] = at(bus, p);
  return out;
}

InjectionSet InjectionSet::from_model(const NetworkModel& model) {
  const double s_phase = model.bases.power_va / 3.0;
  InjectionSet inj;
  for (const auto& l : model.loads) {
    PhaseComplex s{};
    for (int k = 0; k < 3; ++k) s[k] = l.power_va[k] / s_phase;
    inj.loads[l.id] = s;
  }
  for (const auto& g : model.generators) {
    PhaseComplex s{};
    for (int k = 0; k < 3; ++k) s[k] = g.power_va[k] / s_phase;
    inj.generators[g.id] = s;
  }
  return inj;
}

PowerFlowSystem::PowerFlowSystem(const NetworkModel& model)
    : model_(&model), nodes_(model), branches_(build_admittance(model)) {
  ybus_ = assemble_bus_admittance(nodes_, branches_);
  const std::size_t slack = model.bus_index(model.slack_bus);
  for (std::size_t i = 0; i < nodes_.size(); ++i)
    (nodes_[i].bus == slack ? slack_nodes_ : free_nodes_).push_back(i);
}

Eigen::VectorXcd PowerFlowSystem::node_injection(const InjectionSet& inj) const {
  Eigen::VectorXcd s = Eigen::VectorXcd::Zero(static_cast<Eigen::Index>(nodes_.size()));
  auto add = [&](const std::vector<PowerDevice>& devices, const std::map<std::string, PhaseComplex>& powers,
                 double sign, const char* what) {
    for (const auto& [id, power] : powers) {
      const auto it = std::find_if(devices.begin(), devices.end(), [&](const PowerDevice& d) { return d.id == id; });
      if (it == devices.end()) throw InputError(fmt::format("injection for undeclared {} \"{}\"", what, id));
      const std::size_t bus = model_->bus_index(it->bus);
      for (Phase p : kAllPhases) {
        const Complex v = power[phase_index(p)];
        if (v == Complex{}) continue;
        const int n = nodes_.index(bus, p);
        if (n < 0 || !it->phases.contains(p))
          throw InputError(fmt::format("{} \"{}\": power on phase {} which it does not connect", what, id,
                                       phase_letter(p)));
        s[n] += sign * v;
      }
    }
  };
  add(model_->loads, inj.loads, -1.0, "load");
  add(model_->generators, inj.generators, 1.0, "generator");
  return s;
}

Eigen::VectorXcd PowerFlowSystem::injected_power(const Eigen::VectorXcd& v) const {
  return v.cwiseProduct((ybus_ * v).conjugate());
}

Eigen::VectorXd PowerFlowSystem::mismatch(const Eigen::VectorXcd& v, const Eigen::VectorXcd& s_spec) const {
  const Eigen::VectorXcd s = injected_power(v);
  const auto nf = static_cast<Eigen::Index>(free_nodes_.size());
  Eigen::VectorXd f(2 * nf);
  for (Eigen::Index r = 0; r < nf; ++r) {
    const auto i = static_cast<Eigen::Index>(free_nodes_[r]);
    const Complex d = s[i] - s_spec[i];
    f[r] = d.real();
    f[nf + r] = d.imag();
  }
  return f;
}

Eigen::MatrixXd PowerFlowSystem::jacobian(const Eigen::VectorXcd& v) const {
  const Eigen::VectorXcd cur = ybus_ * v;
  const auto nf = static_cast<Eigen::Index>(free_nodes_.size());
  Eigen::MatrixXd j = Eigen::MatrixXd::Zero(2 * nf, 2 * nf);
  for (Eigen::Index r = 0; r < nf; ++r) {
    const auto i = static_cast<Eigen::Index>(free_nodes_[r]);
    const double e = v[i].real(), f = v[i].imag();
    for (Eigen::Index c = 0; c < nf; ++c) {
      const auto k = static_cast<Eigen::Index>(free_nodes_[c]);
      const double g = ybus_(i, k).real(), b = ybus_(i, k).imag();
      if (g == 0.0 && b == 0.0) continue;
      j(r, c) = e * g + f * b;
      j(r, nf + c) = -e * b + f * g;
      j(nf + r, c) = f * g - e * b;
      j(nf + r, nf + c) = -f * b - e * g;
    }
    const double a = cur[i].real(), bi = cur[i].imag();
    j(r, r) += a;
    j(r, nf + r) += bi;
    j(nf + r, r) -= bi;
    j(nf + r, nf + r) += a;
  }
  return j;
}

Eigen::VectorXcd PowerFlowSystem::flat_start(const PhaseComplex& slack) const {
  const NetworkModel& m = *model_;
  const auto n = static_cast<Eigen::Index>(nodes_.size());
  Eigen::VectorXcd v = Eigen::VectorXcd::Zero(n);
  std::vector<bool> done(m.buses.size(), false);
  const std::size_t s = m.bus_index(m.slack_bus);
  for (std::size_t i : nodes_.bus_nodes(s)) v[i] = slack[phase_index(nodes_[i].phase)];
  done[s] = true;

  std::deque<std::size_t> queue{s};
  while (!queue.empty()) {
    const std::size_t bus = queue.front();
    queue.pop_front();
    for (const auto& br : branches_) {
      std::size_t other;
      bool forward;
      if (br.from_bus == bus && !done[br.to_bus]) {
        other = br.to_bus, forward = true;
      } else if (br.to_bus == bus && !done[br.from_bus]) {
        other = br.from_bus, forward = false;
      } else {
        continue;
      }
      const auto ph = br.phases.phases();
      const auto k = static_cast<Eigen::Index>(ph.size());
      Eigen::VectorXcd known(k);
      for (Eigen::Index r = 0; r < k; ++r) known[r] = v[nodes_.index(bus, ph[r])];
      Eigen::VectorXcd unknown;
      if (br.kind == BranchKind::line) {
        unknown = known;
      } else {
        // Open-circuit the far side: Y_uu V_u = -Y_uk V_k (minimum-norm for deltas).
        const Eigen::MatrixXcd& yuu = forward ? br.y_tt : br.y_ff;
        const Eigen::MatrixXcd& yuk = forward ? br.y_tf : br.y_ft;
        unknown = yuu.completeOrthogonalDecomposition().solve(-(yuk * known));
      }
      for (Eigen::Index r = 0; r < k; ++r) v[nodes_.index(other, ph[r])] = unknown[r];
      done[other] = true;
      queue.push_back(other);
    }
  }
  // Phases never reached keep a nominal phasor so the failure shows up as a
  // singular Jacobian rather than a division by zero.
  for (Eigen::Index i = 0; i < n; ++i)
    if (v[i] == Complex{}) v[i] = balanced_phasors()[phase_index(nodes_[i].phase)];
  return v;
}

std::vector<BranchFlow> PowerFlowSystem::branch_flows(const Eigen::VectorXcd& v) const {
  std::vector<BranchFlow> out;
  out.reserve(branches_.size());
  for (const auto& br : branches_) {
    const auto ph = br.phases.phases();
    const auto k = static_cast<Eigen::Index>(ph.size());
    Eigen::VectorXcd vf(k), vt(k);
    for (Eigen::Index r = 0; r < k; ++r) {
      vf[r] = v[nodes_.index(br.from_bus, ph[r])];
      vt[r] = v[nodes_.index(br.to_bus, ph[r])];
    }
    const Eigen::VectorXcd i_f = br.y_ff * vf + br.y_ft * vt;
    const Eigen::VectorXcd i_t = br.y_tf * vf + br.y_tt * vt;
    BranchFlow bf;
    bf.id = br.id;
    bf.phases = br.phases;
    for (Eigen::Index r = 0; r < k; ++r) {
      bf.from[phase_index(ph[r])] = vf[r] * std::conj(i_f[r]);
      bf.to[phase_index(ph[r])] = vt[r] * std::conj(i_t[r]);
    }
    out.push_back(std::move(bf));
  }
  return out;
}

namespace {

std::vector<std::string> isolated_suspects(const PowerFlowSystem& sys) {
  std::vector<std::string> out = unreachable_from_slack(sys.model());
  const auto& nodes = sys.nodes();
  for (std::size_t i = 0; i < nodes.size(); ++i) {
    if (std::abs(sys.ybus()(i, i)) > 0.0) continue;
    const std::string& id = nodes.bus_ids()[nodes[i].bus];
    if (std::find(out.begin(), out.end(), id) == out.end()) out.push_back(id);
  }
  return out;
}

}  // namespace

PowerFlowSolution solve_powerflow(const NetworkModel& model, const InjectionSet& injections, const SlackSpec& slack,
                                  const PowerFlowOptions& options) {
  if (!(options.tolerance > 0.0) || options.max_iterations < 1)
    throw InputError("power flow: tolerance and iteration limit must be positive");
  const PowerFlowSystem sys(model);
  const Eigen::VectorXcd s_spec = sys.node_injection(injections);
  Eigen::VectorXcd v = sys.flat_start(slack.voltage_pu);
  const auto& free = sys.free_nodes();
  const auto nf = static_cast<Eigen::Index>(free.size());

  PowerFlowSolution sol;
  auto node_mismatch = [&](const Eigen::VectorXd& f, Eigen::Index& worst) {
    double mx = 0.0;
    worst = -1;
    for (Eigen::Index r = 0; r < nf; ++r) {
      const double m = std::hypot(f[r], f[nf + r]);
      if (!(m <= mx)) mx = m, worst = r;
    }
    return mx;
  };

  for (int it = 0;; ++it) {
    const Eigen::VectorXd f = sys.mismatch(v, s_spec);
    Eigen::Index worst = -1;
    const double mx = node_mismatch(f, worst);
    sol.mismatch_history.push_back(mx);
    if (mx <= options.tolerance) {
      sol.iterations = it;
      sol.max_mismatch = mx;
      break;
    }
    const std::string worst_label = worst >= 0 ? sys.nodes().label(free[worst]) : std::string{};
    if (!std::isfinite(mx) || it >= options.max_iterations)
      throw ConvergenceError(
          fmt::format("power flow did not converge in {} iterations (max mismatch {:.3e} pu at {})", it, mx,
                      worst_label),
          sol.mismatch_history, worst_label);

    const Eigen::MatrixXd j = sys.jacobian(v);
    const Eigen::PartialPivLU<Eigen::MatrixXd> lu(j);
    // The rcond estimate is unreliable once a pivot is exactly zero, so the
    // pivot ratio and the step itself are checked as well.
    const Eigen::VectorXd pivots = lu.matrixLU().diagonal().cwiseAbs();
    const bool tiny_pivot = !(pivots.minCoeff() > 1e-14 * pivots.maxCoeff());
    const Eigen::VectorXd dx = lu.solve(-f);
    if (tiny_pivot || !(lu.rcond() > 1e-14) || !dx.allFinite())
      throw SingularJacobianError("power flow: singular Jacobian (isolated buses or phases?)",
                                  isolated_suspects(sys));
    for (Eigen::Index r = 0; r < nf; ++r) v[free[r]] += Complex{dx[r], dx[nf + r]};
  }

  sol.converged = true;
  sol.state.nodes = sys.nodes();
  sol.state.voltage = v;
  sol.branch_flows = sys.branch_flows(v);
  const Eigen::VectorXcd s = sys.injected_power(v);
  for (std::size_t i : sys.slack_nodes()) sol.slack_injection[phase_index(sys.nodes()[i].phase)] = s[i];
  return sol;
}

}  // namespace dtwin
