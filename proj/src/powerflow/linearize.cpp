#include <span>

#include "dtwin/errors.hpp"
#include "dtwin/kernels.hpp"
#include "dtwin/powerflow.hpp"

namespace dtwin {

SensitivityMatrix linearize(const NetworkModel& model, const PowerFlowSolution& reference,
                            const std::string& injection_bus) {
  if (!reference.converged) throw InputError("linearize: reference power flow has not converged");
  const PowerFlowSystem sys(model);
  if (sys.nodes().size() != static_cast<std::size_t>(reference.state.voltage.size()))
    throw InputError("linearize: reference state does not match the model");
  const std::size_t bus = model.bus_index(injection_bus);
  if (bus == model.bus_index(model.slack_bus)) throw InputError("linearize: injection at the slack bus");

  const Eigen::VectorXcd& v = reference.state.voltage;
  const auto& free = sys.free_nodes();
  const auto nf = static_cast<Eigen::Index>(free.size());
  const Eigen::PartialPivLU<Eigen::MatrixXd> lu(sys.jacobian(v));

  // Unit balanced injection: +1 pu on each phase of the bus (1 pu of S_base in total).
  Eigen::MatrixXd rhs = Eigen::MatrixXd::Zero(2 * nf, 2);
  for (Eigen::Index r = 0; r < nf; ++r) {
    if (sys.nodes()[free[r]].bus != bus) continue;
    rhs(r, 0) = 1.0;
    rhs(nf + r, 1) = 1.0;
  }
  const Eigen::MatrixXd dx = lu.solve(rhs);

  SensitivityMatrix out;
  out.injection_bus = injection_bus;
  out.power_base_va = model.bases.power_va;
  const auto n = static_cast<Eigen::Index>(sys.nodes().size());
  out.m = Eigen::MatrixXd::Zero(n, 2);
  out.reference_magnitude = v.cwiseAbs();
  for (Eigen::Index r = 0; r < nf; ++r) {
    const auto i = static_cast<Eigen::Index>(free[r]);
    const double mag = std::abs(v[i]);
    for (int c = 0; c < 2; ++c) out.m(i, c) = (v[i].real() * dx(r, c) + v[i].imag() * dx(nf + r, c)) / mag;
  }
  for (std::size_t i = 0; i < sys.nodes().size(); ++i) out.labels.push_back(sys.nodes().label(i));
  return out;
}

Eigen::VectorXd predict_voltages(const SensitivityMatrix& sens, const Eigen::VectorXd& v_twin, double p_pu,
                                 double q_pu) {
  if (v_twin.size() != sens.m.rows()) throw InputError("predict_voltages: dimension mismatch");
  const Eigen::Index n = v_twin.size();
  const Eigen::VectorXd mp = sens.m.col(0);
  const Eigen::VectorXd mq = sens.m.col(1);
  Eigen::VectorXd out(n);
  const auto sz = static_cast<std::size_t>(n);
  kernels::affine2({out.data(), sz}, {v_twin.data(), sz}, {mp.data(), sz}, p_pu, {mq.data(), sz}, q_pu);
  return out;
}

}  // namespace dtwin
