#include <cmath>
#include <fmt/format.h>

#include "dtwin/dsse.hpp"
#include "dtwin/errors.hpp"

namespace dtwin {

namespace {

struct Linearization {
  Eigen::VectorXd r;  // weighted residuals
  Eigen::MatrixXd j;  // d r / d x
  Eigen::VectorXd c;
  Eigen::MatrixXd cj;
};

Linearization linearize_at(const DsseProblem& p, const Eigen::VectorXd& x, const Eigen::VectorXd& inv_sigma) {
  Linearization l;
  l.r = weighted_residual_vector(p, x);
  l.j = inv_sigma.asDiagonal() * measurement_jacobian(p, x);
  l.c = constraint_values(p, x);
  l.cj = constraint_jacobian(p, x);
  return l;
}

// Gradient of the objective projected onto the constraint tangent space.
double projected_gradient_norm(const Linearization& l) {
  const Eigen::VectorXd g = l.j.transpose() * l.r;
  const Eigen::MatrixXd cct = l.cj * l.cj.transpose();
  const Eigen::VectorXd mu = cct.completeOrthogonalDecomposition().solve(-(l.cj * g));
  return (g + l.cj.transpose() * mu).norm() * 2.0;
}

}  // namespace

StateEstimate estimate_state(const DsseProblem& problem, const std::optional<Eigen::VectorXd>& init,
                             const EstimatorOptions& options) {
  const auto m = static_cast<Eigen::Index>(problem.measurements.size());
  Eigen::VectorXd inv_sigma(m);
  for (Eigen::Index k = 0; k < m; ++k) {
    const double s = problem.measurements[static_cast<std::size_t>(k)].sigma;
    if (!(s > 0.0) || !std::isfinite(s))
      throw InputError(fmt::format("dsse: invalid sigma {} for measurement {}", s, k));
    inv_sigma[k] = 1.0 / s;
  }
  Eigen::VectorXd x = init ? *init : flat_start_state(problem);
  if (x.size() != static_cast<Eigen::Index>(problem.state_size()))
    throw InputError("dsse: initial state has the wrong dimension");

  const Eigen::Index n = x.size();
  StateEstimate est;
  double lambda = options.damping;
  double rho = 1.0;
  Linearization lin = linearize_at(problem, x, inv_sigma);
  auto merit = [&](const Eigen::VectorXd& r, const Eigen::VectorXd& c) {
    return 0.5 * r.squaredNorm() + rho * c.lpNorm<1>();
  };

  bool converged = false;
  int it = 0;
  for (; it < options.max_iterations && !converged; ++it) {
    est.gradient_history.push_back(projected_gradient_norm(lin));
    const Eigen::Index nc = lin.c.size();
    const Eigen::MatrixXd a = lin.j.transpose() * lin.j;
    const Eigen::VectorXd g = lin.j.transpose() * lin.r;
    const double scale = std::max(a.diagonal().maxCoeff(), 1.0);

    Eigen::MatrixXd kkt = Eigen::MatrixXd::Zero(n + nc, n + nc);
    kkt.bottomLeftCorner(nc, n) = lin.cj;
    kkt.topRightCorner(n, nc) = lin.cj.transpose();
    Eigen::VectorXd rhs(n + nc);
    rhs << -g, -lin.c;

    // Second-order correction: pulls a rejected trial point back onto the
    // curved constraint surface with a minimum-norm step.
    Eigen::CompleteOrthogonalDecomposition<Eigen::MatrixXd> soc;
    if (nc > 0) soc.compute(lin.cj);

    bool accepted = false;
    for (int attempt = 0; attempt < 40; ++attempt) {
      kkt.topLeftCorner(n, n) = a;
      kkt.topLeftCorner(n, n).diagonal().array() += lambda * scale;
      Eigen::VectorXd sol = Eigen::PartialPivLU<Eigen::MatrixXd>(kkt).solve(rhs);
      if (!sol.allFinite()) sol = kkt.completeOrthogonalDecomposition().solve(rhs);
      const Eigen::VectorXd dx = sol.head(n);
      if (nc > 0) rho = std::max(rho, 2.0 * sol.tail(nc).lpNorm<Eigen::Infinity>() + 1.0);

      Eigen::VectorXd xt = x + dx;
      Eigen::VectorXd rt = weighted_residual_vector(problem, xt);
      Eigen::VectorXd ct = constraint_values(problem, xt);
      const double before = merit(lin.r, lin.c);
      double after = merit(rt, ct);
      if (!(after < before) && nc > 0) {
        const Eigen::VectorXd xs = xt + soc.solve(-ct);
        const Eigen::VectorXd rs = weighted_residual_vector(problem, xs);
        const Eigen::VectorXd cs = constraint_values(problem, xs);
        if (const double ms = merit(rs, cs); ms < after) {
          xt = xs;
          rt = rs;
          ct = cs;
          after = ms;
        }
      }
      const double step = dx.lpNorm<Eigen::Infinity>();
      const bool tiny = step <= options.tolerance * (1.0 + x.lpNorm<Eigen::Infinity>());
      if (after < before || (tiny && after <= before * (1.0 + 1e-12) + 1e-300)) {
        x = xt;
        lambda = std::max(lambda / 3.0, options.min_damping);
        accepted = true;
        lin = linearize_at(problem, x, inv_sigma);
        if (tiny && lin.c.lpNorm<Eigen::Infinity>() <= std::max(options.tolerance, 1e-12)) converged = true;
        break;
      }
      if (tiny) {
        // No descent left at round-off level: stationary if feasible.
        converged = lin.c.lpNorm<Eigen::Infinity>() <= std::max(options.tolerance, 1e-12);
        accepted = converged;
        break;
      }
      lambda *= 4.0;
    }
    if (!accepted) break;
  }

  est.iterations = it;
  est.converged = converged;
  est.gradient_norm = projected_gradient_norm(lin);
  est.gradient_history.push_back(est.gradient_norm);
  if (!converged)
    throw ConvergenceError(fmt::format("state estimation did not converge in {} iterations (gradient norm {:.3e})",
                                       it, est.gradient_norm),
                           est.gradient_history, {});

  const Eigen::VectorXcd v = state_phasors(x);
  est.state.nodes = problem.system->nodes();
  est.state.voltage = v;
  est.injections = problem.system->injected_power(v);
  est.weighted_residuals = lin.r;
  est.raw_residuals = measurement_values(problem, x);
  for (Eigen::Index k = 0; k < m; ++k) est.raw_residuals[k] -= problem.measurements[static_cast<std::size_t>(k)].value;
  est.objective = lin.r.squaredNorm();
  est.max_constraint_violation = lin.c.size() ? lin.c.lpNorm<Eigen::Infinity>() : 0.0;
  est.bus_labels.assign(problem.model->buses.size(), "unknown");
  return est;
}

}  // namespace dtwin
