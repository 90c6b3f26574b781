#include <algorithm>
#include <cmath>

#include "dtwin/dsse.hpp"

namespace dtwin {

bool ObservabilityReport::is_observable(const std::string& bus) const {
  return std::find(observable.begin(), observable.end(), bus) != observable.end();
}

namespace {

void append_normalized(Eigen::MatrixXd& out, Eigen::Index& row, const Eigen::MatrixXd& m) {
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    const double norm = m.row(r).norm();
    if (norm > 0.0) out.row(row++) = m.row(r) / norm;
  }
}

}  // namespace

ObservabilityReport observability_analysis(const DsseProblem& problem, const ObservabilityOptions& options) {
  const Eigen::VectorXd x0 = flat_start_state(problem);
  const Eigen::MatrixXd h = measurement_jacobian(problem, x0);
  const Eigen::MatrixXd c = constraint_jacobian(problem, x0);
  const Eigen::Index dim = x0.size();
  const Eigen::Index n = dim / 2;

  Eigen::MatrixXd a(h.rows() + c.rows(), dim);
  Eigen::Index rows = 0;
  append_normalized(a, rows, h);
  append_normalized(a, rows, c);
  a.conservativeResize(rows, dim);

  // Square it up so the SVD always returns a full right basis.
  Eigen::MatrixXd padded = Eigen::MatrixXd::Zero(std::max(rows, dim), dim);
  padded.topRows(rows) = a;
  const Eigen::BDCSVD<Eigen::MatrixXd> svd(padded, Eigen::ComputeFullV);
  const Eigen::VectorXd& s = svd.singularValues();
  const double smax = s.size() ? s[0] : 0.0;
  Eigen::Index rank = 0;
  while (rank < s.size() && s[rank] > options.rank_tolerance * smax) ++rank;
  const Eigen::MatrixXd null = svd.matrixV().rightCols(dim - rank);

  ObservabilityReport report;
  report.rank = static_cast<int>(rank);
  report.state_dimension = static_cast<int>(dim);

  const NodeMap& nodes = problem.system->nodes();
  const auto& model = *problem.model;
  for (std::size_t b = 0; b < model.buses.size(); ++b) {
    const auto bn = nodes.bus_nodes(b);
    double worst = 0.0;
    auto probe = [&](const Eigen::VectorXd& g) {
      const double gn = g.norm();
      if (gn > 0.0 && null.cols() > 0) worst = std::max(worst, (null.transpose() * g).norm() / gn);
    };
    for (std::size_t i : bn) {
      const auto k = static_cast<Eigen::Index>(i);
      Eigen::VectorXd g = Eigen::VectorXd::Zero(dim);
      g[k] = 2.0 * x0[k];
      g[n + k] = 2.0 * x0[n + k];
      probe(g);
    }
    for (std::size_t u = 0; u < bn.size(); ++u)
      for (std::size_t w = u + 1; w < bn.size(); ++w) {
        const auto p = static_cast<Eigen::Index>(bn[u]), q = static_cast<Eigen::Index>(bn[w]);
        const double ep = x0[p], fp = x0[n + p], eq = x0[q], fq = x0[n + q];
        Eigen::VectorXd re = Eigen::VectorXd::Zero(dim), im = Eigen::VectorXd::Zero(dim);
        re[p] = eq, re[q] = ep, re[n + p] = fq, re[n + q] = fp;
        im[p] = -fq, im[n + p] = eq, im[q] = fp, im[n + q] = -ep;
        probe(re);
        probe(im);
      }
    const std::string& id = model.buses[b].id;
    report.evidence[id] = worst;
    (worst > options.null_space_threshold ? report.unobservable : report.observable).push_back(id);
  }
  return report;
}

void mark_residual_zero(ObservabilityReport& report, const StateEstimate& estimate, const DsseProblem& problem,
                        double threshold) {
  std::map<std::size_t, bool> zero;
  for (std::size_t m = 0; m < problem.measurements.size(); ++m) {
    const auto& f = problem.measurements[m];
    if (f.kind != MeasurementKind::line_voltage_magnitude && f.kind != MeasurementKind::phase_voltage_magnitude)
      continue;
    const bool small = std::fabs(estimate.raw_residuals[static_cast<Eigen::Index>(m)]) < threshold;
    auto [it, inserted] = zero.try_emplace(f.bus, small);
    if (!inserted) it->second = it->second && small;
  }
  for (const auto& [bus, flag] : zero) report.residual_zero[problem.model->buses[bus].id] = flag;
}

void label_observability(StateEstimate& estimate, const ObservabilityReport& report, const DsseProblem& problem) {
  const auto& buses = problem.model->buses;
  estimate.bus_labels.assign(buses.size(), "unknown");
  for (std::size_t b = 0; b < buses.size(); ++b) {
    if (report.is_observable(buses[b].id)) estimate.bus_labels[b] = "observable";
    else if (std::find(report.unobservable.begin(), report.unobservable.end(), buses[b].id) !=
             report.unobservable.end())
      estimate.bus_labels[b] = "unobservable";
  }
}

}  // namespace dtwin
