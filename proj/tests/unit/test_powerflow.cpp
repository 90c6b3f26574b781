#include <gtest/gtest.h>

#include <chrono>
#include <cmath>
#include <sstream>

#include "dtwin/errors.hpp"
#include "dtwin/powerflow.hpp"
#include "fixtures.hpp"

using namespace dtwin;
using dtwin::test::NetworkBuilder;

namespace {

// Receiving-end magnitude of a radial two-bus system with constant-power load
// S = P + jQ behind z = R + jX:
//   |V2|^4 + (2(PR + QX) - |V1|^2)|V2|^2 + |z|^2|S|^2 = 0, taking the high root.
double two_bus_receiving_magnitude(Complex z, Complex s, double v1) {
  const double b = 2.0 * (s.real() * z.real() + s.imag() * z.imag()) - v1 * v1;
  const double c = std::norm(z) * std::norm(s);
  return std::sqrt((-b + std::sqrt(b * b - 4.0 * c)) / 2.0);
}

Complex total(const PhaseComplex& s) { return s[0] + s[1] + s[2]; }

}  // namespace

TEST(TwoBus, MatchesClosedForm) {
  for (const auto& [z, s, v1] : std::vector<std::tuple<Complex, Complex, double>>{
           {{0.01, 0.03}, {0.8, 0.3}, 1.0},
           {{0.05, 0.02}, {0.4, 0.1}, 1.03},
           {{0.02, 0.02}, {1.5, -0.2}, 0.98}}) {
    const NetworkModel m = test::two_bus(z, s, v1);
    const PowerFlowSolution sol = test::solve(m);
    const double expected = two_bus_receiving_magnitude(z, s, v1);
    for (Phase p : kAllPhases) EXPECT_NEAR(std::abs(sol.state.at(1, p)), expected, 1e-8) << z << " " << s;
    // Slack supplies the load plus I^2 z on each phase.
    const Complex i = std::conj(s / sol.state.at(1, Phase::a));
    EXPECT_NEAR(std::abs(sol.slack_injection[0] - (s + z * std::norm(i))), 0.0, 1e-8);
  }
}

TEST(TwoBus, NoLoadGivesFlatProfile) {
  const NetworkModel m = test::two_bus({0.01, 0.03}, {0.0, 0.0}, 1.02);
  const PowerFlowSolution sol = test::solve(m);
  EXPECT_EQ(sol.iterations, 0);
  for (Phase p : kAllPhases) EXPECT_NEAR(std::abs(sol.state.at(1, p)), 1.02, 1e-12);
}

TEST(Twin, ConvergesWithinLimitsAndBalances) {
  const NetworkModel m = test::twin33();
  const auto t_start = std::chrono::steady_clock::now();
  const PowerFlowSolution sol = test::solve(m);
  const double seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t_start).count();
  EXPECT_LT(seconds, 1.0);
  EXPECT_TRUE(sol.converged);
  EXPECT_LE(sol.iterations, 15);
  EXPECT_LE(sol.max_mismatch, 1e-8);
  const auto mags = sol.state.magnitudes();
  EXPECT_GT(mags.minCoeff(), 0.94);
  EXPECT_LT(mags.maxCoeff(), 1.06);

  // Slack injection = net demand + losses (sum of both branch-end flows).
  Complex demand{0.0, 0.0};
  const auto inj = InjectionSet::from_model(m);
  for (const auto& [id, s] : inj.loads) demand += total(s);
  for (const auto& [id, s] : inj.generators) demand -= total(s);
  Complex losses{0.0, 0.0};
  for (const auto& bf : sol.branch_flows) losses += total(bf.from) + total(bf.to);
  EXPECT_NEAR(std::abs(total(sol.slack_injection) - demand - losses), 0.0, 1e-8);
}

TEST(Twin, SmallFeederConvergesUnbalanced) {
  const PowerFlowSolution sol = test::solve(test::small_feeder());
  EXPECT_LE(sol.iterations, 10);
  const std::size_t f5 = test::small_feeder().bus_index("f5");
  EXPECT_GT(std::abs(std::abs(sol.state.at(f5, Phase::a)) - std::abs(sol.state.at(f5, Phase::b))), 1e-5);
}

TEST(Jacobian, MatchesFiniteDifferences) {
  const NetworkModel m = test::small_feeder();
  const PowerFlowSystem sys(m);
  const Eigen::VectorXcd s_spec = sys.node_injection(InjectionSet::from_model(m));
  Eigen::VectorXcd v = sys.flat_start(m.slack_voltage_pu);
  for (Eigen::Index i = 0; i < v.size(); ++i) v[i] *= Complex(0.99 + 0.001 * static_cast<double>(i % 7), 0.002);
  const Eigen::MatrixXd j = sys.jacobian(v);
  const auto& free = sys.free_nodes();
  const auto nf = static_cast<Eigen::Index>(free.size());
  const double h = 1e-7;
  double worst = 0.0;
  for (Eigen::Index c = 0; c < 2 * nf; ++c) {
    Eigen::VectorXcd vp = v, vm = v;
    const Complex step = c < nf ? Complex(h, 0.0) : Complex(0.0, h);
    vp[free[c % nf]] += step;
    vm[free[c % nf]] -= step;
    const Eigen::VectorXd fd = (sys.mismatch(vp, s_spec) - sys.mismatch(vm, s_spec)) / (2 * h);
    worst = std::max(worst, (fd - j.col(c)).cwiseAbs().maxCoeff());
  }
  EXPECT_LT(worst / j.cwiseAbs().maxCoeff(), 1e-6);
}

TEST(Failures, NonConvergentCaseReportsHistory) {
  // Far beyond the nose of the PV curve.
  const NetworkModel m = test::two_bus({0.05, 0.2}, {8.0, 4.0});
  try {
    test::solve(m);
    FAIL();
  } catch (const ConvergenceError& e) {
    EXPECT_FALSE(e.history().empty());
    EXPECT_FALSE(e.worst_node().empty());
    EXPECT_NE(std::string(e.what()).find("did not converge"), std::string::npos);
  }
}

TEST(Failures, IsolatedBusIsSingular) {
  const NetworkModel m = NetworkBuilder()
                             .bus("a", 11000).bus("b", 11000).bus("island", 11000)
                             .slack("a")
                             .line_pu("l", "a", "b", {0.01, 0.02})
                             .load("ld", "island", 100.0, 20.0)
                             .build();
  try {
    test::solve(m);
    FAIL();
  } catch (const SingularJacobianError& e) {
    EXPECT_EQ(e.suspected_isolated(), std::vector<std::string>{"island"});
  }
}

TEST(Failures, RejectsBadOptions) {
  const NetworkModel m = test::two_bus({0.01, 0.03}, {0.1, 0.0});
  EXPECT_THROW(solve_powerflow(m, InjectionSet::from_model(m), {}, PowerFlowOptions{0.0, 10}), InputError);
}

TEST(Slack, BalancedLineVoltagesGiveNominalPhasors) {
  const PhaseComplex s = slack_from_line_voltages(11000.0, 11000.0, 11000.0, 11000.0);
  const PhaseComplex expected = balanced_phasors();
  for (int p = 0; p < 3; ++p) EXPECT_NEAR(std::abs(s[p] - expected[p]), 0.0, 1e-9);
}

TEST(Slack, ReproducesUnbalancedLineVoltages) {
  const double vab = 11210.0, vbc = 11080.0, vca = 11150.0;
  const PhaseComplex s = slack_from_line_voltages(vab, vbc, vca, 11000.0);
  // Phase base is V_ll / sqrt(3).
  const double k = 11000.0 / std::sqrt(3.0);
  EXPECT_NEAR(std::abs(s[0] - s[1]) * k, vab, 1e-6);
  EXPECT_NEAR(std::abs(s[1] - s[2]) * k, vbc, 1e-6);
  EXPECT_NEAR(std::abs(s[2] - s[0]) * k, vca, 1e-6);
  EXPECT_THROW(slack_from_line_voltages(1.0, 1.0, 5.0, 11000.0), InputError);
  EXPECT_THROW(slack_from_line_voltages(-1.0, 1.0, 1.0, 11000.0), InputError);
}

TEST(Export, VoltageTableHasOneRowPerNode) {
  const NetworkModel m = test::small_feeder();
  const PowerFlowSolution sol = test::solve(m);
  std::ostringstream os;
  write_voltage_table(os, m, sol);
  std::size_t lines = 0;
  for (char ch : os.str()) lines += ch == '\n';
  // One comment line carrying the power base, then the header.
  EXPECT_EQ(lines, sol.state.nodes.size() + 2);
}
