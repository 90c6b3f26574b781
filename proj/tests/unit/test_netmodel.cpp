#include <gtest/gtest.h>

#include <cmath>
#include <numbers>

#include "dtwin/errors.hpp"
#include "dtwin/netmodel.hpp"
#include "dtwin/powerflow.hpp"
#include "fixtures.hpp"

using namespace dtwin;
using dtwin::test::NetworkBuilder;

namespace {

const char* kMinimal = R"({
  "slack": "a",
  "buses": [{"id": "a", "base_voltage_v": 11000}, {"id": "b", "base_voltage_v": 11000}],
  "lines": [{"id": "l1", "from": "a", "to": "b", "length_m": 1000,
             "impedance": {"format": "sequence", "units": "ohm_per_km", "r1": 0.2, "x1": 0.1, "r0": 0.6, "x0": 0.3}}],
  "loads": [{"id": "d", "bus": "b", "kw": 300, "kvar": 90}]
})";

std::string replace(std::string s, const std::string& from, const std::string& to) {
  const auto at = s.find(from);
  EXPECT_NE(at, std::string::npos) << from;
  return s.replace(at, from.size(), to);
}

}  // namespace

TEST(PhaseSet, ParsesAndRejects) {
  EXPECT_EQ(PhaseSet::parse("abc").size(), 3u);
  EXPECT_EQ(PhaseSet::parse("ca").to_string(), "ac");
  EXPECT_EQ(PhaseSet::parse("b").position(Phase::b), 0);
  EXPECT_EQ(PhaseSet::parse("ac").position(Phase::c), 1);
  EXPECT_THROW(PhaseSet::parse(""), InputError);
  EXPECT_THROW(PhaseSet::parse("aa"), InputError);
  EXPECT_THROW(PhaseSet::parse("ad"), InputError);
}

TEST(PerUnit, BaseQuantities) {
  const PerUnitBase b{11000.0, 1.0e6};
  EXPECT_NEAR(b.v_ln(), 11000.0 / std::sqrt(3.0), 1e-9);
  EXPECT_NEAR(b.z(), 121.0, 1e-12);
  EXPECT_NEAR(b.s_phase() / b.v_ln(), b.i(), 1e-12);
  Eigen::MatrixXcd y(1, 1);
  y(0, 0) = Complex(0.5, -0.25);
  EXPECT_TRUE(admittance_from_pu(admittance_to_pu(y, b), b).isApprox(y, 1e-15));
}

TEST(SequenceToPhase, SelfAndMutualTerms) {
  const Complex z1(0.2, 0.1), z0(0.6, 0.3);
  const Eigen::Matrix3cd z = sequence_to_phase(z1, z0);
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j) {
      const Complex expected = i == j ? (2.0 * z1 + z0) / 3.0 : (z0 - z1) / 3.0;
      EXPECT_NEAR(std::abs(z(i, j) - expected), 0.0, 1e-15);
    }
}

TEST(Parse, MinimalNetwork) {
  const NetworkModel m = parse_network(kMinimal);
  ASSERT_EQ(m.buses.size(), 2u);
  EXPECT_EQ(m.slack_bus, "a");
  EXPECT_EQ(m.bases.power_va, 1.0e6);
  ASSERT_EQ(m.loads.size(), 1u);
  EXPECT_NEAR(m.loads[0].power_va[0].real(), 100e3, 1e-9);
  EXPECT_NEAR(m.loads[0].power_va[2].imag(), 30e3, 1e-9);
  // Positive-sequence impedance of the segment, recovered from the phase admittance.
  const Eigen::Matrix3cd z = m.lines[0].series_admittance.inverse();
  const Complex a = std::polar(1.0, 2.0 * std::numbers::pi / 3.0);
  const Complex z1 = z(0, 0) + a * a * z(0, 1) + a * z(0, 2);
  EXPECT_NEAR(z1.real(), 0.2, 1e-12);
  EXPECT_NEAR(z1.imag(), 0.1, 1e-12);
}

TEST(Parse, LineImpedanceConvertsToPerUnit) {
  const NetworkModel m = parse_network(kMinimal);
  const auto br = build_admittance(m);
  ASSERT_EQ(br.size(), 1u);
  const Eigen::MatrixXcd z_pu = br[0].series().inverse();
  const Eigen::Matrix3cd z_ohm = sequence_to_phase({0.2, 0.1}, {0.6, 0.3});
  EXPECT_TRUE(z_pu.isApprox(z_ohm / 121.0, 1e-12));
}

TEST(Parse, RejectsMalformedDocuments) {
  EXPECT_THROW(parse_network("{"), InputError);
  EXPECT_THROW(parse_network(replace(kMinimal, "\"slack\": \"a\",", "\"slack\": \"a\", \"extra\": 1,")), InputError);
  EXPECT_THROW(parse_network(replace(kMinimal, "\"slack\": \"a\"", "\"slack\": \"zz\"")), InputError);
  EXPECT_THROW(parse_network(replace(kMinimal, "\"length_m\": 1000", "\"length_m\": -5")), InputError);
  EXPECT_THROW(parse_network(replace(kMinimal, "\"bus\": \"b\"", "\"bus\": \"nowhere\"")), InputError);
  EXPECT_THROW(parse_network(replace(kMinimal, "\"from\": \"a\"", "\"from\": \"b\"")), InputError);
  EXPECT_THROW(parse_network(replace(kMinimal, "\"r1\": 0.2, \"x1\": 0.1", "\"r1\": 0.0, \"x1\": 0.0")), InputError);
}

TEST(Parse, RejectsSingularTransformerRatio) {
  auto doc = NetworkBuilder().bus("h", 11000).bus("l", 433).slack("h").transformer("t", "h", "l", 500, 0.0).json();
  EXPECT_THROW(parse_network(doc), InputError);
}

TEST(Parse, RejectsPhaseMismatch) {
  auto doc = NetworkBuilder().bus("a", 11000).bus("b", 11000, "ab").slack("a").line_pu("l", "a", "b", {0.01, 0.01}).json();
  EXPECT_THROW(parse_network(doc), InputError);
}

TEST(Parse, MissingFileReportsNotFound) {
  try {
    load_network("/nonexistent/network.json");
    FAIL();
  } catch (const InputError& e) {
    EXPECT_NE(std::string(e.what()).find("file not found"), std::string::npos);
  }
}

TEST(Validate, UnreachableBusIsAWarning) {
  auto doc = NetworkBuilder().bus("a", 11000).bus("b", 11000).bus("island", 11000).slack("a").line_pu("l", "a", "b", {0.01, 0.02}).json();
  ValidationReport r;
  const NetworkModel m = parse_network(doc, &r);
  EXPECT_EQ(unreachable_from_slack(m), std::vector<std::string>{"island"});
  ASSERT_EQ(r.warnings.size(), 1u);
  EXPECT_NE(r.warnings[0].find("island"), std::string::npos);
}

namespace {

void expect_equivalent(const NetworkModel& a, const NetworkModel& b) {
  EXPECT_EQ(a.buses, b.buses);
  EXPECT_EQ(a.transformers, b.transformers);
  EXPECT_EQ(a.loads, b.loads);
  EXPECT_EQ(a.generators, b.generators);
  EXPECT_EQ(a.slack_bus, b.slack_bus);
  EXPECT_EQ(a.bases, b.bases);
  ASSERT_EQ(a.lines.size(), b.lines.size());
  for (std::size_t i = 0; i < a.lines.size(); ++i) {
    EXPECT_EQ(a.lines[i].id, b.lines[i].id);
    EXPECT_EQ(a.lines[i].phases, b.lines[i].phases);
    EXPECT_TRUE(a.lines[i].series_admittance.isApprox(b.lines[i].series_admittance, 1e-12));
    EXPECT_TRUE(a.lines[i].shunt_from.isApprox(b.lines[i].shunt_from, 1e-12));
  }
  for (int p = 0; p < 3; ++p) EXPECT_NEAR(std::abs(a.slack_voltage_pu[p] - b.slack_voltage_pu[p]), 0.0, 1e-14);
}

}  // namespace

TEST(RoundTrip, SerialiseAndParseAgain) {
  const NetworkModel a = test::small_feeder();
  expect_equivalent(a, parse_network(network_to_json(a)));
  const NetworkModel twin = test::twin33();
  expect_equivalent(twin, parse_network(network_to_json(twin)));
}

TEST(Taps, ApplyTapChangesOnlyThatTransformer) {
  const NetworkModel m = test::small_feeder();
  const NetworkModel t = apply_tap(m, "tx1", 3);
  EXPECT_EQ(t.transformers[0].tap_position, 3);
  EXPECT_NEAR(t.transformers[0].effective_ratio(), m.transformers[0].nominal_ratio * (1.0 + 3 * 0.0125), 1e-12);
  EXPECT_THROW(apply_tap(m, "tx1", 5), InputError);
  EXPECT_THROW(apply_tap(m, "nope", 0), InputError);
}

TEST(NodeMapTest, IndexesBusesAndPhases) {
  auto doc = NetworkBuilder().bus("a", 11000).bus("b", 11000, "bc").slack("a").line_pu("l", "a", "b", {0.01, 0.02}, "bc").json();
  const NetworkModel m = parse_network(doc);
  const NodeMap nodes(m);
  ASSERT_EQ(nodes.size(), 5u);
  EXPECT_EQ(nodes.index(1, Phase::a), -1);
  EXPECT_EQ(nodes.index(1, Phase::c), 4);
  EXPECT_EQ(nodes.label(3), "b.b");
  EXPECT_EQ(nodes.bus_nodes(1), (std::vector<std::size_t>{3, 4}));
}

TEST(Admittance, LineTwoPortIsReciprocalWithHalfShunts) {
  const NetworkModel m = test::small_feeder();
  for (const auto& br : build_admittance(m)) {
    if (br.kind != BranchKind::line) continue;
    EXPECT_TRUE(br.y_ft.isApprox(br.y_tf, 1e-14));
    EXPECT_TRUE(br.shunt_from().isApprox(br.shunt_to(), 1e-14));
    EXPECT_GT(br.shunt_from()(0, 0).imag(), 0.0);
  }
}

TEST(Admittance, BusMatrixRowsSumToShuntsOnly) {
  // Without shunts and with wye-wye transformers at nominal ratio every row of Ybus sums to zero.
  auto doc = NetworkBuilder()
                 .bus("a", 11000).bus("b", 11000).bus("c", 11000)
                 .slack("a")
                 .line_pu("l1", "a", "b", {0.01, 0.03})
                 .transformer("t", "b", "c", 1000, 1.0, 0, 1.25, -4, 4, "wye_grounded", "wye_grounded")
                 .json();
  const NetworkModel m = parse_network(doc);
  const PowerFlowSystem sys(m);
  EXPECT_LT((sys.ybus().rowwise().sum()).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(Admittance, WyeWyeTransformerOffNominalTap) {
  auto doc = NetworkBuilder().bus("h", 11000).bus("l", 11000).slack("h")
                 .transformer("t", "h", "l", 500, 1.0, 2, 1.25, -4, 4, "wye_grounded", "wye_grounded").json();
  const NetworkModel m = parse_network(doc);
  const auto br = build_admittance(m).at(0);
  const double t = 1.025;
  const Complex y = 1.0 / (Complex(0.009, 0.045) * 2.0);  // 1 MVA system base, 500 kVA rating
  EXPECT_NEAR(std::abs(br.y_ff(0, 0) - y / (t * t)), 0.0, 1e-12);
  EXPECT_NEAR(std::abs(br.y_ft(0, 0) + y / t), 0.0, 1e-12);
  EXPECT_NEAR(std::abs(br.y_tt(0, 0) - y), 0.0, 1e-12);
}

TEST(Admittance, DeltaWyeNoLoadVoltageShiftAndRatio) {
  // Open-circuit LV voltage of a Dyn transformer: magnitude 1/t, shifted 30 degrees.
  for (int tap : {0, 1, -2}) {
    auto doc = NetworkBuilder().bus("h", 11000).bus("l", 433).slack("h").transformer("t", "h", "l", 500, 11000.0 / 433.0, tap).json();
    const NetworkModel m = parse_network(doc);
    const PowerFlowSolution sol = solve_powerflow(m, InjectionSet::from_model(m));
    const double t = 1.0 + tap * 0.0125;
    for (Phase p : kAllPhases) {
      const Complex hv = sol.state.at(0, p), lv = sol.state.at(1, p);
      EXPECT_NEAR(std::abs(lv), 1.0 / t, 1e-10);
      const double shift = std::remainder(std::arg(lv) - std::arg(hv), 2.0 * std::numbers::pi);
      EXPECT_NEAR(std::fabs(shift), std::numbers::pi / 6.0, 1e-10);
    }
  }
}
