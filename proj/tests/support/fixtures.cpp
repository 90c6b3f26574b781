#include "fixtures.hpp"

#include <cmath>
#include <filesystem>
#include <random>

namespace dtwin::test {

using nlohmann::json;

std::string data_path(const std::string& name) { return std::string(DTWIN_DATA_DIR) + "/" + name; }
std::string cli_path() { return DTWIN_CLI; }

std::string scratch_dir(const std::string& name) {
  const auto dir = std::filesystem::path(DTWIN_SCRATCH_DIR) / name;
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir.string();
}

NetworkModel twin33() { return load_network(data_path("twin33.json")); }
std::vector<MeterSpec> twin33_meters() { return load_meters(data_path("twin33_meters.json")); }

Timestamp t0() { return parse_timestamp("2021-06-01T12:00:00Z"); }

NetworkBuilder::NetworkBuilder(double power_kva) {
  doc_ = {{"bases", {{"power_kva", power_kva}, {"frequency_hz", 50.0}}},
          {"buses", json::array()},
          {"lines", json::array()},
          {"transformers", json::array()},
          {"loads", json::array()},
          {"generators", json::array()}};
}

NetworkBuilder& NetworkBuilder::bus(const std::string& id, double v_ll, const std::string& phases) {
  doc_["buses"].push_back({{"id", id}, {"base_voltage_v", v_ll}, {"phases", phases}});
  return *this;
}

NetworkBuilder& NetworkBuilder::slack(const std::string& bus, double v_pu, double angle_deg) {
  doc_["slack"] = {{"bus", bus},
                   {"voltage_pu", {v_pu, v_pu, v_pu}},
                   {"angle_deg", {angle_deg, angle_deg - 120.0, angle_deg + 120.0}}};
  return *this;
}

NetworkBuilder& NetworkBuilder::line_pu(const std::string& id, const std::string& from, const std::string& to,
                                        Complex z_pu, const std::string& phases) {
  const std::size_t k = phases.size();
  nlohmann::json r = nlohmann::json::array(), x = nlohmann::json::array();
  for (std::size_t i = 0; i < k; ++i) {
    nlohmann::json rr = nlohmann::json::array(), xr = nlohmann::json::array();
    for (std::size_t j = 0; j < k; ++j) {
      rr.push_back(i == j ? z_pu.real() : 0.0);
      xr.push_back(i == j ? z_pu.imag() : 0.0);
    }
    r.push_back(rr);
    x.push_back(xr);
  }
  doc_["lines"].push_back({{"id", id},
                           {"from", from},
                           {"to", to},
                           {"length_m", 1000.0},
                           {"phases", phases},
                           {"impedance", {{"format", "matrix"}, {"units", "pu"}, {"r", r}, {"x", x}}}});
  return *this;
}

NetworkBuilder& NetworkBuilder::cable(const std::string& id, const std::string& from, const std::string& to,
                                      double length_m, double r1, double x1, double r0, double x0, double b1) {
  doc_["lines"].push_back({{"id", id},
                           {"from", from},
                           {"to", to},
                           {"length_m", length_m},
                           {"phases", "abc"},
                           {"impedance",
                            {{"format", "sequence"},
                             {"units", "ohm_per_km"},
                             {"r1", r1},
                             {"x1", x1},
                             {"r0", r0},
                             {"x0", x0},
                             {"b1", b1},
                             {"b0", b1}}}});
  return *this;
}

NetworkBuilder& NetworkBuilder::transformer(const std::string& id, const std::string& hv, const std::string& lv,
                                            double kva, double ratio, int tap, double step_pct, int tap_min,
                                            int tap_max, const std::string& hv_conn, const std::string& lv_conn) {
  doc_["transformers"].push_back({{"id", id},
                                  {"from", hv},
                                  {"to", lv},
                                  {"rated_kva", kva},
                                  {"r_pu", 0.009},
                                  {"x_pu", 0.045},
                                  {"hv_connection", hv_conn},
                                  {"lv_connection", lv_conn},
                                  {"nominal_ratio", ratio},
                                  {"tap_step_pct", step_pct},
                                  {"tap", tap},
                                  {"tap_min", tap_min},
                                  {"tap_max", tap_max}});
  return *this;
}

NetworkBuilder& NetworkBuilder::load(const std::string& id, const std::string& bus, double kw, double kvar,
                                     const std::string& kind) {
  doc_["loads"].push_back({{"id", id}, {"bus", bus}, {"phases", "abc"}, {"kw", kw}, {"kvar", kvar}, {"kind", kind}});
  return *this;
}

NetworkBuilder& NetworkBuilder::load_phases(const std::string& id, const std::string& bus, const std::string& phases,
                                            std::vector<double> kw, std::vector<double> kvar) {
  doc_["loads"].push_back({{"id", id}, {"bus", bus}, {"phases", phases}, {"kw", kw}, {"kvar", kvar}});
  return *this;
}

NetworkBuilder& NetworkBuilder::generator(const std::string& id, const std::string& bus, double kw, double kvar) {
  doc_["generators"].push_back({{"id", id}, {"bus", bus}, {"phases", "abc"}, {"kw", kw}, {"kvar", kvar}});
  return *this;
}

NetworkModel NetworkBuilder::build() const { return parse_network(json()); }

NetworkModel two_bus(Complex z_pu, Complex load_pu, double slack_pu) {
  return NetworkBuilder()
      .bus("s", 11000.0)
      .bus("r", 11000.0)
      .slack("s", slack_pu)
      .line_pu("ln", "s", "r", z_pu)
      .load("ld", "r", load_pu.real() * 1000.0, load_pu.imag() * 1000.0)
      .build();
}

namespace {

constexpr double kMvPhase = 11000.0 / 1.7320508075688772;

}  // namespace

NetworkModel small_feeder() {
  return NetworkBuilder()
      .bus("f1", 11000.0)
      .bus("f2", 11000.0)
      .bus("f3", 11000.0)
      .bus("f4", 11000.0)
      .bus("f5", 11000.0)
      .bus("l1", 433.0)
      .slack("f1", 1.02)
      .cable("c12", "f1", "f2", 800.0)
      .cable("c23", "f2", "f3", 600.0)
      .cable("c34", "f3", "f4", 700.0)
      .cable("c45", "f4", "f5", 500.0)
      .transformer("tx1", "f3", "l1", 500.0, 11000.0 / 433.0)
      .load("ld_f2", "f2", 400.0, 130.0)
      .load("ld_f4", "f4", 300.0, 100.0)
      .load("ld_l1", "l1", 250.0, 80.0)
      .load_phases("ld_f5", "f5", "abc", {100.0, 150.0, 80.0}, {30.0, 50.0, 20.0})
      .generator("pv", "f5", 500.0)
      .build();
}

NetworkModel balanced_small_feeder() {
  return NetworkBuilder()
      .bus("f1", 11000.0)
      .bus("f2", 11000.0)
      .bus("f3", 11000.0)
      .bus("f4", 11000.0)
      .bus("f5", 11000.0)
      .bus("l1", 433.0)
      .slack("f1", 1.02)
      .cable("c12", "f1", "f2", 800.0)
      .cable("c23", "f2", "f3", 600.0)
      .cable("c34", "f3", "f4", 700.0)
      .cable("c45", "f4", "f5", 500.0)
      .transformer("tx1", "f3", "l1", 500.0, 11000.0 / 433.0)
      .load("ld_f2", "f2", 400.0, 130.0)
      .load("ld_f4", "f4", 300.0, 100.0)
      .load("ld_l1", "l1", 250.0, 80.0)
      .load("ld_f5", "f5", 330.0, 100.0)
      .generator("pv", "f5", 500.0)
      .build();
}

std::vector<MeterSpec> small_feeder_phase_meters() {
  return {phase_meter("pcc", "f1", kMvPhase, 100.0, MeterSign::generation),
          phase_meter("m_f2", "f2", kMvPhase, 100.0), phase_meter("m_f4", "f4", kMvPhase, 100.0),
          phase_meter("m_f5", "f5", kMvPhase, 100.0), phase_meter("m_l1", "l1", 250.0, 700.0)};
}

std::vector<MeterSpec> small_feeder_send_meters() {
  return {send_meter("pcc", "f1", kMvPhase, 100.0, MeterSign::generation), send_meter("m_f2", "f2", kMvPhase, 100.0),
          send_meter("m_f4", "f4", kMvPhase, 100.0), send_meter("m_f5", "f5", kMvPhase, 100.0),
          send_meter("m_l1", "l1", 250.0, 700.0)};
}

NetworkModel unmetered_tail_feeder() {
  return NetworkBuilder()
      .bus("s", 11000.0)
      .bus("m1", 11000.0)
      .bus("m2", 11000.0)
      .bus("m3", 11000.0)
      .bus("t1", 11000.0)
      .bus("t2", 11000.0)
      .bus("t3", 11000.0)
      .slack("s", 1.01)
      .cable("c1", "s", "m1", 900.0)
      .cable("c2", "m1", "m2", 700.0)
      .cable("c3", "m2", "m3", 600.0)
      .cable("c4", "m2", "t1", 400.0)
      .cable("c5", "m3", "t2", 500.0)
      .cable("c6", "m3", "t3", 300.0)
      .load("ld_m1", "m1", 300.0, 90.0)
      .load("ld_m2", "m2", 250.0, 80.0)
      .load("ld_t1", "t1", 200.0, 60.0)
      .load("ld_t2", "t2", 180.0, 50.0)
      .load("ld_t3", "t3", 150.0, 40.0)
      .build();
}

std::vector<MeterSpec> unmetered_tail_meters() {
  return {phase_meter("pcc", "s", kMvPhase, 100.0, MeterSign::generation), phase_meter("m_m1", "m1", kMvPhase, 100.0),
          phase_meter("m_m2", "m2", kMvPhase, 100.0), voltage_meter("v_t1", "t1", kMvPhase),
          voltage_meter("v_t2", "t2", kMvPhase)};
}

namespace {

MeterSpec meter(const std::string& id, const std::string& bus, double v, double a, MeterSign sign,
                std::vector<Measurand> ms) {
  MeterSpec m;
  m.id = id;
  m.bus = bus;
  m.rated_voltage_v = v;
  m.rated_current_a = a;
  m.sign = sign;
  m.measurands = std::move(ms);
  return m;
}

}  // namespace

MeterSpec phase_meter(const std::string& id, const std::string& bus, double rated_v_ln, double rated_a,
                      MeterSign sign) {
  using M = Measurand;
  return meter(id, bus, rated_v_ln, rated_a, sign,
               {M::v_a, M::v_b, M::v_c, M::i_a, M::i_b, M::i_c, M::p_a, M::p_b, M::p_c, M::q_a, M::q_b, M::q_c});
}

MeterSpec send_meter(const std::string& id, const std::string& bus, double rated_v_ln, double rated_a,
                     MeterSign sign) {
  using M = Measurand;
  return meter(id, bus, rated_v_ln, rated_a, sign, {M::v_ab, M::v_bc, M::v_ca, M::i_a, M::i_b, M::i_c, M::p_tot, M::q_tot});
}

MeterSpec voltage_meter(const std::string& id, const std::string& bus, double rated_v_ln) {
  using M = Measurand;
  return meter(id, bus, rated_v_ln, 100.0, MeterSign::consumption, {M::v_a, M::v_b, M::v_c});
}

MeterSpec full_meter(const std::string& id, const std::string& bus, double rated_v_ln, double rated_a,
                     MeterSign sign) {
  std::vector<Measurand> all;
  for (std::size_t k = 0; k < kMeasurandCount; ++k) all.push_back(static_cast<Measurand>(k));
  return meter(id, bus, rated_v_ln, rated_a, sign, all);
}

PowerFlowSolution solve(const NetworkModel& model) {
  return solve_powerflow(model, InjectionSet::from_model(model), SlackSpec{model.slack_voltage_pu});
}

MeasurementSeries synth_once(const NetworkModel& model, const PowerFlowSolution& sol,
                             const std::vector<MeterSpec>& meters, std::uint64_t seed, double noise_scale,
                             Timestamp t) {
  const std::vector<TimedSolution> timed{{t, &sol}};
  return synthesize_measurements(model, timed, meters, SynthOptions{seed, noise_scale});
}

Timestamp quality_time(int k) { return t0() + std::chrono::seconds(30 * k); }

MeasurementSeries quality_fixture(std::uint64_t seed, ChannelFault fault) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> noise(0.0, 1.0);
  std::vector<double> v(kQualitySamples), i(kQualitySamples), p(kQualitySamples);
  for (int k = 0; k < kQualitySamples; ++k) {
    v[k] = 225.0 + 0.3 * k + 0.4 * noise(rng);
    i[k] = 80.0 + 10.0 * std::sin(k / 15.0) + 0.2 * noise(rng);
    p[k] = v[k] * i[k] * 0.95 + 30.0 * noise(rng);
  }
  switch (fault) {
    case ChannelFault::none: break;
    case ChannelFault::stuck:
      for (int k = kStuckFrom + 1; k < kStuckFrom + kStuckLength; ++k) v[k] = v[kStuckFrom];
      break;
    case ChannelFault::stepped:
      for (double& x : v) x = std::round(x / kQuantStep) * kQuantStep;
      break;
    case ChannelFault::spike: v[kSpikeAt] += 30.0; break;
  }
  MeasurementSeries s;
  for (int k = 0; k < kQualitySamples; ++k) {
    s.add("m", Measurand::v_a, quality_time(k), v[k]);
    s.add("m", Measurand::i_a, quality_time(k), i[k]);
    s.add("m", Measurand::p_a, quality_time(k), p[k]);
  }
  return s;
}

namespace {

Eigen::Index qr_rank(const Eigen::MatrixXd& m) {
  Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(m);
  qr.setThreshold(1e-9);
  return qr.rank();
}

}  // namespace

std::vector<std::string> brute_force_unobservable(const DsseProblem& p) {
  const Eigen::VectorXd x0 = flat_start_state(p);
  const Eigen::MatrixXd h = measurement_jacobian(p, x0);
  const Eigen::MatrixXd c = constraint_jacobian(p, x0);
  Eigen::MatrixXd a(h.rows() + c.rows(), x0.size());
  a << h, c;
  for (Eigen::Index r = 0; r < a.rows(); ++r)
    if (a.row(r).norm() > 0.0) a.row(r).normalize();
  const Eigen::Index base_rank = qr_rank(a);
  const Eigen::Index n = x0.size() / 2;

  auto adds_rank = [&](Eigen::VectorXd g) {
    g.normalize();
    Eigen::MatrixXd ext(a.rows() + 1, a.cols());
    ext << a, g.transpose();
    return qr_rank(ext) > base_rank;
  };

  std::vector<std::string> out;
  const NodeMap& nodes = p.system->nodes();
  for (std::size_t b = 0; b < p.model->buses.size(); ++b) {
    const auto bn = nodes.bus_nodes(b);
    bool unobservable = false;
    for (std::size_t i : bn) {
      const auto k = static_cast<Eigen::Index>(i);
      Eigen::VectorXd g = Eigen::VectorXd::Zero(x0.size());
      g[k] = 2 * x0[k];
      g[n + k] = 2 * x0[n + k];
      unobservable = unobservable || adds_rank(g);
    }
    for (std::size_t u = 0; u < bn.size(); ++u)
      for (std::size_t w = u + 1; w < bn.size(); ++w) {
        const auto i = static_cast<Eigen::Index>(bn[u]), j = static_cast<Eigen::Index>(bn[w]);
        Eigen::VectorXd re = Eigen::VectorXd::Zero(x0.size()), im = re;
        re[i] = x0[j], re[j] = x0[i], re[n + i] = x0[n + j], re[n + j] = x0[n + i];
        im[i] = -x0[n + j], im[n + i] = x0[j], im[j] = x0[n + i], im[n + j] = -x0[i];
        unobservable = unobservable || adds_rank(re) || adds_rank(im);
      }
    if (unobservable) out.push_back(p.model->buses[b].id);
  }
  return out;
}

double state_error(const Eigen::VectorXcd& estimate, const Eigen::VectorXcd& truth) {
  const Complex rot = std::polar(1.0, std::arg(truth[0]) - std::arg(estimate[0]));
  return (estimate * rot - truth).cwiseAbs().maxCoeff();
}

}  // namespace dtwin::test
