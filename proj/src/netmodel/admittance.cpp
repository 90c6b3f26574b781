#include <cmath>
#include <numbers>

#include "dtwin/errors.hpp"
#include "dtwin/netmodel.hpp"

namespace dtwin {

Eigen::MatrixXcd admittance_to_pu(const Eigen::MatrixXcd& y_siemens, const PerUnitBase& base) {
  return y_siemens * base.z();
}

Eigen::MatrixXcd admittance_from_pu(const Eigen::MatrixXcd& y_pu, const PerUnitBase& base) {
  return y_pu / base.z();
}

Eigen::MatrixXcd BranchAdmittance::two_port() const {
  const auto k = y_ff.rows();
  Eigen::MatrixXcd m(2 * k, 2 * k);
  m << y_ff, y_ft, y_tf, y_tt;
  return m;
}

namespace {

BranchAdmittance line_admittance(const NetworkModel& model, const LineSegment& line) {
  BranchAdmittance br;
  br.id = line.id;
  br.kind = BranchKind::line;
  br.from_bus = model.bus_index(line.from_bus);
  br.to_bus = model.bus_index(line.to_bus);
  br.phases = line.phases;

  Eigen::MatrixXcd ys = line.series_admittance;
  Eigen::MatrixXcd ycf = line.shunt_from;
  Eigen::MatrixXcd yct = line.shunt_to;
  if (line.units == ImpedanceUnits::siemens) {
    const PerUnitBase base = model.base_of(br.from_bus);
    ys = admittance_to_pu(ys, base);
    ycf = admittance_to_pu(ycf, base);
    yct = admittance_to_pu(yct, base);
  }
  br.y_ff = ys + ycf;
  br.y_ft = -ys;
  br.y_tf = -ys;
  br.y_tt = ys + yct;
  return br;
}

BranchAdmittance transformer_admittance(const NetworkModel& model, const TransformerBranch& t) {
  BranchAdmittance br;
  br.id = t.id;
  br.kind = BranchKind::transformer;
  br.from_bus = model.bus_index(t.from_bus);
  br.to_bus = model.bus_index(t.to_bus);
  br.phases = PhaseSet{};

  const double ratio = t.effective_ratio();
  if (!(ratio > 0.0)) throw InputError("transformer \"" + t.id + "\": singular transformer ratio");
  if (!model.buses[br.from_bus].phases.is_three_phase() || !model.buses[br.to_bus].phases.is_three_phase())
    throw InputError("transformer \"" + t.id + "\": phase-set mismatch");

  // Off-nominal ratio relative to the two bus voltage bases.
  const double base_ratio = model.buses[br.from_bus].base_voltage_v / model.buses[br.to_bus].base_voltage_v;
  const double tap = ratio / base_ratio;

  const Complex z_sys = t.series_impedance_pu * (model.bases.power_va / t.rated_power_va);
  const Complex y = 1.0 / z_sys;

  const Eigen::Matrix3cd y1 = y * Eigen::Matrix3cd::Identity();
  Eigen::Matrix3d m2;
  m2 << 2, -1, -1, -1, 2, -1, -1, -1, 2;
  const Eigen::Matrix3cd y2 = (y / 3.0) * m2.cast<Complex>();
  Eigen::Matrix3d m3;
  m3 << -1, 1, 0, 0, -1, 1, 1, 0, -1;
  const Eigen::Matrix3cd y3 = (y / std::numbers::sqrt3) * m3.cast<Complex>();

  Eigen::Matrix3cd pp, ss, ps, sp;
  const bool hv_delta = t.hv_connection == WindingConnection::delta;
  const bool lv_delta = t.lv_connection == WindingConnection::delta;
  if (!hv_delta && !lv_delta) {
    pp = y1, ss = y1, ps = -y1, sp = -y1;
  } else if (!hv_delta && lv_delta) {
    pp = y1, ss = y2, ps = y3, sp = y3.transpose();
  } else if (hv_delta && !lv_delta) {
    pp = y2, ss = y1, ps = y3.transpose(), sp = y3;
  } else {
    pp = y2, ss = y2, ps = -y2, sp = -y2;
  }
  br.y_ff = pp / (tap * tap);
  br.y_ft = ps / tap;
  br.y_tf = sp / tap;
  br.y_tt = ss;
  return br;
}

}  // namespace

std::vector<BranchAdmittance> build_admittance(const NetworkModel& model) {
  std::vector<BranchAdmittance> out;
  out.reserve(model.lines.size() + model.transformers.size());
  for (const auto& l : model.lines) {
    for (Phase p : l.phases.phases())
      if (!model.buses[model.bus_index(l.from_bus)].phases.contains(p) ||
          !model.buses[model.bus_index(l.to_bus)].phases.contains(p))
        throw InputError("line \"" + l.id + "\": phase-set mismatch");
    out.push_back(line_admittance(model, l));
  }
  for (const auto& t : model.transformers) out.push_back(transformer_admittance(model, t));
  return out;
}

Eigen::MatrixXcd assemble_bus_admittance(const NodeMap& nodes, std::span<const BranchAdmittance> branches) {
  const auto n = static_cast<Eigen::Index>(nodes.size());
  Eigen::MatrixXcd y = Eigen::MatrixXcd::Zero(n, n);
  for (const auto& br : branches) {
    const auto ph = br.phases.phases();
    std::vector<int> fi, ti;
    for (Phase p : ph) {
      fi.push_back(nodes.index(br.from_bus, p));
      ti.push_back(nodes.index(br.to_bus, p));
    }
    for (std::size_t r = 0; r < ph.size(); ++r)
      for (std::size_t c = 0; c < ph.size(); ++c) {
        y(fi[r], fi[c]) += br.y_ff(r, c);
        y(fi[r], ti[c]) += br.y_ft(r, c);
        y(ti[r], fi[c]) += br.y_tf(r, c);
        y(ti[r], ti[c]) += br.y_tt(r, c);
      }
  }
  return y;
}

}  // namespace dtwin
