#include <cmath>
#include <numbers>

#include "dtwin/errors.hpp"
#include "dtwin/powerflow.hpp"

namespace dtwin {

namespace {

// |a e^{j0} - b e^{-j120}|^2 = a^2 + b^2 + ab, cyclically.
Eigen::Vector3d line_residual(const Eigen::Vector3d& m, const Eigen::Vector3d& target_sq) {
  const double a = m[0], b = m[1], c = m[2];
  return {a * a + b * b + a * b - target_sq[0], b * b + c * c + b * c - target_sq[1],
          c * c + a * a + c * a - target_sq[2]};
}

}  // namespace

PhaseComplex slack_from_line_voltages(double v_ab, double v_bc, double v_ca, double base_ll_v) {
  if (!(base_ll_v > 0.0)) throw InputError("slack reconstruction: base voltage must be positive");
  const Eigen::Vector3d l{v_ab, v_bc, v_ca};
  for (int i = 0; i < 3; ++i)
    if (!(l[i] > 0.0) || !std::isfinite(l[i]))
      throw InputError("slack reconstruction: line voltages must be positive");
  if (!(l[0] < l[1] + l[2] && l[1] < l[0] + l[2] && l[2] < l[0] + l[1]))
    throw InputError("slack reconstruction: line voltages violate the triangle inequality");

  const Eigen::Vector3d lpu = l / base_ll_v;
  const Eigen::Vector3d target = lpu.cwiseProduct(lpu);
  // Phase base is V_ll / sqrt(3), so line magnitudes in pu-of-LL equal the
  // phase-pu differences divided by sqrt(3): |Va - Vb|_ph / sqrt(3) = L_pu.
  const Eigen::Vector3d target_ph = 3.0 * target;

  Eigen::Vector3d m = Eigen::Vector3d::Constant(lpu.mean());
  double cost = line_residual(m, target_ph).squaredNorm();
  double lambda = 1e-9;
  for (int it = 0; it < 100 && cost > 1e-30; ++it) {
    const double a = m[0], b = m[1], c = m[2];
    Eigen::Matrix3d j;
    j << 2 * a + b, 2 * b + a, 0, 0, 2 * b + c, 2 * c + b, 2 * a + c, 0, 2 * c + a;
    const Eigen::Vector3d r = line_residual(m, target_ph);
    bool improved = false;
    for (int k = 0; k < 30; ++k) {
      const Eigen::Matrix3d lhs = j.transpose() * j + lambda * Eigen::Matrix3d::Identity();
      const Eigen::Vector3d step = lhs.ldlt().solve(-j.transpose() * r);
      const Eigen::Vector3d trial = m + step;
      const double trial_cost = trial.minCoeff() > 0.0 ? line_residual(trial, target_ph).squaredNorm() : INFINITY;
      if (trial_cost < cost) {
        m = trial;
        cost = trial_cost;
        lambda = std::max(lambda * 0.1, 1e-15);
        improved = true;
        break;
      }
      lambda *= 10.0;
    }
    if (!improved) break;
  }

  const double deg = std::numbers::pi / 180.0;
  return {std::polar(m[0], 0.0), std::polar(m[1], -120.0 * deg), std::polar(m[2], 120.0 * deg)};
}

}  // namespace dtwin
