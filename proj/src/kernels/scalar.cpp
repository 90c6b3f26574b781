#include <cmath>
#include <limits>
#include <stdexcept>

#include "dtwin/kernels.hpp"

namespace dtwin::kernels::scalar {

void combine(std::span<double> out, std::span<const double> a, std::span<const double> b, double cb) {
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::fma(cb, b[i], a[i]);
}

void affine2(std::span<double> out, std::span<const double> base, std::span<const double> a, double ca,
             std::span<const double> b, double cb) {
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::fma(cb, b[i], std::fma(ca, a[i], base[i]));
}

void scale_offset(std::span<double> out, std::span<const double> x, double scale, double offset) {
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::fma(x[i], scale, offset);
}

void clamped_difference(std::span<double> out, std::span<const double> a, std::span<const double> b) {
  for (std::size_t i = 0; i < out.size(); ++i) {
    const double d = a[i] - b[i];
    out[i] = d > 0.0 ? d : 0.0;
  }
}

void floored_scale(std::span<double> out, std::span<const double> x, double floor, double k) {
  for (std::size_t i = 0; i < out.size(); ++i) {
    const double ax = std::fabs(x[i]);
    out[i] = k * (ax > floor ? ax : floor);
  }
}

void weighted_residuals(std::span<double> out, std::span<const double> h, std::span<const double> z,
                        std::span<const double> sigma) {
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = (h[i] - z[i]) / sigma[i];
}

MinRatio min_positive_ratio(std::span<const double> numer, std::span<const double> denom) {
  MinRatio best{std::numeric_limits<double>::infinity(), -1};
  for (std::size_t i = 0; i < numer.size(); ++i) {
    if (!(denom[i] > 0.0)) continue;
    const double r = numer[i] / denom[i];
    if (r < best.value) best = {r, static_cast<std::ptrdiff_t>(i)};
  }
  return best;
}

}  // namespace dtwin::kernels::scalar
