#pragma once

// Elementwise numeric kernels used by the voltage-prediction, export-limit,
// tolerance and residual code paths. Each kernel has a scalar reference and an
// AVX2/FMA variant; the dispatching entry points pick one at runtime. Both
// variants round identically (fused multiply-add in both, no reassociated
// reductions), so results are bit-for-bit equal.

#include <cstddef>
#include <span>

namespace dtwin::kernels {

enum class Isa { scalar, avx2 };

bool isa_supported(Isa isa) noexcept;
Isa active_isa() noexcept;
/// Pins dispatch to `isa` (tests, benchmarking). Throws if unsupported.
void force_isa(Isa isa);
/// Back to automatic CPU detection.
void reset_isa() noexcept;
const char* isa_name(Isa isa) noexcept;

struct MinRatio {
  double value;          // +inf when no denominator is positive
  std::ptrdiff_t index;  // first index attaining the minimum, -1 if none
};

// out[i] = a[i] + cb * b[i]
void combine(std::span<double> out, std::span<const double> a, std::span<const double> b, double cb);
// out[i] = base[i] + ca * a[i] + cb * b[i]
void affine2(std::span<double> out, std::span<const double> base, std::span<const double> a, double ca,
             std::span<const double> b, double cb);
// out[i] = x[i] * scale + offset
void scale_offset(std::span<double> out, std::span<const double> x, double scale, double offset);
// out[i] = max(a[i] - b[i], 0); NaN differences map to 0
void clamped_difference(std::span<double> out, std::span<const double> a, std::span<const double> b);
// out[i] = k * max(|x[i]|, floor)
void floored_scale(std::span<double> out, std::span<const double> x, double floor, double k);
// out[i] = (h[i] - z[i]) / sigma[i]
void weighted_residuals(std::span<double> out, std::span<const double> h, std::span<const double> z,
                        std::span<const double> sigma);
// min over {i : denom[i] > 0} of numer[i] / denom[i]
MinRatio min_positive_ratio(std::span<const double> numer, std::span<const double> denom);

#define DTWIN_KERNEL_DECLS                                                                                     \
  void combine(std::span<double>, std::span<const double>, std::span<const double>, double);                  \
  void affine2(std::span<double>, std::span<const double>, std::span<const double>, double,                   \
               std::span<const double>, double);                                                               \
  void scale_offset(std::span<double>, std::span<const double>, double, double);                              \
  void clamped_difference(std::span<double>, std::span<const double>, std::span<const double>);               \
  void floored_scale(std::span<double>, std::span<const double>, double, double);                             \
  void weighted_residuals(std::span<double>, std::span<const double>, std::span<const double>,                \
                          std::span<const double>);                                                            \
  MinRatio min_positive_ratio(std::span<const double>, std::span<const double>);

namespace scalar {
DTWIN_KERNEL_DECLS
}
namespace avx2 {
DTWIN_KERNEL_DECLS
}

#undef DTWIN_KERNEL_DECLS

}  // namespace dtwin::kernels
