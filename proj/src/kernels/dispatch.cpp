#include <atomic>
#include <stdexcept>
#include <string>

#include "dtwin/kernels.hpp"

namespace dtwin::kernels {

namespace {

Isa detect() noexcept {
#if defined(__x86_64__) || defined(_M_X64)
  __builtin_cpu_init();
  if (__builtin_cpu_supports("avx2") && __builtin_cpu_supports("fma")) return Isa::avx2;
#endif
  return Isa::scalar;
}

std::atomic<Isa>& selected() {
  static std::atomic<Isa> isa{detect()};
  return isa;
}

void check_sizes(std::size_t out, std::size_t in) {
  if (out != in) throw std::invalid_argument("kernel operand size mismatch");
}

}  // namespace

bool isa_supported(Isa isa) noexcept { return isa == Isa::scalar || detect() == Isa::avx2; }

Isa active_isa() noexcept { return selected().load(std::memory_order_relaxed); }

void force_isa(Isa isa) {
  if (!isa_supported(isa)) throw std::runtime_error(std::string("instruction set not supported: ") + isa_name(isa));
  selected().store(isa, std::memory_order_relaxed);
}

void reset_isa() noexcept { selected().store(detect(), std::memory_order_relaxed); }

const char* isa_name(Isa isa) noexcept { return isa == Isa::avx2 ? "avx2" : "scalar"; }

void combine(std::span<double> out, std::span<const double> a, std::span<const double> b, double cb) {
  check_sizes(out.size(), a.size());
  check_sizes(out.size(), b.size());
  active_isa() == Isa::avx2 ? avx2::combine(out, a, b, cb) : scalar::combine(out, a, b, cb);
}

void affine2(std::span<double> out, std::span<const double> base, std::span<const double> a, double ca,
             std::span<const double> b, double cb) {
  check_sizes(out.size(), base.size());
  check_sizes(out.size(), a.size());
  check_sizes(out.size(), b.size());
  active_isa() == Isa::avx2 ? avx2::affine2(out, base, a, ca, b, cb) : scalar::affine2(out, base, a, ca, b, cb);
}

void scale_offset(std::span<double> out, std::span<const double> x, double scale, double offset) {
  check_sizes(out.size(), x.size());
  active_isa() == Isa::avx2 ? avx2::scale_offset(out, x, scale, offset) : scalar::scale_offset(out, x, scale, offset);
}

void clamped_difference(std::span<double> out, std::span<const double> a, std::span<const double> b) {
  check_sizes(out.size(), a.size());
  check_sizes(out.size(), b.size());
  active_isa() == Isa::avx2 ? avx2::clamped_difference(out, a, b) : scalar::clamped_difference(out, a, b);
}

void floored_scale(std::span<double> out, std::span<const double> x, double floor, double k) {
  check_sizes(out.size(), x.size());
  active_isa() == Isa::avx2 ? avx2::floored_scale(out, x, floor, k) : scalar::floored_scale(out, x, floor, k);
}

void weighted_residuals(std::span<double> out, std::span<const double> h, std::span<const double> z,
                        std::span<const double> sigma) {
  check_sizes(out.size(), h.size());
  check_sizes(out.size(), z.size());
  check_sizes(out.size(), sigma.size());
  active_isa() == Isa::avx2 ? avx2::weighted_residuals(out, h, z, sigma) : scalar::weighted_residuals(out, h, z, sigma);
}

MinRatio min_positive_ratio(std::span<const double> numer, std::span<const double> denom) {
  check_sizes(numer.size(), denom.size());
  return active_isa() == Isa::avx2 ? avx2::min_positive_ratio(numer, denom) : scalar::min_positive_ratio(numer, denom);
}

}  // namespace dtwin::kernels
