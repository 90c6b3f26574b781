#include <limits>

#include "dtwin/kernels.hpp"

#if defined(__x86_64__) || defined(_M_X64)
#include <immintrin.h>
#define DTWIN_HAVE_X86 1
#define DTWIN_AVX2 __attribute__((target("avx2,fma")))
#else
#define DTWIN_HAVE_X86 0
#define DTWIN_AVX2
#endif

namespace dtwin::kernels::avx2 {

#if DTWIN_HAVE_X86

DTWIN_AVX2 void combine(std::span<double> out, std::span<const double> a, std::span<const double> b, double cb) {
  const std::size_t n = out.size();
  const __m256d vc = _mm256_set1_pd(cb);
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    const __m256d r = _mm256_fmadd_pd(vc, _mm256_loadu_pd(&b[i]), _mm256_loadu_pd(&a[i]));
    _mm256_storeu_pd(&out[i], r);
  }
  scalar::combine(out.subspan(i), a.subspan(i), b.subspan(i), cb);
}

DTWIN_AVX2 void affine2(std::span<double> out, std::span<const double> base, std::span<const double> a, double ca,
                        std::span<const double> b, double cb) {
  const std::size_t n = out.size();
  const __m256d va = _mm256_set1_pd(ca);
  const __m256d vb = _mm256_set1_pd(cb);
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    __m256d r = _mm256_fmadd_pd(va, _mm256_loadu_pd(&a[i]), _mm256_loadu_pd(&base[i]));
    r = _mm256_fmadd_pd(vb, _mm256_loadu_pd(&b[i]), r);
    _mm256_storeu_pd(&out[i], r);
  }
  scalar::affine2(out.subspan(i), base.subspan(i), a.subspan(i), ca, b.subspan(i), cb);
}

DTWIN_AVX2 void scale_offset(std::span<double> out, std::span<const double> x, double scale, double offset) {
  const std::size_t n = out.size();
  const __m256d vs = _mm256_set1_pd(scale);
  const __m256d vo = _mm256_set1_pd(offset);
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) _mm256_storeu_pd(&out[i], _mm256_fmadd_pd(_mm256_loadu_pd(&x[i]), vs, vo));
  scalar::scale_offset(out.subspan(i), x.subspan(i), scale, offset);
}

DTWIN_AVX2 void clamped_difference(std::span<double> out, std::span<const double> a, std::span<const double> b) {
  const std::size_t n = out.size();
  const __m256d zero = _mm256_setzero_pd();
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    const __m256d d = _mm256_sub_pd(_mm256_loadu_pd(&a[i]), _mm256_loadu_pd(&b[i]));
    // max_pd returns the second operand when either is NaN, matching the scalar rule
    _mm256_storeu_pd(&out[i], _mm256_max_pd(d, zero));
  }
  scalar::clamped_difference(out.subspan(i), a.subspan(i), b.subspan(i));
}

DTWIN_AVX2 void floored_scale(std::span<double> out, std::span<const double> x, double floor, double k) {
  const std::size_t n = out.size();
  const __m256d sign = _mm256_set1_pd(-0.0);
  const __m256d vf = _mm256_set1_pd(floor);
  const __m256d vk = _mm256_set1_pd(k);
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    const __m256d ax = _mm256_andnot_pd(sign, _mm256_loadu_pd(&x[i]));
    _mm256_storeu_pd(&out[i], _mm256_mul_pd(vk, _mm256_max_pd(ax, vf)));
  }
  scalar::floored_scale(out.subspan(i), x.subspan(i), floor, k);
}

DTWIN_AVX2 void weighted_residuals(std::span<double> out, std::span<const double> h, std::span<const double> z,
                                   std::span<const double> sigma) {
  const std::size_t n = out.size();
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    const __m256d d = _mm256_sub_pd(_mm256_loadu_pd(&h[i]), _mm256_loadu_pd(&z[i]));
    _mm256_storeu_pd(&out[i], _mm256_div_pd(d, _mm256_loadu_pd(&sigma[i])));
  }
  scalar::weighted_residuals(out.subspan(i), h.subspan(i), z.subspan(i), sigma.subspan(i));
}

DTWIN_AVX2 MinRatio min_positive_ratio(std::span<const double> numer, std::span<const double> denom) {
  const std::size_t n = numer.size();
  const double inf = std::numeric_limits<double>::infinity();
  const __m256d vinf = _mm256_set1_pd(inf);
  const __m256d zero = _mm256_setzero_pd();
  __m256d best = vinf;
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    const __m256d d = _mm256_loadu_pd(&denom[i]);
    const __m256d r = _mm256_div_pd(_mm256_loadu_pd(&numer[i]), d);
    const __m256d keep = _mm256_cmp_pd(d, zero, _CMP_GT_OQ);
    const __m256d cand = _mm256_blendv_pd(vinf, r, keep);
    // NaN candidates lose: min_pd returns the second operand when unordered
    best = _mm256_min_pd(cand, best);
  }
  alignas(32) double lanes[4];
  _mm256_store_pd(lanes, best);
  double value = inf;
  for (double v : lanes)
    if (v < value) value = v;
  const MinRatio tail = scalar::min_positive_ratio(numer.subspan(i), denom.subspan(i));
  if (tail.value < value) value = tail.value;
  if (!(value < inf)) return {inf, -1};
  // first index attaining the minimum, same tie rule as the scalar loop
  for (std::size_t j = 0; j < n; ++j)
    if (denom[j] > 0.0 && numer[j] / denom[j] == value) return {value, static_cast<std::ptrdiff_t>(j)};
  return {value, -1};
}

#else

void combine(std::span<double> out, std::span<const double> a, std::span<const double> b, double cb) {
  scalar::combine(out, a, b, cb);
}
void affine2(std::span<double> out, std::span<const double> base, std::span<const double> a, double ca,
             std::span<const double> b, double cb) {
  scalar::affine2(out, base, a, ca, b, cb);
}
void scale_offset(std::span<double> out, std::span<const double> x, double scale, double offset) {
  scalar::scale_offset(out, x, scale, offset);
}
void clamped_difference(std::span<double> out, std::span<const double> a, std::span<const double> b) {
  scalar::clamped_difference(out, a, b);
}
void floored_scale(std::span<double> out, std::span<const double> x, double floor, double k) {
  scalar::floored_scale(out, x, floor, k);
}
void weighted_residuals(std::span<double> out, std::span<const double> h, std::span<const double> z,
                        std::span<const double> sigma) {
  scalar::weighted_residuals(out, h, z, sigma);
}
MinRatio min_positive_ratio(std::span<const double> numer, std::span<const double> denom) {
  return scalar::min_positive_ratio(numer, denom);
}

#endif

}  // namespace dtwin::kernels::avx2
