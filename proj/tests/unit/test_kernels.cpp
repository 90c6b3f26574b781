#include <gtest/gtest.h>

#include <bit>
#include <cmath>
#include <limits>
#include <random>
#include <vector>

#include "dtwin/kernels.hpp"

namespace k = dtwin::kernels;

namespace {

using Vec = std::vector<double>;

bool same_bits(double a, double b) {
  if (std::isnan(a) && std::isnan(b)) return true;
  return std::bit_cast<std::uint64_t>(a) == std::bit_cast<std::uint64_t>(b);
}

void expect_same(const Vec& a, const Vec& b) {
  ASSERT_EQ(a.size(), b.size());
  for (std::size_t i = 0; i < a.size(); ++i) EXPECT_TRUE(same_bits(a[i], b[i])) << "index " << i << ": " << a[i] << " vs " << b[i];
}

Vec random_vec(std::mt19937_64& rng, std::size_t n, bool specials) {
  std::normal_distribution<double> nd(0.0, 3.0);
  std::uniform_int_distribution<int> pick(0, 19);
  Vec v(n);
  for (auto& x : v) {
    x = nd(rng);
    if (!specials) continue;
    switch (pick(rng)) {
      case 0: x = 0.0; break;
      case 1: x = -0.0; break;
      case 2: x = std::numeric_limits<double>::quiet_NaN(); break;
      case 3: x = std::numeric_limits<double>::infinity(); break;
      case 4: x = std::numeric_limits<double>::denorm_min(); break;
      default: break;
    }
  }
  return v;
}

class KernelEquivalence : public ::testing::TestWithParam<bool> {
 protected:
  void SetUp() override {
    if (!k::isa_supported(k::Isa::avx2)) GTEST_SKIP() << "AVX2 not available";
  }
};

}  // namespace

TEST_P(KernelEquivalence, ElementwiseKernelsMatchBitForBit) {
  std::mt19937_64 rng(11);
  const bool specials = GetParam();
  for (std::size_t n = 0; n <= 67; ++n) {
    const Vec a = random_vec(rng, n, specials), b = random_vec(rng, n, specials), c = random_vec(rng, n, specials);
    Vec s1(n), s2(n);

    k::scalar::combine(s1, a, b, -0.37);
    k::avx2::combine(s2, a, b, -0.37);
    expect_same(s1, s2);

    k::scalar::affine2(s1, a, b, 1.3e-2, c, -7.5);
    k::avx2::affine2(s2, a, b, 1.3e-2, c, -7.5);
    expect_same(s1, s2);

    k::scalar::scale_offset(s1, a, -1.0, 1.06);
    k::avx2::scale_offset(s2, a, -1.0, 1.06);
    expect_same(s1, s2);

    k::scalar::clamped_difference(s1, a, b);
    k::avx2::clamped_difference(s2, a, b);
    expect_same(s1, s2);

    k::scalar::floored_scale(s1, a, 0.8, 0.005);
    k::avx2::floored_scale(s2, a, 0.8, 0.005);
    expect_same(s1, s2);

    Vec sigma = c;
    for (auto& x : sigma) x = std::fabs(x) + 0.1;
    k::scalar::weighted_residuals(s1, a, b, sigma);
    k::avx2::weighted_residuals(s2, a, b, sigma);
    expect_same(s1, s2);
  }
}

TEST_P(KernelEquivalence, MinPositiveRatioMatches) {
  std::mt19937_64 rng(12);
  const bool specials = GetParam();
  for (std::size_t n = 0; n <= 67; ++n) {
    for (int rep = 0; rep < 5; ++rep) {
      const Vec num = random_vec(rng, n, specials), den = random_vec(rng, n, specials);
      const k::MinRatio r1 = k::scalar::min_positive_ratio(num, den);
      const k::MinRatio r2 = k::avx2::min_positive_ratio(num, den);
      EXPECT_TRUE(same_bits(r1.value, r2.value)) << r1.value << " vs " << r2.value;
      EXPECT_EQ(r1.index, r2.index);
    }
  }
}

INSTANTIATE_TEST_SUITE_P(Inputs, KernelEquivalence, ::testing::Values(false, true));

TEST(KernelEquivalence, MinPositiveRatioTiesPickFirstIndex) {
  if (!k::isa_supported(k::Isa::avx2)) GTEST_SKIP();
  const Vec num(19, 2.0), den(19, 4.0);
  EXPECT_EQ(k::avx2::min_positive_ratio(num, den).index, 0);
  EXPECT_EQ(k::scalar::min_positive_ratio(num, den).index, 0);
}

TEST(KernelScalar, ReferenceSemantics) {
  const Vec a{1.0, 5.0, std::nan("")}, b{2.0, 3.0, 1.0};
  Vec out(3);
  k::scalar::clamped_difference(out, a, b);
  EXPECT_EQ(out, (Vec{0.0, 2.0, 0.0}));
  k::scalar::floored_scale(out, Vec{-10.0, 1.0, 0.0}, 2.0, 0.5);
  EXPECT_EQ(out, (Vec{5.0, 1.0, 1.0}));
  const k::MinRatio r = k::scalar::min_positive_ratio(Vec{1.0, 3.0, 0.5}, Vec{-1.0, 2.0, 0.0});
  EXPECT_EQ(r.index, 1);
  EXPECT_DOUBLE_EQ(r.value, 1.5);
  const k::MinRatio none = k::scalar::min_positive_ratio(Vec{1.0}, Vec{0.0});
  EXPECT_EQ(none.index, -1);
  EXPECT_TRUE(std::isinf(none.value));
}

TEST(KernelDispatch, ForceAndReset) {
  k::force_isa(k::Isa::scalar);
  EXPECT_EQ(k::active_isa(), k::Isa::scalar);
  Vec out(5);
  k::scale_offset(out, Vec{1, 2, 3, 4, 5}, 2.0, 1.0);
  EXPECT_EQ(out, (Vec{3, 5, 7, 9, 11}));
  k::reset_isa();
  if (k::isa_supported(k::Isa::avx2)) {
    EXPECT_EQ(k::active_isa(), k::Isa::avx2);
    k::scale_offset(out, Vec{1, 2, 3, 4, 5}, 2.0, 1.0);
    EXPECT_EQ(out, (Vec{3, 5, 7, 9, 11}));
  }
  EXPECT_STREQ(k::isa_name(k::Isa::avx2), "avx2");
}

TEST(KernelDispatch, SizeMismatchThrows) {
  Vec out(3);
  EXPECT_THROW(k::combine(out, Vec{1, 2}, Vec{1, 2, 3}, 1.0), std::invalid_argument);
  EXPECT_THROW(k::min_positive_ratio(Vec{1}, Vec{1, 2}), std::invalid_argument);
}
