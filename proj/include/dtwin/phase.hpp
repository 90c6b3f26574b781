#pragma once

#include <array>
#include <complex>
#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

namespace dtwin {

using Complex = std::complex<double>;

enum class Phase : std::uint8_t { a = 0, b = 1, c = 2 };

inline constexpr std::array<Phase, 3> kAllPhases{Phase::a, Phase::b, Phase::c};

char phase_letter(Phase p);
int phase_index(Phase p);

/// Ordered subset of {a, b, c}. Always non-empty once constructed.
class PhaseSet {
 public:
  PhaseSet() = default;  // abc

  /// Parses "abc", "ab", "c", ... Rejects empty, duplicates and unknown letters.
  static PhaseSet parse(std::string_view text);
  static PhaseSet from_mask(std::uint8_t mask);

  bool contains(Phase p) const noexcept { return (mask_ >> phase_index(p)) & 1U; }
  std::size_t size() const noexcept;
  /// Position of `p` inside the set (0-based), -1 when absent.
  int position(Phase p) const noexcept;
  std::vector<Phase> phases() const;
  std::string to_string() const;
  std::uint8_t mask() const noexcept { return mask_; }
  bool is_three_phase() const noexcept { return mask_ == 0b111; }

  friend bool operator==(const PhaseSet&, const PhaseSet&) = default;

 private:
  std::uint8_t mask_ = 0b111;
};

/// Per-phase complex quantity indexed by phase; absent phases hold zero.
using PhaseComplex = std::array<Complex, 3>;
using PhaseReal = std::array<double, 3>;

}  // namespace dtwin
