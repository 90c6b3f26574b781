#include <bit>

#include "dtwin/errors.hpp"
#include "dtwin/phase.hpp"

namespace dtwin {

char phase_letter(Phase p) { return static_cast<char>('a' + static_cast<int>(p)); }

int phase_index(Phase p) { return static_cast<int>(p); }

PhaseSet PhaseSet::parse(std::string_view text) {
  if (text.empty()) throw InputError("phase set must not be empty");
  std::uint8_t mask = 0;
  for (char ch : text) {
    int idx = -1;
    switch (ch) {
      case 'a': case 'A': idx = 0; break;
      case 'b': case 'B': idx = 1; break;
      case 'c': case 'C': idx = 2; break;
      default: throw InputError("invalid phase letter '" + std::string(1, ch) + "' in \"" + std::string(text) + "\"");
    }
    if (mask & (1U << idx)) throw InputError("duplicate phase in \"" + std::string(text) + "\"");
    mask = static_cast<std::uint8_t>(mask | (1U << idx));
  }
  return from_mask(mask);
}

PhaseSet PhaseSet::from_mask(std::uint8_t mask) {
  if (mask == 0 || mask > 0b111) throw InputError("invalid phase mask");
  PhaseSet s;
  s.mask_ = mask;
  return s;
}

std::size_t PhaseSet::size() const noexcept { return static_cast<std::size_t>(std::popcount(mask_)); }

int PhaseSet::position(Phase p) const noexcept {
  if (!contains(p)) return -1;
  const unsigned below = mask_ & ((1U << phase_index(p)) - 1U);
  return std::popcount(below);
}

std::vector<Phase> PhaseSet::phases() const {
  std::vector<Phase> out;
  for (Phase p : kAllPhases)
    if (contains(p)) out.push_back(p);
  return out;
}

std::string PhaseSet::to_string() const {
  std::string s;
  for (Phase p : phases()) s.push_back(phase_letter(p));
  return s;
}

}  // namespace dtwin
