#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <string>
#include <string_view>

namespace nd {

inline constexpr std::size_t kDofCount = 6;
inline constexpr std::array<std::string_view, kDofCount> kDofNames = {"thumb", "index", "middle", "ring", "little", "wrist"};

// Flex/rest state of the six degrees of freedom. Character d of the string
// form and bit d of the mask both describe DOF d (thumb first, wrist last).
class GestureLabel {
 public:
  constexpr GestureLabel() = default;

  static GestureLabel parse(std::string_view text);
  static constexpr GestureLabel from_mask(std::uint8_t mask) { return GestureLabel(static_cast<std::uint8_t>(mask & 0x3F)); }

  constexpr bool flexed(std::size_t dof) const { return (bits_ >> dof) & 1U; }
  constexpr void set(std::size_t dof, bool flex) {
    bits_ = static_cast<std::uint8_t>(flex ? (bits_ | (1U << dof)) : (bits_ & ~(1U << dof)));
  }
  constexpr std::uint8_t mask() const { return bits_; }
  constexpr bool is_rest() const { return bits_ == 0; }
  std::string str() const;

  friend constexpr bool operator==(GestureLabel a, GestureLabel b) { return a.bits_ == b.bits_; }
  friend constexpr auto operator<=>(GestureLabel a, GestureLabel b) { return a.bits_ <=> b.bits_; }

 private:
  constexpr explicit GestureLabel(std::uint8_t bits) : bits_(bits) {}
  std::uint8_t bits_ = 0;
};

inline constexpr GestureLabel kRest{};

}  // namespace nd
