#include "nd/gesture.hpp"

#include "nd/error.hpp"

namespace nd {

GestureLabel GestureLabel::parse(std::string_view text) {
  if (text.size() != kDofCount) throw DataError("gesture '" + std::string(text) + "' must have 6 characters");
  GestureLabel g;
  for (std::size_t d = 0; d < kDofCount; ++d) {
    if (text[d] != '0' && text[d] != '1') throw DataError("gesture '" + std::string(text) + "' must contain only 0/1");
    g.set(d, text[d] == '1');
  }
  return g;
}

std::string GestureLabel::str() const {
  std::string s(kDofCount, '0');
  for (std::size_t d = 0; d < kDofCount; ++d) s[d] = flexed(d) ? '1' : '0';
  return s;
}

}  // namespace nd
