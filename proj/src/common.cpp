#include "csasr/common.hpp"

namespace csasr {

char frame_lid_code(FrameLid lid) {
  switch (lid) {
    case FrameLid::CH: return 'C';
    case FrameLid::EN: return 'E';
    case FrameLid::SIL: return 'S';
  }
  return '?';
}

FrameLid frame_lid_from_code(char code) {
  switch (code) {
    case 'C': return FrameLid::CH;
    case 'E': return FrameLid::EN;
    case 'S': return FrameLid::SIL;
    default: throw DataError(std::string("unknown frame LID code '") + code + "'");
  }
}

std::uint64_t fnv1a64(const std::string& data) {
  std::uint64_t h = 14695981039346656037ull;
  for (unsigned char c : data) {
    h ^= c;
    h *= 1099511628211ull;
  }
  return h;
}

}  // namespace csasr
