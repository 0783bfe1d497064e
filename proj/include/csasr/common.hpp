#pragma once

#include <cmath>
#include <cstdint>
#include <limits>
#include <stdexcept>
#include <string>

namespace csasr {

inline constexpr double kNegInf = -std::numeric_limits<double>::infinity();

// Malformed input files, bad manifests, inconsistent vocabularies.
class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Non-finite losses or gradients.
class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

enum class Lang : std::uint8_t { CH, EN, SPECIAL };

// Frame-level language label.
enum class FrameLid : std::uint8_t { CH = 0, EN = 1, SIL = 2 };
inline constexpr int kNumFrameLid = 3;

inline double log_add(double a, double b) {
  if (a == kNegInf) return b;
  if (b == kNegInf) return a;
  if (a < b) std::swap(a, b);
  return a + std::log1p(std::exp(b - a));
}

char frame_lid_code(FrameLid lid);
FrameLid frame_lid_from_code(char code);

// 64-bit FNV-1a, stable across platforms.
std::uint64_t fnv1a64(const std::string& data);

}  // namespace csasr
