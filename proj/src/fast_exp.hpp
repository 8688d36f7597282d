// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <bit>
#include <cstdint>

namespace ecaf::detail {

// Branch-free exp that GCC/Clang vectorize inside simd loops. Cody-Waite
// reduction x = k ln2 + r, |r| <= ln2/2, then a Taylor polynomial and an
// exponent-field scale. Relative error ~3e-16 (double), ~2e-7 (float).
// Arguments are saturated to the normal range.

inline double exp_approx(double x) {
  x = x < -708.0 ? -708.0 : (x > 709.0 ? 709.0 : x);
  constexpr double shift = 0x1.8p52;
  const double t = x * 1.4426950408889634 + shift;
  const double k = t - shift;
  const double r = x - k * 6.93147180369123816490e-01 - k * 1.90821492927058770002e-10;
  double p = 1.0 / 479001600.0;
  p = p * r + 1.0 / 39916800.0;
  p = p * r + 1.0 / 3628800.0;
  p = p * r + 1.0 / 362880.0;
  p = p * r + 1.0 / 40320.0;
  p = p * r + 1.0 / 5040.0;
  p = p * r + 1.0 / 720.0;
  p = p * r + 1.0 / 120.0;
  p = p * r + 1.0 / 24.0;
  p = p * r + 1.0 / 6.0;
  p = p * r + 0.5;
  p = p * r + 1.0;
  p = p * r + 1.0;
  const std::uint64_t bits = std::bit_cast<std::uint64_t>(t);
  return p * std::bit_cast<double>((bits + 1023) << 52);
}

inline float exp_approx(float x) {
  x = x < -87.0f ? -87.0f : (x > 88.0f ? 88.0f : x);
  constexpr float shift = 0x1.8p23f;
  const float t = x * 1.44269504f + shift;
  const float k = t - shift;
  const float r = x - k * 0.693145752f - k * 1.42860677e-06f;
  float p = 1.0f / 5040.0f;
  p = p * r + 1.0f / 720.0f;
  p = p * r + 1.0f / 120.0f;
  p = p * r + 1.0f / 24.0f;
  p = p * r + 1.0f / 6.0f;
  p = p * r + 0.5f;
  p = p * r + 1.0f;
  p = p * r + 1.0f;
  const std::uint32_t bits = std::bit_cast<std::uint32_t>(t);
  return p * std::bit_cast<float>((bits + 127) << 23);
}

}  // namespace ecaf::detail
