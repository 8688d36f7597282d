// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>

#include "ecaf/rng.hpp"
#include "ecaf/tensor.hpp"

namespace ecaf {

/// U(-1/sqrt(fan_in), 1/sqrt(fan_in)), the usual default for conv layers.
template <typename T>
Tensor<T> kaiming_uniform(Shape shape, Index fan_in, Rng& rng, double gain = 1.0) {
  Tensor<T> t(std::move(shape));
  const double bound = gain / std::sqrt(static_cast<double>(fan_in));
  for (auto& v : t.values()) v = static_cast<T>(rng.uniform(-bound, bound));
  return t;
}

}  // namespace ecaf
