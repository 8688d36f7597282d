// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <functional>
#include <vector>

#include "ecaf/autodiff.hpp"

namespace ecaf {

/// Scalar-valued function of one input, expressed on a tape so the analytic
/// gradient can be taken by backward().
using ScalarFn = std::function<Var<double>(Tape<double>&, const Var<double>&)>;
/// Scalar-valued function of the parameters in a store.
using ParamLossFn = std::function<Var<double>(Tape<double>&)>;

struct GradCheckOptions {
  double step = 1e-4;
  /// Multiplies the analytic gradient before comparison (fault injection).
  double analytic_scale = 1.0;
  /// Fraction of elements to probe; 1 checks every element.
  double sample_fraction = 1.0;
  std::uint64_t sample_seed = 0;
};

struct GradCheckReport {
  double max_rel_error = 0.0;
  Index worst_index = -1;
  Index checked = 0;
};

/// Central differences in double carry round-off near 1e-11 for O(1) losses at
/// h = 1e-4, so gradients below this magnitude are compared on an absolute scale.
inline constexpr double kGradErrorFloor = 1e-6;

/// |a - c| / max(|a|, |c|, kGradErrorFloor).
double relative_error(double analytic, double numeric);

/// Compares backward() against central differences (f(x+h e_i) - f(x-h e_i)) / 2h
/// using relative_error per element.
/// Throws std::logic_error when two evaluations at the same x disagree.
GradCheckReport finite_diff_report(const ScalarFn& f, const Tensor<double>& x,
                                   const GradCheckOptions& opt = {});

double finite_diff_check(const ScalarFn& f, const Tensor<double>& x, double h = 1e-4);

/// Same check over every parameter in `store` (or a sampled subset); values are
/// perturbed in place and restored.
GradCheckReport finite_diff_params(ParamStore<double>& store, const ParamLossFn& f,
                                   const GradCheckOptions& opt = {});

}  // namespace ecaf
