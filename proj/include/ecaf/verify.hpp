// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

namespace ecaf::verify {

struct Check {
  std::string name;
  bool passed = false;
  std::string detail;
};

struct CriterionResult {
  int id = 0;
  std::string title;
  bool passed = false;
  double seconds = 0;
  std::vector<Check> checks;
};

struct Options {
  /// Doubles conv2d's weight gradient for the duration of the run.
  bool plant_grad_bug = false;
  std::uint64_t seed = 0;
  /// Scratch directory for checkpoints and images; a temporary one when empty.
  std::string work_dir;
  /// Called after each check and each finished criterion; optional.
  std::function<void(const Check&)> on_check;
};

struct Criterion {
  int id;
  const char* title;
  /// Part of the quick suite run by `ecaformer verify`.
  bool quick;
};

/// All acceptance criteria in order.
const std::vector<Criterion>& criteria();

CriterionResult run_criterion(int id, const Options& opt);

/// Runs each listed criterion; an empty list runs them all.
std::vector<CriterionResult> run(const std::vector<int>& ids, const Options& opt);

/// Ids of the criteria marked quick.
std::vector<int> quick_ids();

/// Bounds pinned for the training criteria.
inline constexpr double kOverfitMinGainDb = 6.0;
inline constexpr double kOverfitMaxSeconds = 300.0;
inline constexpr int kOverfitIterations = 500;

}  // namespace ecaf::verify
