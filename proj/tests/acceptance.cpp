// SPDX-License-Identifier: Apache-2.0
// Runs every acceptance criterion and prints one PASS/FAIL line per criterion.
// Exit status is 0 only when all of them pass.
#include <cstdio>
#include <cstdlib>
#include <string>
#include <vector>

#include "ecaf/verify.hpp"

int main(int argc, char** argv) {
  std::vector<int> ids;
  for (int i = 1; i < argc; ++i) ids.push_back(std::atoi(argv[i]));
  if (ids.empty())
    for (const auto& c : ecaf::verify::criteria()) ids.push_back(c.id);

  ecaf::verify::Options opt;
  opt.on_check = [](const ecaf::verify::Check& c) {
    std::printf("    %s  %s: %s\n", c.passed ? "pass" : "FAIL", c.name.c_str(), c.detail.c_str());
    std::fflush(stdout);
  };

  bool all = true;
  for (int id : ids) {
    const auto r = ecaf::verify::run_criterion(id, opt);
    std::printf("%s criterion %d: %s (%.1f s)\n", r.passed ? "PASS" : "FAIL", r.id, r.title.c_str(), r.seconds);
    std::fflush(stdout);
    all = all && r.passed;
  }
  std::printf("%s\n", all ? "all acceptance criteria passed" : "some acceptance criteria failed");
  return all ? 0 : 1;
}
