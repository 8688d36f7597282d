// SPDX-License-Identifier: Apache-2.0
#include "ecaf/log.hpp"

#include <iostream>
#include <mutex>

namespace ecaf {

namespace {

std::mutex sink_mutex;
WarningSink current_sink;

}  // namespace

WarningSink set_warning_sink(WarningSink sink) {
  std::lock_guard lock(sink_mutex);
  WarningSink previous = std::move(current_sink);
  current_sink = std::move(sink);
  return previous;
}

void warn(const std::string& message) {
  std::lock_guard lock(sink_mutex);
  if (current_sink)
    current_sink(message);
  else
    std::cerr << "warning: " << message << '\n';
}

}  // namespace ecaf
