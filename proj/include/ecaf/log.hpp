// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <functional>
#include <string>

namespace ecaf {

/// Receives library warnings. The default sink prints "warning: <msg>" to stderr.
using WarningSink = std::function<void(const std::string&)>;

/// Installs `sink` (or restores the default when empty); returns the previous sink.
WarningSink set_warning_sink(WarningSink sink);
void warn(const std::string& message);

}  // namespace ecaf
