#pragma once

#include <functional>
#include <string>

namespace mtlface {

/// Warnings go to stderr unless a sink is installed.
using WarningSink = std::function<void(const std::string&)>;

void warn(const std::string& message);
/// Installs `sink` and returns the previous one (empty = stderr).
WarningSink set_warning_sink(WarningSink sink);

}  // namespace mtlface
