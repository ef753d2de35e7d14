#include "mtlface/core/log.hpp"

#include <iostream>
#include <mutex>

namespace mtlface {

namespace {
std::mutex g_mu;
WarningSink g_sink;
}  // namespace

void warn(const std::string& message) {
  std::lock_guard<std::mutex> lock(g_mu);
  if (g_sink)
    g_sink(message);
  else
    std::cerr << "warning: " << message << "\n";
}

WarningSink set_warning_sink(WarningSink sink) {
  std::lock_guard<std::mutex> lock(g_mu);
  std::swap(sink, g_sink);
  return sink;
}

}  // namespace mtlface
