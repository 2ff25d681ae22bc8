#pragma once

#include <string>

namespace latentadv {

enum class LogLevel { quiet = 0, warning = 1, info = 2, debug = 3 };

// Process-wide threshold; LATENTADV_LOG=quiet|warning|info|debug sets the
// initial value.
void set_log_level(LogLevel level);
LogLevel log_level();

void log_warning(const std::string& message);
void log_info(const std::string& message);
void log_debug(const std::string& message);

}  // namespace latentadv
