#include "latentadv/logging.hpp"

#include <atomic>
#include <cstdlib>
#include <iostream>
#include <mutex>
#include <string_view>

namespace latentadv {

namespace {

LogLevel initial_level() {
  const char* env = std::getenv("LATENTADV_LOG");
  if (!env) return LogLevel::warning;
  const std::string_view v(env);
  if (v == "quiet") return LogLevel::quiet;
  if (v == "info") return LogLevel::info;
  if (v == "debug") return LogLevel::debug;
  return LogLevel::warning;
}

std::atomic<LogLevel>& level_ref() {
  static std::atomic<LogLevel> level{initial_level()};
  return level;
}

void emit(LogLevel level, std::string_view tag, const std::string& message) {
  if (static_cast<int>(level) > static_cast<int>(log_level())) return;
  static std::mutex mutex;
  std::lock_guard lock(mutex);
  std::cerr << "[latentadv " << tag << "] " << message << '\n';
}

}  // namespace

void set_log_level(LogLevel level) { level_ref().store(level); }
LogLevel log_level() { return level_ref().load(); }

void log_warning(const std::string& message) { emit(LogLevel::warning, "warn", message); }
void log_info(const std::string& message) { emit(LogLevel::info, "info", message); }
void log_debug(const std::string& message) { emit(LogLevel::debug, "debug", message); }

}  // namespace latentadv
