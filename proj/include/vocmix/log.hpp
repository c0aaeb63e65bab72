#pragma once

#include <iostream>
#include <string_view>

namespace vocmix {

// Verbosity from VOCAB_MIXIN_LOG: quiet | error | warn | info | debug.
enum class LogLevel { kQuiet = 0, kError, kWarn, kInfo, kDebug };

LogLevel log_level();

inline void log(LogLevel level, std::string_view message) {
  if (static_cast<int>(level) <= static_cast<int>(log_level())) {
    std::cerr << "[vocmix] " << message << '\n';
  }
}

inline void log_info(std::string_view message) { log(LogLevel::kInfo, message); }
inline void log_warn(std::string_view message) { log(LogLevel::kWarn, message); }
inline void log_debug(std::string_view message) { log(LogLevel::kDebug, message); }

}  // namespace vocmix
