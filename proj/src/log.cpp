#include "vocmix/log.hpp"

#include <cstdlib>
#include <string>

namespace vocmix {

LogLevel log_level() {
  static const LogLevel level = [] {
    const char* env = std::getenv("VOCAB_MIXIN_LOG");
    if (env == nullptr) return LogLevel::kWarn;
    const std::string value(env);
    if (value == "quiet" || value == "0") return LogLevel::kQuiet;
    if (value == "error" || value == "1") return LogLevel::kError;
    if (value == "warn" || value == "2") return LogLevel::kWarn;
    if (value == "info" || value == "3") return LogLevel::kInfo;
    if (value == "debug" || value == "4") return LogLevel::kDebug;
    return LogLevel::kWarn;
  }();
  return level;
}

}  // namespace vocmix
