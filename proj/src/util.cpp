#include "gpr/types.hpp"

#include <charconv>
#include <cstdio>
#include <cstdlib>
#include <cstring>
#include <mutex>

namespace gpr {

std::string format_double(double v) {
  char buf[32];
  auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

LogLevel log_level() {
  static LogLevel lvl = [] {
    const char* env = std::getenv("GPRAMPC_LOG");
    if (!env) return LogLevel::kWarn;
    if (std::strcmp(env, "error") == 0) return LogLevel::kError;
    if (std::strcmp(env, "warn") == 0) return LogLevel::kWarn;
    if (std::strcmp(env, "info") == 0) return LogLevel::kInfo;
    if (std::strcmp(env, "debug") == 0) return LogLevel::kDebug;
    return LogLevel::kWarn;
  }();
  return lvl;
}

void log_msg(LogLevel level, const std::string& msg) {
  if (level > log_level()) return;
  static std::mutex mu;
  static const char* names[] = {"error", "warn", "info", "debug"};
  std::lock_guard<std::mutex> lock(mu);
  std::fprintf(stderr, "[gprampc:%s] %s\n", names[static_cast<int>(level)],
               msg.c_str());
}

}  // namespace gpr
