#include "chroma/log.hpp"

#include <atomic>
#include <cstdlib>
#include <string>

namespace chroma {

namespace {

LogLevel initial_level() {
    const char* env = std::getenv("CHROMA_LOG");
    if (!env) return LogLevel::Info;
    const std::string v(env);
    if (v == "debug") return LogLevel::Debug;
    if (v == "warn") return LogLevel::Warn;
    if (v == "error") return LogLevel::Error;
    if (v == "off") return LogLevel::Off;
    return LogLevel::Info;
}

std::atomic<LogLevel>& level_ref() {
    static std::atomic<LogLevel> level{initial_level()};
    return level;
}

}  // namespace

LogLevel log_level() { return level_ref().load(std::memory_order_relaxed); }
void set_log_level(LogLevel level) { level_ref().store(level, std::memory_order_relaxed); }

namespace detail {
std::mutex& log_mutex() {
    static std::mutex m;
    return m;
}
}  // namespace detail

}  // namespace chroma
