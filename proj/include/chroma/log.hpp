#pragma once

#include <iostream>
#include <mutex>
#include <sstream>
#include <string_view>
#include <utility>

namespace chroma {

enum class LogLevel { Debug = 0, Info = 1, Warn = 2, Error = 3, Off = 4 };

LogLevel log_level();
void set_log_level(LogLevel level);

namespace detail {
std::mutex& log_mutex();
}

template <typename... Args>
void log(LogLevel level, Args&&... args) {
    if (level < log_level()) return;
    static constexpr std::string_view tags[] = {"debug", "info", "warn", "error"};
    std::ostringstream os;
    os << "[" << tags[static_cast<int>(level)] << "] ";
    (os << ... << args);
    os << '\n';
    std::lock_guard<std::mutex> lock(detail::log_mutex());
    std::cerr << os.str();
}

template <typename... Args>
void log_info(Args&&... args) { log(LogLevel::Info, std::forward<Args>(args)...); }
template <typename... Args>
void log_warn(Args&&... args) { log(LogLevel::Warn, std::forward<Args>(args)...); }
template <typename... Args>
void log_debug(Args&&... args) { log(LogLevel::Debug, std::forward<Args>(args)...); }

}  // namespace chroma
