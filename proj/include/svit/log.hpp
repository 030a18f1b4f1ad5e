#pragma once

#include <functional>
#include <iostream>
#include <string_view>

namespace svit {

using LogSink = std::function<void(std::string_view level, std::string_view message)>;

// Process-wide sink; tests swap it to capture warnings.
inline LogSink& log_sink() {
    static LogSink sink = [](std::string_view level, std::string_view message) {
        std::cerr << "[svit " << level << "] " << message << '\n';
    };
    return sink;
}

inline void log_warning(std::string_view message) {
    if (auto& s = log_sink()) s("warn", message);
}

inline void log_info(std::string_view message) {
    if (auto& s = log_sink()) s("info", message);
}

}  // namespace svit
