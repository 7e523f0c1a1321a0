#pragma once

#include <iostream>
#include <mutex>
#include <string>

namespace lcqa::log {

inline std::mutex& mutex() {
    static std::mutex m;
    return m;
}

inline void warn(const std::string& msg) {
    std::lock_guard<std::mutex> lock(mutex());
    std::cerr << "[warn] " << msg << "\n";
}

inline void info(const std::string& msg) {
    std::lock_guard<std::mutex> lock(mutex());
    std::cerr << "[info] " << msg << "\n";
}

}  // namespace lcqa::log
