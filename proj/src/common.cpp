#include "common.hpp"

#include <atomic>
#include <mutex>

namespace hpan {

namespace {

std::atomic<int> g_level{-1};

LogLevel level_from_env() {
    const char* env = std::getenv("HPAN_LOG");
    if (!env) return LogLevel::error;
    std::string v(env);
    if (v == "debug") return LogLevel::debug;
    if (v == "info") return LogLevel::info;
    return LogLevel::error;
}

}  // namespace

LogLevel log_level() {
    int lv = g_level.load(std::memory_order_relaxed);
    if (lv < 0) {
        lv = int(level_from_env());
        g_level.store(lv, std::memory_order_relaxed);
    }
    return LogLevel(lv);
}

void set_log_level(LogLevel level) {
    g_level.store(int(level), std::memory_order_relaxed);
}

void log_message(LogLevel level, const std::string& message) {
    if (int(level) > int(log_level())) return;
    static std::mutex mu;
    std::lock_guard<std::mutex> lock(mu);
    const char* tag = level == LogLevel::error ? "error"
                      : level == LogLevel::info ? "info"
                                                : "debug";
    std::fprintf(stderr, "[hpan %s] %s\n", tag, message.c_str());
}

}  // namespace hpan
