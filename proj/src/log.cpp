#include "musiscene/log.hpp"

#include <cstdio>
#include <ctime>
#include <mutex>

#include <nlohmann/json.hpp>

namespace musiscene::log {

namespace {

Format g_format = Format::text;
bool g_quiet = false;
std::mutex g_mutex;

std::string timestamp() {
    char buf[32];
    const std::time_t now = std::time(nullptr);
    std::tm tm{};
    gmtime_r(&now, &tm);
    std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", &tm);
    return buf;
}

void emit(const char* level, const std::string& msg) {
    // Errors always surface; quiet silences informational output only.
    if (g_quiet && level[0] != 'E') {
        return;
    }
    std::lock_guard<std::mutex> lock(g_mutex);
    if (g_format == Format::json) {
        nlohmann::json j{{"ts", timestamp()}, {"level", level}, {"msg", msg}};
        std::fprintf(stderr, "%s\n", j.dump().c_str());
    } else {
        std::fprintf(stderr, "%s %s %s\n", timestamp().c_str(), level, msg.c_str());
    }
}

} // namespace

void set_format(Format f) { g_format = f; }
void set_quiet(bool quiet) { g_quiet = quiet; }

void info(const std::string& msg) { emit("INFO", msg); }
void warn(const std::string& msg) { emit("WARN", msg); }
void error(const std::string& msg) { emit("ERROR", msg); }

} // namespace musiscene::log
