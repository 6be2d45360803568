#pragma once

#include <string>

namespace musiscene::log {

enum class Format { text, json };

void set_format(Format f);
void set_quiet(bool quiet);

/// One line to stderr: `2024-01-01T00:00:00Z INFO msg` or, in json mode,
/// `{"ts":"...","level":"info","msg":"..."}`.
void info(const std::string& msg);
void warn(const std::string& msg);
void error(const std::string& msg);

} // namespace musiscene::log
