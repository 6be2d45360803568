#pragma once

namespace musiscene::cli {

/// Full command-line entry point, callable in-process for tests.
/// Returns 0 on success, 1 on runtime failure, 2 on usage errors.
int run(int argc, const char* const* argv);

} // namespace musiscene::cli
