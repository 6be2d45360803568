#include "musiscene/caption_backends.hpp"

#include <chrono>
#include <thread>

#include "musiscene/error.hpp"

namespace musiscene::corpus {

std::string request_with_retries(CaptionerBackend& backend, const std::string& payload,
                                 const RetryPolicy& policy) {
    int delay_ms = policy.base_delay_ms;
    for (int attempt = 1;; ++attempt) {
        try {
            return backend.request(payload);
        } catch (const std::exception& e) {
            if (attempt >= policy.attempts) {
                fail("backend " + backend.id() + " failed after " + std::to_string(attempt) +
                     " attempts: " + e.what());
            }
            if (delay_ms > 0) {
                std::this_thread::sleep_for(std::chrono::milliseconds(delay_ms));
            }
            delay_ms *= 2;
        }
    }
}

StubCaptioner::StubCaptioner(std::string id, std::string prefix,
                             std::function<std::string(const std::string&)> render)
    : id_(std::move(id)), render_(std::move(render)) {
    if (!render_) {
        render_ = [prefix = std::move(prefix)](const std::string& payload) {
            return prefix + " for " + payload;
        };
    }
}

std::string StubCaptioner::request(const std::string& payload) {
    ++calls_;
    return render_(payload);
}

std::string FailingCaptioner::request(const std::string&) {
    const long long n = ++calls_;
    if (fail_first_n_ < 0 || n <= fail_first_n_) {
        fail("backend " + id_ + " is unreachable (call " + std::to_string(n) + ")");
    }
    return fallback_;
}

} // namespace musiscene::corpus
