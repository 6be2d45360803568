#pragma once

#include <atomic>
#include <functional>
#include <memory>
#include <string>

namespace musiscene::corpus {

/// A captioning or LLM endpoint. The payload is a media locator for
/// captioner backends and a full prompt for LLM backends; the response is
/// plain text. Failures must surface as exceptions, never empty strings.
class CaptionerBackend {
public:
    virtual ~CaptionerBackend() = default;
    virtual std::string id() const = 0;
    virtual std::string request(const std::string& payload) = 0;
};

struct RetryPolicy {
    int attempts = 3;
    int base_delay_ms = 100; // doubles per attempt
};

/// Runs request() under the retry policy, rethrowing the last failure.
std::string request_with_retries(CaptionerBackend& backend, const std::string& payload,
                                 const RetryPolicy& policy = {});

/// Deterministic offline captioner: response is a pure function of the
/// payload. Counts requests so tests can assert cache behavior.
class StubCaptioner final : public CaptionerBackend {
public:
    /// `render` defaults to "<prefix> for <payload>".
    StubCaptioner(std::string id, std::string prefix,
                  std::function<std::string(const std::string&)> render = nullptr);
    std::string id() const override { return id_; }
    std::string request(const std::string& payload) override;

    long long calls() const { return calls_.load(); }

private:
    std::string id_;
    std::function<std::string(const std::string&)> render_;
    std::atomic<long long> calls_{0};
};

/// Always throws; `fail_first_n` < 0 means fail forever.
class FailingCaptioner final : public CaptionerBackend {
public:
    FailingCaptioner(std::string id, int fail_first_n = -1,
                     std::string fallback_response = "recovered response")
        : id_(std::move(id)), fail_first_n_(fail_first_n),
          fallback_(std::move(fallback_response)) {}
    std::string id() const override { return id_; }
    std::string request(const std::string& payload) override;

    long long calls() const { return calls_.load(); }

private:
    std::string id_;
    int fail_first_n_;
    std::string fallback_;
    std::atomic<long long> calls_{0};
};

} // namespace musiscene::corpus
