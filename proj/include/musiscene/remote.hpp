#pragma once

#include <string>

#include "musiscene/caption_backends.hpp"
#include "musiscene/vbmg.hpp"

namespace musiscene::remote {

/// Captioner/LLM served over HTTP: POST {"payload": "..."} to `route`,
/// response {"text": "..."}. Interchangeable with in-process stubs.
class HttpCaptionerBackend final : public corpus::CaptionerBackend {
public:
    /// `base_url` like "http://host:port"; `route` like "/caption".
    HttpCaptionerBackend(std::string base_url, std::string route,
                         int timeout_s = 30);
    std::string id() const override;
    std::string request(const std::string& payload) override;

private:
    std::string base_url_;
    std::string route_;
    int timeout_s_;
};

/// Text-to-music service: POST {"caption", "duration_s", "seed"} to /generate,
/// response body is a WAV payload.
class HttpMusicBackend final : public vbmg::MusicBackend {
public:
    explicit HttpMusicBackend(std::string base_url, int timeout_s = 120);
    std::string id() const override;
    AudioClip generate(const vbmg::MusicRequest& request) override;

private:
    std::string base_url_;
    int timeout_s_;
};

} // namespace musiscene::remote
