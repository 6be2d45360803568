#include "musiscene/remote.hpp"

#include <nlohmann/json.hpp>

#include <httplib.h>

#include "musiscene/error.hpp"

namespace musiscene::remote {

namespace {

httplib::Client make_client(const std::string& base_url, int timeout_s) {
    httplib::Client client(base_url);
    client.set_connection_timeout(timeout_s, 0);
    client.set_read_timeout(timeout_s, 0);
    client.set_write_timeout(timeout_s, 0);
    return client;
}

} // namespace

HttpCaptionerBackend::HttpCaptionerBackend(std::string base_url, std::string route,
                                           int timeout_s)
    : base_url_(std::move(base_url)), route_(std::move(route)), timeout_s_(timeout_s) {
    require(!base_url_.empty(), "remote captioner: empty base url");
    require(!route_.empty() && route_.front() == '/',
            "remote captioner: route must start with '/'");
}

std::string HttpCaptionerBackend::id() const {
    return "http:" + base_url_ + route_;
}

std::string HttpCaptionerBackend::request(const std::string& payload) {
    httplib::Client client = make_client(base_url_, timeout_s_);
    const nlohmann::json body{{"payload", payload}};
    const httplib::Result res = client.Post(route_, body.dump(), "application/json");
    require(static_cast<bool>(res),
            "remote captioner " + id() + ": " + httplib::to_string(res.error()));
    require(res->status == 200, "remote captioner " + id() + ": HTTP " +
                                    std::to_string(res->status) + ": " + res->body);
    try {
        const nlohmann::json parsed = nlohmann::json::parse(res->body);
        return parsed.at("text").get<std::string>();
    } catch (const nlohmann::json::exception& e) {
        fail("remote captioner " + id() + ": malformed response: " + e.what());
    }
}

HttpMusicBackend::HttpMusicBackend(std::string base_url, int timeout_s)
    : base_url_(std::move(base_url)), timeout_s_(timeout_s) {
    require(!base_url_.empty(), "remote music backend: empty base url");
}

std::string HttpMusicBackend::id() const {
    return "http:" + base_url_ + "/generate";
}

AudioClip HttpMusicBackend::generate(const vbmg::MusicRequest& request) {
    httplib::Client client = make_client(base_url_, timeout_s_);
    const nlohmann::json body{{"caption", request.caption},
                              {"duration_s", request.duration_s},
                              {"seed", request.seed}};
    const httplib::Result res = client.Post("/generate", body.dump(), "application/json");
    require(static_cast<bool>(res),
            "remote music backend " + id() + ": " + httplib::to_string(res.error()));
    require(res->status == 200, "remote music backend " + id() + ": HTTP " +
                                    std::to_string(res->status) + ": " + res->body);
    return wav_from_bytes(res->body);
}

} // namespace musiscene::remote
