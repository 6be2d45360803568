#include "musiscene/caption_cache.hpp"

#include <nlohmann/json.hpp>

#include "musiscene/error.hpp"
#include "musiscene/fsio.hpp"
#include "musiscene/sha256.hpp"

namespace fs = std::filesystem;

namespace musiscene::corpus {

CaptionCache::CaptionCache(fs::path dir) : dir_(std::move(dir)) {
    fs::create_directories(dir_);
}

std::string CaptionCache::key(const std::string& backend_id, const std::string& input) {
    Sha256 h;
    h.update(backend_id);
    h.update("\0", 1);
    h.update(input);
    return h.hex_digest();
}

fs::path CaptionCache::entry_path(const std::string& digest) const {
    return dir_ / (digest + ".json");
}

std::optional<std::string> CaptionCache::lookup(const std::string& backend_id,
                                                const std::string& input) {
    std::lock_guard<std::mutex> lock(mutex_);
    const fs::path path = entry_path(key(backend_id, input));
    if (!fs::exists(path)) {
        return std::nullopt;
    }
    const nlohmann::json j = nlohmann::json::parse(read_file(path));
    require(j.value("backend", "") == backend_id && j.value("input", "") == input,
            "cache digest collision at " + path.string());
    return j.at("output").get<std::string>();
}

void CaptionCache::store(const std::string& backend_id, const std::string& input,
                         const std::string& output) {
    std::lock_guard<std::mutex> lock(mutex_);
    const fs::path path = entry_path(key(backend_id, input));
    if (fs::exists(path)) {
        const nlohmann::json existing = nlohmann::json::parse(read_file(path));
        // same key, same content: idempotent no-op; differing content is a
        // corruption signal and must not be overwritten
        require(existing.at("output").get<std::string>() == output,
                "cache conflict for backend " + backend_id + ": differing content under key " +
                    key(backend_id, input));
        return;
    }
    const nlohmann::json j{{"backend", backend_id}, {"input", input}, {"output", output}};
    atomic_write_file(path, j.dump());
}

} // namespace musiscene::corpus
