#pragma once

#include <filesystem>
#include <mutex>
#include <optional>
#include <string>

namespace musiscene::corpus {

/// Content-addressed response cache keyed by (backend identity, input).
/// Each entry is one JSON file named by the key digest. Storing different
/// content under an existing key is an error, never a silent overwrite.
class CaptionCache {
public:
    explicit CaptionCache(std::filesystem::path dir);

    static std::string key(const std::string& backend_id, const std::string& input);

    std::optional<std::string> lookup(const std::string& backend_id, const std::string& input);

    void store(const std::string& backend_id, const std::string& input,
               const std::string& output);

    const std::filesystem::path& dir() const { return dir_; }

private:
    std::filesystem::path entry_path(const std::string& digest) const;

    std::filesystem::path dir_;
    std::mutex mutex_;
};

} // namespace musiscene::corpus
