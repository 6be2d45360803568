#pragma once

#include <filesystem>
#include <string>

#include <nlohmann/json.hpp>

#include "musiscene/adapter.hpp"

namespace musiscene::model {

/// Serialized training artifact. Only adapter state is stored; the frozen
/// backbone travels as its identity string and is rebuilt on load, which
/// keeps checkpoints small and makes backbone drift impossible.
struct Checkpoint {
    AdapterConfig config;
    AdapterParameters params;
    std::string backbone_identity;
    nlohmann::json metadata = nlohmann::json::object();

    void validate() const;
};

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& checkpoint);
Checkpoint load_checkpoint(const std::filesystem::path& path);

} // namespace musiscene::model
