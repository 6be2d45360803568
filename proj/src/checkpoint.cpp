#include "musiscene/checkpoint.hpp"

#include "musiscene/error.hpp"
#include "musiscene/fsio.hpp"

namespace musiscene::model {

namespace {
constexpr int kFormatVersion = 1;
}

void Checkpoint::validate() const {
    params.validate_against(config);
    require(!backbone_identity.empty(), "checkpoint: missing backbone identity");
    require(metadata.is_object(), "checkpoint: metadata must be a JSON object");
}

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& checkpoint) {
    checkpoint.validate();
    nlohmann::json j{{"format_version", kFormatVersion},
                     {"backbone_identity", checkpoint.backbone_identity},
                     {"adapter_config", checkpoint.config.to_json()},
                     {"adapter_parameters", checkpoint.params.to_json()},
                     {"metadata", checkpoint.metadata}};
    atomic_write_file(path, j.dump(2) + "\n");
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(read_file(path));
    } catch (const nlohmann::json::exception& e) {
        fail("checkpoint " + path.string() + ": invalid JSON: " + e.what());
    }
    require(j.is_object(), "checkpoint " + path.string() + ": expected a JSON object");
    const int version = j.value("format_version", -1);
    require(version == kFormatVersion,
            "checkpoint " + path.string() + ": unsupported format_version " +
                std::to_string(version));
    Checkpoint ckpt;
    try {
        ckpt.backbone_identity = j.at("backbone_identity").get<std::string>();
        ckpt.config = AdapterConfig::from_json(j.at("adapter_config"));
        ckpt.params = AdapterParameters::from_json(j.at("adapter_parameters"));
        ckpt.metadata = j.value("metadata", nlohmann::json::object());
    } catch (const nlohmann::json::exception& e) {
        fail("checkpoint " + path.string() + ": " + e.what());
    }
    ckpt.validate();
    return ckpt;
}

} // namespace musiscene::model
