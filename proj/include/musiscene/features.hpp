#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include <Eigen/Dense>

namespace musiscene::model {

/// Per-layer frame features for one audio clip: `layers[l]` is a
/// [num_frames x feature_dim] matrix and every layer shares one shape.
struct AudioFeatureStack {
    std::string clip_id;
    std::vector<Eigen::MatrixXd> layers;

    int num_layers() const { return static_cast<int>(layers.size()); }
    int num_frames() const {
        return layers.empty() ? 0 : static_cast<int>(layers.front().rows());
    }
    int feature_dim() const {
        return layers.empty() ? 0 : static_cast<int>(layers.front().cols());
    }
    void validate() const;
};

/// Stored as a rank-3 float32 array [num_layers, num_frames, feature_dim]
/// with a JSON sidecar naming the encoder backend that produced it.
void write_feature_stack(const std::filesystem::path& path, const AudioFeatureStack& stack,
                         const std::string& encoder_id);
AudioFeatureStack read_feature_stack(const std::filesystem::path& path,
                                     const std::string& clip_id);

} // namespace musiscene::model
