#include "musiscene/encoder.hpp"

#include "musiscene/audio_metrics.hpp"
#include "musiscene/error.hpp"
#include "musiscene/rng.hpp"
#include "musiscene/sha256.hpp"

namespace musiscene::model {

ToyFeatureEncoder::ToyFeatureEncoder(int num_layers, int feature_dim, std::uint64_t seed,
                                     int bands, double window_s, double hop_s)
    : num_layers_(num_layers),
      feature_dim_(feature_dim),
      seed_(seed),
      bands_(bands),
      window_s_(window_s),
      hop_s_(hop_s) {
    require(num_layers_ > 0, "feature encoder: num_layers must be positive");
    require(feature_dim_ > 0, "feature encoder: feature_dim must be positive");
    require(bands_ > 0, "feature encoder: bands must be positive");
}

std::string ToyFeatureEncoder::id() const {
    return "toy-feature-encoder/v1?layers=" + std::to_string(num_layers_) +
           "&dim=" + std::to_string(feature_dim_) + "&seed=" + std::to_string(seed_) +
           "&bands=" + std::to_string(bands_);
}

AudioFeatureStack ToyFeatureEncoder::encode(const AudioClip& clip, const std::string& clip_id) {
    require(!clip.samples.empty(), "feature encoder: clip '" + clip_id + "' has no samples");
    const Eigen::MatrixXd energies =
        audio::band_energies(clip, bands_, window_s_, hop_s_).array().log1p().matrix();

    AudioFeatureStack stack;
    stack.clip_id = clip_id;
    stack.layers.reserve(static_cast<size_t>(num_layers_));
    for (int layer = 0; layer < num_layers_; ++layer) {
        // One frozen projection per layer; the seed ties it to this encoder
        // identity so re-encoding always reproduces the same features.
        Rng rng(sha256_prefix64(id() + ":layer:" + std::to_string(layer)));
        Eigen::MatrixXd projection(bands_, feature_dim_);
        for (Eigen::Index r = 0; r < projection.rows(); ++r) {
            for (Eigen::Index c = 0; c < projection.cols(); ++c) {
                projection(r, c) = rng.next_normal();
            }
        }
        stack.layers.push_back(energies * projection);
    }
    stack.validate();
    return stack;
}

} // namespace musiscene::model
