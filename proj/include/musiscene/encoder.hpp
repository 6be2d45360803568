#pragma once

#include <cstdint>
#include <string>

#include "musiscene/features.hpp"
#include "musiscene/wav.hpp"

namespace musiscene::model {

/// Produces the layered frame features the adapter consumes.
class FeatureEncoderBackend {
public:
    virtual ~FeatureEncoderBackend() = default;
    virtual std::string id() const = 0;
    virtual AudioFeatureStack encode(const AudioClip& clip, const std::string& clip_id) = 0;
};

/// Deterministic stand-in for a pretrained audio encoder: per-window band
/// log-energies pushed through one fixed seeded projection per layer, so
/// different layers expose different "views" of the same frames.
class ToyFeatureEncoder final : public FeatureEncoderBackend {
public:
    ToyFeatureEncoder(int num_layers, int feature_dim, std::uint64_t seed = 1234,
                      int bands = 8, double window_s = 0.5, double hop_s = 0.25);

    std::string id() const override;
    AudioFeatureStack encode(const AudioClip& clip, const std::string& clip_id) override;

    int num_layers() const { return num_layers_; }
    int feature_dim() const { return feature_dim_; }

private:
    int num_layers_;
    int feature_dim_;
    std::uint64_t seed_;
    int bands_;
    double window_s_;
    double hop_s_;
};

} // namespace musiscene::model
