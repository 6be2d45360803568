#include "musiscene/features.hpp"

#include "musiscene/array_io.hpp"
#include "musiscene/error.hpp"

namespace musiscene::model {

void AudioFeatureStack::validate() const {
    require(!layers.empty(), "feature stack '" + clip_id + "' has no layers");
    const Eigen::Index rows = layers.front().rows();
    const Eigen::Index cols = layers.front().cols();
    require(rows > 0 && cols > 0, "feature stack '" + clip_id + "' has an empty layer");
    for (const auto& layer : layers) {
        require(layer.rows() == rows && layer.cols() == cols,
                "feature stack '" + clip_id + "' has inconsistent layer shapes");
        require(layer.allFinite(), "feature stack '" + clip_id + "' contains non-finite values");
    }
}

void write_feature_stack(const std::filesystem::path& path, const AudioFeatureStack& stack,
                         const std::string& encoder_id) {
    stack.validate();
    F32Array arr;
    const auto l = static_cast<uint64_t>(stack.num_layers());
    const auto t = static_cast<uint64_t>(stack.num_frames());
    const auto f = static_cast<uint64_t>(stack.feature_dim());
    arr.shape = {l, t, f};
    arr.data.reserve(static_cast<size_t>(l * t * f));
    for (const auto& layer : stack.layers) {
        for (Eigen::Index r = 0; r < layer.rows(); ++r) {
            for (Eigen::Index c = 0; c < layer.cols(); ++c) {
                arr.data.push_back(static_cast<float>(layer(r, c)));
            }
        }
    }
    write_f32_array(path, arr, encoder_id);
}

AudioFeatureStack read_feature_stack(const std::filesystem::path& path,
                                     const std::string& clip_id) {
    const F32Array arr = read_f32_array(path);
    require(arr.shape.size() == 3,
            "feature file " + path.string() + ": expected a rank-3 array, got rank " +
                std::to_string(arr.shape.size()));
    const auto l = static_cast<Eigen::Index>(arr.shape[0]);
    const auto t = static_cast<Eigen::Index>(arr.shape[1]);
    const auto f = static_cast<Eigen::Index>(arr.shape[2]);
    AudioFeatureStack stack;
    stack.clip_id = clip_id;
    stack.layers.reserve(static_cast<size_t>(l));
    size_t idx = 0;
    for (Eigen::Index li = 0; li < l; ++li) {
        Eigen::MatrixXd layer(t, f);
        for (Eigen::Index r = 0; r < t; ++r) {
            for (Eigen::Index c = 0; c < f; ++c) {
                layer(r, c) = static_cast<double>(arr.data[idx++]);
            }
        }
        stack.layers.push_back(std::move(layer));
    }
    stack.validate();
    return stack;
}

} // namespace musiscene::model
