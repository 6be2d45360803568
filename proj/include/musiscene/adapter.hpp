#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

#include "musiscene/features.hpp"
#include "musiscene/tape.hpp"
#include "musiscene/toy_lm.hpp"

namespace musiscene::model {

struct AdapterConfig {
    int num_layers_in = 4;   // feature-stack layers consumed
    int feature_dim = 8;     // width of each feature frame
    int model_dim = 16;      // language model width the prefix must match
    int prefix_len = 1;      // virtual tokens produced
    std::vector<int> dense_hidden_dims; // hidden widths between feature_dim and model_dim
    int injected_layers = 2; // topmost language-model blocks receiving the prefix
    double gate_init = 0.0;

    void validate() const;
    nlohmann::json to_json() const;
    static AdapterConfig from_json(const nlohmann::json& j);
};

/// The documented defaults: one learned mixture over the full layer axis,
/// a single hidden dense layer as wide as the features, one prefix vector,
/// injection into the top two blocks.
AdapterConfig default_adapter_config(int num_layers_in, int feature_dim, int model_dim);

struct DenseLayer {
    Eigen::MatrixXd weight; // [in x out]
    Eigen::MatrixXd bias;   // [1 x out]
};

/// The trainable state: a 1-D aggregation kernel over feature-stack layers,
/// a dense projection stack, and per-injected-layer attention gates.
struct AdapterParameters {
    Eigen::MatrixXd conv_kernel; // [num_layers_in x 1]
    std::vector<DenseLayer> dense;
    Eigen::MatrixXd gates;       // [injected_layers x 1]

    static AdapterParameters init(const AdapterConfig& config, std::uint64_t seed);
    static AdapterParameters zeros_like(const AdapterParameters& other);

    long long parameter_count() const;
    void for_each(const std::function<void(const std::string&, Eigen::MatrixXd&)>& fn);
    void for_each(
        const std::function<void(const std::string&, const Eigen::MatrixXd&)>& fn) const;
    void validate_against(const AdapterConfig& config) const;

    nlohmann::json to_json() const;
    static AdapterParameters from_json(const nlohmann::json& j);
};

/// Gradient-tracked views of the parameters on a tape.
struct AdapterVars {
    Var conv_kernel;
    std::vector<std::pair<Var, Var>> dense; // (weight, bias)
    Var gates;
};

AdapterVars lift_adapter(Tape& tape, const AdapterParameters& params, bool requires_grad);

/// Collapses the layer axis: out = sum_l kernel[l] * stack.layers[l].
Var aggregate_layers_node(Tape& tape, const AudioFeatureStack& stack, Var conv_kernel);
Eigen::MatrixXd aggregate_layers(const AudioFeatureStack& stack,
                                 const AdapterParameters& params);

/// Adaptive mean pooling over frames to `prefix_len` rows followed by the
/// dense stack (SiLU strictly between layers), yielding [prefix_len x model_dim].
Var project_to_prefix_node(Tape& tape, Var frames, int prefix_len, const AdapterVars& vars);
Eigen::MatrixXd project_to_prefix(const Eigen::MatrixXd& frames, const AdapterConfig& config,
                                  const AdapterParameters& params);

/// Full adapter: aggregate + pool + project.
Var build_prefix(Tape& tape, const AudioFeatureStack& stack, const AdapterConfig& config,
                 const AdapterVars& vars);

struct ForwardResult {
    Eigen::MatrixXd logits; // [question+answer tokens x vocab]
    double loss = 0.0;      // mean cross-entropy over answer positions
};

/// Runs [question ++ answer] through the frozen model with the prefix
/// injected, scoring only the answer positions (each answer token plus the
/// trailing EOS is predicted from the position before it).
ForwardResult inject_and_forward(const ToyLm& lm, const AdapterConfig& config,
                                 const AdapterParameters& params,
                                 const Eigen::MatrixXd& prefix,
                                 const std::vector<int>& question_tokens,
                                 const std::vector<int>& answer_tokens);

struct SampleGraph {
    AdapterVars vars;
    Var prefix;
    Var logits;
    Var loss;
    int answer_token_count = 0;
};

/// Builds the end-to-end training graph for one sample: features ->
/// adapter -> prefix injection -> masked cross-entropy on answer positions.
SampleGraph build_sample_graph(Tape& tape, const ToyLm& lm, const AdapterConfig& config,
                               const AdapterParameters& params,
                               const AudioFeatureStack& stack,
                               const std::vector<int>& question_tokens,
                               const std::vector<int>& answer_tokens);

struct ParameterReport {
    long long trainable_count = 0;
    long long frozen_count = 0;
    std::vector<std::string> trainable_names;
    std::vector<std::string> frozen_names;
};

/// Partition of the combined model's parameters; the two name sets are
/// disjoint by construction and the counts add up to the whole model.
ParameterReport trainable_parameter_report(const ToyLm& lm, const AdapterParameters& params);

} // namespace musiscene::model
