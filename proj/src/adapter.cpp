#include "musiscene/adapter.hpp"

#include <cmath>
#include <memory>

#include "musiscene/error.hpp"
#include "musiscene/rng.hpp"

namespace musiscene::model {

namespace {

Eigen::MatrixXd json_to_matrix(const nlohmann::json& j, const std::string& what) {
    require(j.is_array() && !j.empty(), what + ": expected a non-empty 2-D array");
    const auto rows = static_cast<Eigen::Index>(j.size());
    require(j[0].is_array() && !j[0].empty(), what + ": expected a non-empty 2-D array");
    const auto cols = static_cast<Eigen::Index>(j[0].size());
    Eigen::MatrixXd m(rows, cols);
    for (Eigen::Index r = 0; r < rows; ++r) {
        const auto& row = j[static_cast<size_t>(r)];
        require(row.is_array() && static_cast<Eigen::Index>(row.size()) == cols,
                what + ": ragged rows");
        for (Eigen::Index c = 0; c < cols; ++c) {
            const auto& cell = row[static_cast<size_t>(c)];
            require(cell.is_number(), what + ": non-numeric entry");
            m(r, c) = cell.get<double>();
        }
    }
    return m;
}

nlohmann::json matrix_to_json(const Eigen::MatrixXd& m) {
    nlohmann::json rows = nlohmann::json::array();
    for (Eigen::Index r = 0; r < m.rows(); ++r) {
        nlohmann::json row = nlohmann::json::array();
        for (Eigen::Index c = 0; c < m.cols(); ++c) row.push_back(m(r, c));
        rows.push_back(std::move(row));
    }
    return rows;
}

std::vector<std::pair<int, int>> dense_dims(const AdapterConfig& config) {
    std::vector<std::pair<int, int>> dims;
    int in = config.feature_dim;
    for (int h : config.dense_hidden_dims) {
        dims.emplace_back(in, h);
        in = h;
    }
    dims.emplace_back(in, config.model_dim);
    return dims;
}

/// Row i of the pooling matrix averages frames [floor(i*T/P), ceil((i+1)*T/P)).
Eigen::MatrixXd pooling_matrix(int num_frames, int prefix_len) {
    require(prefix_len > 0, "pooling: prefix_len must be positive");
    require(num_frames > 0, "pooling: no frames to pool");
    Eigen::MatrixXd pool = Eigen::MatrixXd::Zero(prefix_len, num_frames);
    for (int i = 0; i < prefix_len; ++i) {
        const int start = static_cast<int>(
            std::floor(static_cast<double>(i) * num_frames / prefix_len));
        const int end = static_cast<int>(
            std::ceil(static_cast<double>(i + 1) * num_frames / prefix_len));
        require(end > start && end <= num_frames, "pooling: degenerate window");
        const double w = 1.0 / static_cast<double>(end - start);
        for (int f = start; f < end; ++f) pool(i, f) = w;
    }
    return pool;
}

} // namespace

void AdapterConfig::validate() const {
    require(num_layers_in > 0, "adapter config: num_layers_in must be positive");
    require(feature_dim > 0, "adapter config: feature_dim must be positive");
    require(model_dim > 0, "adapter config: model_dim must be positive");
    require(prefix_len > 0, "adapter config: prefix_len must be positive");
    require(injected_layers > 0, "adapter config: injected_layers must be positive");
    for (int h : dense_hidden_dims) {
        require(h > 0, "adapter config: dense hidden widths must be positive");
    }
}

AdapterConfig default_adapter_config(int num_layers_in, int feature_dim, int model_dim) {
    AdapterConfig cfg;
    cfg.num_layers_in = num_layers_in;
    cfg.feature_dim = feature_dim;
    cfg.model_dim = model_dim;
    cfg.prefix_len = 1;
    cfg.dense_hidden_dims = {feature_dim};
    cfg.injected_layers = 2;
    cfg.gate_init = 0.0;
    cfg.validate();
    return cfg;
}

nlohmann::json AdapterConfig::to_json() const {
    return nlohmann::json{{"num_layers_in", num_layers_in},
                          {"feature_dim", feature_dim},
                          {"model_dim", model_dim},
                          {"prefix_len", prefix_len},
                          {"dense_hidden_dims", dense_hidden_dims},
                          {"injected_layers", injected_layers},
                          {"gate_init", gate_init}};
}

AdapterConfig AdapterConfig::from_json(const nlohmann::json& j) {
    AdapterConfig cfg;
    try {
        cfg.num_layers_in = j.at("num_layers_in").get<int>();
        cfg.feature_dim = j.at("feature_dim").get<int>();
        cfg.model_dim = j.at("model_dim").get<int>();
        cfg.prefix_len = j.at("prefix_len").get<int>();
        cfg.dense_hidden_dims = j.at("dense_hidden_dims").get<std::vector<int>>();
        cfg.injected_layers = j.at("injected_layers").get<int>();
        cfg.gate_init = j.value("gate_init", 0.0);
    } catch (const nlohmann::json::exception& e) {
        fail(std::string("adapter config: ") + e.what());
    }
    cfg.validate();
    return cfg;
}

AdapterParameters AdapterParameters::init(const AdapterConfig& config, std::uint64_t seed) {
    config.validate();
    Rng rng(seed);
    AdapterParameters p;
    // Start as a mean over layers so the aggregated features are sane
    // before any training step.
    p.conv_kernel = Eigen::MatrixXd::Constant(config.num_layers_in, 1,
                                              1.0 / config.num_layers_in);
    for (const auto& [in, out] : dense_dims(config)) {
        DenseLayer layer;
        const double stddev = 1.0 / std::sqrt(static_cast<double>(in));
        layer.weight.resize(in, out);
        for (Eigen::Index r = 0; r < layer.weight.rows(); ++r) {
            for (Eigen::Index c = 0; c < layer.weight.cols(); ++c) {
                layer.weight(r, c) = stddev * rng.next_normal();
            }
        }
        layer.bias = Eigen::MatrixXd::Zero(1, out);
        p.dense.push_back(std::move(layer));
    }
    p.gates = Eigen::MatrixXd::Constant(config.injected_layers, 1, config.gate_init);
    return p;
}

AdapterParameters AdapterParameters::zeros_like(const AdapterParameters& other) {
    AdapterParameters p;
    p.conv_kernel = Eigen::MatrixXd::Zero(other.conv_kernel.rows(), other.conv_kernel.cols());
    for (const auto& layer : other.dense) {
        DenseLayer z;
        z.weight = Eigen::MatrixXd::Zero(layer.weight.rows(), layer.weight.cols());
        z.bias = Eigen::MatrixXd::Zero(layer.bias.rows(), layer.bias.cols());
        p.dense.push_back(std::move(z));
    }
    p.gates = Eigen::MatrixXd::Zero(other.gates.rows(), other.gates.cols());
    return p;
}

long long AdapterParameters::parameter_count() const {
    long long count = 0;
    for_each([&count](const std::string&, const Eigen::MatrixXd& m) {
        count += static_cast<long long>(m.size());
    });
    return count;
}

void AdapterParameters::for_each(
    const std::function<void(const std::string&, Eigen::MatrixXd&)>& fn) {
    fn("adapter.conv_kernel", conv_kernel);
    for (size_t i = 0; i < dense.size(); ++i) {
        fn("adapter.dense." + std::to_string(i) + ".weight", dense[i].weight);
        fn("adapter.dense." + std::to_string(i) + ".bias", dense[i].bias);
    }
    fn("adapter.gates", gates);
}

void AdapterParameters::for_each(
    const std::function<void(const std::string&, const Eigen::MatrixXd&)>& fn) const {
    const_cast<AdapterParameters*>(this)->for_each(
        [&fn](const std::string& name, Eigen::MatrixXd& m) { fn(name, m); });
}

void AdapterParameters::validate_against(const AdapterConfig& config) const {
    config.validate();
    require(conv_kernel.rows() == config.num_layers_in && conv_kernel.cols() == 1,
            "adapter parameters: conv kernel shape does not match config");
    const auto dims = dense_dims(config);
    require(dense.size() == dims.size(),
            "adapter parameters: dense stack depth does not match config");
    for (size_t i = 0; i < dims.size(); ++i) {
        require(dense[i].weight.rows() == dims[i].first &&
                    dense[i].weight.cols() == dims[i].second,
                "adapter parameters: dense weight (" + std::to_string(i) +
                    ") shape does not match config");
        require(dense[i].bias.rows() == 1 && dense[i].bias.cols() == dims[i].second,
                "adapter parameters: dense bias (" + std::to_string(i) +
                    ") shape does not match config");
    }
    require(gates.rows() == config.injected_layers && gates.cols() == 1,
            "adapter parameters: gate count does not match config");
    for_each([](const std::string& name, const Eigen::MatrixXd& m) {
        require(m.allFinite(), "adapter parameters: " + name + " contains non-finite values");
    });
}

nlohmann::json AdapterParameters::to_json() const {
    nlohmann::json dense_json = nlohmann::json::array();
    for (const auto& layer : dense) {
        dense_json.push_back(nlohmann::json{{"weight", matrix_to_json(layer.weight)},
                                            {"bias", matrix_to_json(layer.bias)}});
    }
    return nlohmann::json{{"conv_kernel", matrix_to_json(conv_kernel)},
                          {"dense", std::move(dense_json)},
                          {"gates", matrix_to_json(gates)}};
}

AdapterParameters AdapterParameters::from_json(const nlohmann::json& j) {
    AdapterParameters p;
    try {
        p.conv_kernel = json_to_matrix(j.at("conv_kernel"), "adapter conv_kernel");
        for (const auto& layer_json : j.at("dense")) {
            DenseLayer layer;
            layer.weight = json_to_matrix(layer_json.at("weight"), "adapter dense weight");
            layer.bias = json_to_matrix(layer_json.at("bias"), "adapter dense bias");
            p.dense.push_back(std::move(layer));
        }
        p.gates = json_to_matrix(j.at("gates"), "adapter gates");
    } catch (const nlohmann::json::exception& e) {
        fail(std::string("adapter parameters: ") + e.what());
    }
    return p;
}

AdapterVars lift_adapter(Tape& tape, const AdapterParameters& params, bool requires_grad) {
    AdapterVars vars;
    vars.conv_kernel = tape.leaf(params.conv_kernel, requires_grad);
    for (const auto& layer : params.dense) {
        vars.dense.emplace_back(tape.leaf(layer.weight, requires_grad),
                                tape.leaf(layer.bias, requires_grad));
    }
    vars.gates = tape.leaf(params.gates, requires_grad);
    return vars;
}

Var aggregate_layers_node(Tape& tape, const AudioFeatureStack& stack, Var conv_kernel) {
    stack.validate();
    auto layers = std::make_shared<const std::vector<Eigen::MatrixXd>>(stack.layers);
    return tape.weighted_layer_sum(std::move(layers), conv_kernel);
}

Eigen::MatrixXd aggregate_layers(const AudioFeatureStack& stack,
                                 const AdapterParameters& params) {
    require(params.conv_kernel.rows() == stack.num_layers(),
            "aggregate: kernel length " + std::to_string(params.conv_kernel.rows()) +
                " does not match feature stack layers " +
                std::to_string(stack.num_layers()));
    Tape tape;
    Var kernel = tape.leaf(params.conv_kernel, false);
    return tape.value(aggregate_layers_node(tape, stack, kernel));
}

Var project_to_prefix_node(Tape& tape, Var frames, int prefix_len, const AdapterVars& vars) {
    const auto num_frames = static_cast<int>(tape.value(frames).rows());
    Var pooled = tape.matmul(tape.leaf(pooling_matrix(num_frames, prefix_len)), frames);
    Var x = pooled;
    for (size_t i = 0; i < vars.dense.size(); ++i) {
        if (i > 0) x = tape.silu(x);
        x = tape.add_row(tape.matmul(x, vars.dense[i].first), vars.dense[i].second);
    }
    return x;
}

Eigen::MatrixXd project_to_prefix(const Eigen::MatrixXd& frames, const AdapterConfig& config,
                                  const AdapterParameters& params) {
    params.validate_against(config);
    require(frames.cols() == config.feature_dim,
            "project: frame width does not match adapter feature_dim");
    require(frames.rows() > 0, "project: no frames");
    Tape tape;
    AdapterVars vars = lift_adapter(tape, params, false);
    Var frames_node = tape.leaf(frames, false);
    return tape.value(project_to_prefix_node(tape, frames_node, config.prefix_len, vars));
}

Var build_prefix(Tape& tape, const AudioFeatureStack& stack, const AdapterConfig& config,
                 const AdapterVars& vars) {
    require(stack.num_layers() == config.num_layers_in,
            "adapter: feature stack has " + std::to_string(stack.num_layers()) +
                " layers but config expects " + std::to_string(config.num_layers_in));
    require(stack.feature_dim() == config.feature_dim,
            "adapter: feature stack width " + std::to_string(stack.feature_dim()) +
                " does not match config feature_dim " + std::to_string(config.feature_dim));
    Var frames = aggregate_layers_node(tape, stack, vars.conv_kernel);
    return project_to_prefix_node(tape, frames, config.prefix_len, vars);
}

namespace {

struct SequenceSetup {
    std::vector<int> tokens;    // question ++ answer ++ eos
    std::vector<int> targets;   // next-token targets per position
    std::vector<uint8_t> mask;  // 1 on positions predicting answer tokens / eos
    int answer_token_count = 0;
};

SequenceSetup make_sequence(const ToyLm& lm, const std::vector<int>& question_tokens,
                            const std::vector<int>& answer_tokens) {
    require(!question_tokens.empty(), "forward: empty question token sequence");
    require(!answer_tokens.empty(), "forward: empty answer token sequence");
    const int vocab = lm.config().vocab_size;
    for (int id : question_tokens) {
        require(id >= 0 && id < vocab, "forward: question token id out of vocabulary");
    }
    for (int id : answer_tokens) {
        require(id >= 0 && id < vocab, "forward: answer token id out of vocabulary");
    }
    SequenceSetup s;
    s.tokens = question_tokens;
    s.tokens.insert(s.tokens.end(), answer_tokens.begin(), answer_tokens.end());
    s.tokens.push_back(CharVocab::kEosId);
    const size_t n = s.tokens.size();
    s.targets.assign(n, 0);
    s.mask.assign(n, 0);
    // Position i predicts token i+1; answer tokens and the trailing EOS are
    // predicted from positions question_len-1 .. n-2.
    for (size_t i = 0; i + 1 < n; ++i) {
        s.targets[i] = s.tokens[i + 1];
        if (i + 1 >= question_tokens.size()) s.mask[i] = 1;
    }
    s.answer_token_count = static_cast<int>(answer_tokens.size()) + 1;
    return s;
}

} // namespace

ForwardResult inject_and_forward(const ToyLm& lm, const AdapterConfig& config,
                                 const AdapterParameters& params,
                                 const Eigen::MatrixXd& prefix,
                                 const std::vector<int>& question_tokens,
                                 const std::vector<int>& answer_tokens) {
    params.validate_against(config);
    require(prefix.rows() == config.prefix_len && prefix.cols() == config.model_dim,
            "forward: prefix shape must be [prefix_len x model_dim]");
    require(config.model_dim == lm.config().model_dim,
            "forward: adapter model_dim does not match the language model");
    require(config.injected_layers <= lm.config().num_layers,
            "forward: cannot inject into more layers than the model has");
    const SequenceSetup seq = make_sequence(lm, question_tokens, answer_tokens);

    Tape tape;
    PrefixInjection inj;
    inj.prefix = tape.leaf(prefix, false);
    inj.gates = tape.leaf(params.gates, false);
    inj.num_injected_layers = config.injected_layers;
    Var logits = lm.forward_logits(tape, seq.tokens, &inj);
    Var loss = tape.mean_masked_cross_entropy(logits, seq.targets, seq.mask);

    ForwardResult result;
    result.logits = tape.value(logits);
    result.loss = tape.value(loss)(0, 0);
    return result;
}

SampleGraph build_sample_graph(Tape& tape, const ToyLm& lm, const AdapterConfig& config,
                               const AdapterParameters& params,
                               const AudioFeatureStack& stack,
                               const std::vector<int>& question_tokens,
                               const std::vector<int>& answer_tokens) {
    params.validate_against(config);
    require(config.model_dim == lm.config().model_dim,
            "forward: adapter model_dim does not match the language model");
    require(config.injected_layers <= lm.config().num_layers,
            "forward: cannot inject into more layers than the model has");
    const SequenceSetup seq = make_sequence(lm, question_tokens, answer_tokens);

    SampleGraph g;
    g.vars = lift_adapter(tape, params, true);
    g.prefix = build_prefix(tape, stack, config, g.vars);
    PrefixInjection inj{g.prefix, g.vars.gates, config.injected_layers};
    g.logits = lm.forward_logits(tape, seq.tokens, &inj);
    g.loss = tape.mean_masked_cross_entropy(g.logits, seq.targets, seq.mask);
    g.answer_token_count = seq.answer_token_count;
    return g;
}

ParameterReport trainable_parameter_report(const ToyLm& lm, const AdapterParameters& params) {
    ParameterReport report;
    params.for_each([&report](const std::string& name, const Eigen::MatrixXd& m) {
        report.trainable_count += static_cast<long long>(m.size());
        report.trainable_names.push_back(name);
    });
    lm.for_each_parameter([&report](const std::string& name, const Eigen::MatrixXd& m) {
        report.frozen_count += static_cast<long long>(m.size());
        report.frozen_names.push_back(name);
    });
    return report;
}

} // namespace musiscene::model
