#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <set>
#include <string>
#include <vector>

#include "musiscene/adapter.hpp"
#include "musiscene/error.hpp"
#include "musiscene/rng.hpp"
#include "musiscene/toy_lm.hpp"

using namespace musiscene;
using namespace musiscene::model;

namespace {

AudioFeatureStack random_stack(Rng& rng, int layers, int frames, int dim,
                               const std::string& id = "clip") {
    AudioFeatureStack stack;
    stack.clip_id = id;
    for (int l = 0; l < layers; ++l) {
        Eigen::MatrixXd m(frames, dim);
        for (int i = 0; i < frames; ++i) {
            for (int j = 0; j < dim; ++j) m(i, j) = rng.next_uniform(-1, 1);
        }
        stack.layers.push_back(std::move(m));
    }
    return stack;
}

ToyLm small_lm() {
    ToyLmConfig cfg;
    cfg.model_dim = 16;
    cfg.num_layers = 2;
    cfg.ff_hidden = 24;
    cfg.max_seq_len = 96;
    cfg.seed = 5;
    return ToyLm(cfg);
}

} // namespace

TEST_CASE("documented example config counts 322 trainable parameters") {
    AdapterConfig cfg;
    cfg.num_layers_in = 4;
    cfg.feature_dim = 8;
    cfg.model_dim = 16;
    cfg.prefix_len = 2;
    cfg.dense_hidden_dims = {12};
    cfg.injected_layers = 2;
    const auto params = AdapterParameters::init(cfg, 0);
    // conv 4 + (8*12+12) + (12*16+16) + 2 gates = 322
    CHECK(params.parameter_count() == 322);
}

TEST_CASE("parameter count follows the config arithmetic") {
    AdapterConfig cfg = default_adapter_config(4, 8, 16);
    CHECK(cfg.prefix_len == 1);
    CHECK(cfg.injected_layers == 2);
    CHECK(cfg.dense_hidden_dims == std::vector<int>{8});
    const auto params = AdapterParameters::init(cfg, 0);
    // conv 4 + (8*8+8) + (8*16+16) + 2 gates
    CHECK(params.parameter_count() == 4 + 72 + 144 + 2);
}

TEST_CASE("adapter config json round trip and validation") {
    AdapterConfig cfg = default_adapter_config(6, 4, 16);
    const AdapterConfig back = AdapterConfig::from_json(cfg.to_json());
    CHECK(back.num_layers_in == cfg.num_layers_in);
    CHECK(back.feature_dim == cfg.feature_dim);
    CHECK(back.model_dim == cfg.model_dim);
    CHECK(back.prefix_len == cfg.prefix_len);
    CHECK(back.dense_hidden_dims == cfg.dense_hidden_dims);
    CHECK(back.injected_layers == cfg.injected_layers);

    AdapterConfig bad = cfg;
    bad.prefix_len = 0;
    CHECK_THROWS_AS(bad.validate(), Error);
    bad = cfg;
    bad.injected_layers = 0;
    CHECK_THROWS_AS(bad.validate(), Error);
}

TEST_CASE("adapter parameters json round trip preserves every value") {
    AdapterConfig cfg = default_adapter_config(4, 8, 16);
    auto params = AdapterParameters::init(cfg, 9);
    params.gates(0, 0) = 0.125; // make gates nonzero so the trip is visible
    const AdapterParameters back = AdapterParameters::from_json(params.to_json());
    CHECK((back.conv_kernel - params.conv_kernel).cwiseAbs().maxCoeff() == 0.0);
    REQUIRE(back.dense.size() == params.dense.size());
    for (size_t i = 0; i < back.dense.size(); ++i) {
        CHECK((back.dense[i].weight - params.dense[i].weight).cwiseAbs().maxCoeff() == 0.0);
        CHECK((back.dense[i].bias - params.dense[i].bias).cwiseAbs().maxCoeff() == 0.0);
    }
    CHECK((back.gates - params.gates).cwiseAbs().maxCoeff() == 0.0);
    CHECK_NOTHROW(back.validate_against(cfg));
}

TEST_CASE("aggregate_layers: uniform kernel is layer mean, oracle match") {
    Rng rng(31);
    const auto stack = random_stack(rng, 4, 10, 8);
    AdapterConfig cfg = default_adapter_config(4, 8, 16);
    auto params = AdapterParameters::init(cfg, 0);

    // init kernel is exactly 1/num_layers — the layer mean.
    const Eigen::MatrixXd agg = aggregate_layers(stack, params);
    CHECK(agg.rows() == 10);
    CHECK(agg.cols() == 8);
    Eigen::MatrixXd mean = Eigen::MatrixXd::Zero(10, 8);
    for (const auto& l : stack.layers) mean += l;
    mean /= 4.0;
    CHECK((agg - mean).cwiseAbs().maxCoeff() < 1e-6);

    // random kernel matches a hand-rolled weighted sum
    for (int l = 0; l < 4; ++l) params.conv_kernel(l, 0) = rng.next_uniform(-1, 1);
    const Eigen::MatrixXd weighted = aggregate_layers(stack, params);
    Eigen::MatrixXd oracle = Eigen::MatrixXd::Zero(10, 8);
    for (int l = 0; l < 4; ++l) oracle += params.conv_kernel(l, 0) * stack.layers[l];
    CHECK((weighted - oracle).cwiseAbs().maxCoeff() < 1e-6);

    // layer-count mismatch is an error
    const auto wrong = random_stack(rng, 3, 10, 8);
    CHECK_THROWS_AS(aggregate_layers(wrong, params), Error);
}

TEST_CASE("project_to_prefix identity and mean-pooling cases") {
    // Square single dense layer configured as identity: output == input.
    AdapterConfig cfg;
    cfg.num_layers_in = 2;
    cfg.feature_dim = 6;
    cfg.model_dim = 6;
    cfg.prefix_len = 3;
    cfg.dense_hidden_dims = {};
    cfg.injected_layers = 1;
    auto params = AdapterParameters::init(cfg, 0);
    REQUIRE(params.dense.size() == 1);
    params.dense[0].weight = Eigen::MatrixXd::Identity(6, 6);
    params.dense[0].bias = Eigen::MatrixXd::Zero(1, 6);

    Rng rng(33);
    Eigen::MatrixXd frames(3, 6);
    for (int i = 0; i < 3; ++i) {
        for (int j = 0; j < 6; ++j) frames(i, j) = rng.next_uniform(-1, 1);
    }
    // prefix_len == num_frames: pooling is the identity.
    const Eigen::MatrixXd out = project_to_prefix(frames, cfg, params);
    CHECK((out - frames).cwiseAbs().maxCoeff() < 1e-12);

    // prefix_len 1 pools to the frame mean.
    cfg.prefix_len = 1;
    const Eigen::MatrixXd pooled = project_to_prefix(frames, cfg, params);
    CHECK((pooled - frames.colwise().mean()).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("build_prefix output shape and finiteness") {
    Rng rng(35);
    AdapterConfig cfg = default_adapter_config(4, 8, 16);
    cfg.prefix_len = 2;
    const auto params = AdapterParameters::init(cfg, 3);
    const auto stack = random_stack(rng, 4, 12, 8);

    Tape tape;
    const AdapterVars vars = lift_adapter(tape, params, false);
    const Var prefix = build_prefix(tape, stack, cfg, vars);
    const Eigen::MatrixXd value = tape.value(prefix);
    CHECK(value.rows() == 2);
    CHECK(value.cols() == 16);
    CHECK(value.allFinite());
}

TEST_CASE("zero gates reproduce the prefix-free loss exactly") {
    const ToyLm lm = small_lm();
    AdapterConfig cfg = default_adapter_config(4, 8, lm.config().model_dim);
    const auto params = AdapterParameters::init(cfg, 1); // gate_init = 0
    Rng rng(37);
    const auto stack = random_stack(rng, 4, 10, 8);

    const auto question = lm.vocab().encode("what scene fits this music?");
    const auto answer = lm.vocab().encode("a quiet morning");

    Tape tape;
    const AdapterVars vars = lift_adapter(tape, params, false);
    const Var prefix = build_prefix(tape, stack, cfg, vars);
    const ForwardResult with_adapter = inject_and_forward(
        lm, cfg, params, tape.value(prefix), question, answer);

    // Reference: the same graph with no injection at all.
    std::vector<int> tokens = question;
    tokens.insert(tokens.end(), answer.begin(), answer.end());
    tokens.push_back(CharVocab::kEosId);
    Tape ref_tape;
    const Var ref_logits = lm.forward_logits(ref_tape, tokens);
    std::vector<int> targets(tokens.size(), 0);
    std::vector<uint8_t> mask(tokens.size(), 0);
    for (size_t i = question.size() - 1; i + 1 < tokens.size(); ++i) {
        targets[i] = tokens[i + 1];
        mask[i] = 1;
    }
    const Var ref_loss = ref_tape.mean_masked_cross_entropy(ref_logits, targets, mask);

    CHECK(with_adapter.loss ==
          doctest::Approx(ref_tape.value(ref_loss)(0, 0)).epsilon(1e-6));
    // The identity is bitwise, not just approximate.
    CHECK(with_adapter.loss == ref_tape.value(ref_loss)(0, 0));
}

TEST_CASE("single-token answer loss is that token's negative log-probability") {
    const ToyLm lm = small_lm();
    AdapterConfig cfg = default_adapter_config(4, 8, lm.config().model_dim);
    const auto params = AdapterParameters::init(cfg, 1);
    Rng rng(39);
    const auto stack = random_stack(rng, 4, 6, 8);

    const auto question = lm.vocab().encode("q");
    const std::vector<int> answer = lm.vocab().encode("x");

    Tape tape;
    const AdapterVars vars = lift_adapter(tape, params, false);
    const Eigen::MatrixXd prefix = tape.value(build_prefix(tape, stack, cfg, vars));
    const ForwardResult result = inject_and_forward(lm, cfg, params, prefix, question, answer);

    // Positions: question 'q' predicts 'x'; 'x' predicts EOS. Loss is the
    // mean of those two cross-entropy terms.
    const Eigen::VectorXd row0 = result.logits.row(question.size() - 1).transpose();
    const Eigen::VectorXd row1 = result.logits.row(question.size()).transpose();
    auto nll = [](const Eigen::VectorXd& row, int target) {
        const double mx = row.maxCoeff();
        return -(row(target) - mx - std::log((row.array() - mx).exp().sum()));
    };
    const double expect = 0.5 * (nll(row0, answer[0]) + nll(row1, CharVocab::kEosId));
    CHECK(result.loss == doctest::Approx(expect).epsilon(1e-9));
}

TEST_CASE("inject_and_forward validates inputs") {
    const ToyLm lm = small_lm();
    AdapterConfig cfg = default_adapter_config(4, 8, lm.config().model_dim);
    const auto params = AdapterParameters::init(cfg, 1);
    const Eigen::MatrixXd prefix = Eigen::MatrixXd::Zero(1, lm.config().model_dim);
    const auto q = lm.vocab().encode("q");
    const auto a = lm.vocab().encode("a");
    CHECK_THROWS_AS(inject_and_forward(lm, cfg, params, prefix, {}, a), Error);
    CHECK_THROWS_AS(inject_and_forward(lm, cfg, params, prefix, q, {}), Error);
    CHECK_THROWS_AS(inject_and_forward(lm, cfg, params, prefix, q, {999}), Error);
    const Eigen::MatrixXd bad_prefix = Eigen::MatrixXd::Zero(1, 7);
    CHECK_THROWS_AS(inject_and_forward(lm, cfg, params, bad_prefix, q, a), Error);
}

TEST_CASE("nonzero gates change the loss") {
    const ToyLm lm = small_lm();
    AdapterConfig cfg = default_adapter_config(4, 8, lm.config().model_dim);
    auto params = AdapterParameters::init(cfg, 1);
    Rng rng(41);
    const auto stack = random_stack(rng, 4, 8, 8);
    const auto q = lm.vocab().encode("what scene?");
    const auto a = lm.vocab().encode("rainy");

    Tape tape;
    const AdapterVars vars = lift_adapter(tape, params, false);
    const Eigen::MatrixXd prefix = tape.value(build_prefix(tape, stack, cfg, vars));
    const double zero_gate_loss = inject_and_forward(lm, cfg, params, prefix, q, a).loss;
    params.gates.setConstant(0.8);
    const double gated_loss = inject_and_forward(lm, cfg, params, prefix, q, a).loss;
    CHECK(zero_gate_loss != gated_loss);
}

TEST_CASE("build_sample_graph end-to-end gradients reach every group") {
    const ToyLm lm = small_lm();
    AdapterConfig cfg = default_adapter_config(3, 4, lm.config().model_dim);
    auto params = AdapterParameters::init(cfg, 2);
    params.gates.setConstant(0.3); // open the gates so prefix gradients flow
    Rng rng(43);
    const auto stack = random_stack(rng, 3, 6, 4);
    const auto q = lm.vocab().encode("scene?");
    const auto a = lm.vocab().encode("calm");

    Tape tape;
    const SampleGraph graph = build_sample_graph(tape, lm, cfg, params, stack, q, a);
    CHECK(graph.answer_token_count == static_cast<int>(a.size()) + 1);
    tape.backward(graph.loss);

    CHECK(tape.grad(graph.vars.gates).cwiseAbs().maxCoeff() > 0.0);
    CHECK(tape.grad(graph.vars.conv_kernel).cwiseAbs().maxCoeff() > 0.0);
    for (const auto& [w, b] : graph.vars.dense) {
        CHECK(tape.grad(w).cwiseAbs().maxCoeff() > 0.0);
        CHECK(tape.grad(b).cwiseAbs().maxCoeff() > 0.0);
    }
}

TEST_CASE("at zero gates only the gate gradient is nonzero") {
    const ToyLm lm = small_lm();
    AdapterConfig cfg = default_adapter_config(3, 4, lm.config().model_dim);
    const auto params = AdapterParameters::init(cfg, 2); // gates zero
    Rng rng(47);
    const auto stack = random_stack(rng, 3, 6, 4);
    Tape tape;
    const SampleGraph graph = build_sample_graph(tape, lm, cfg, params, stack,
                                                 lm.vocab().encode("scene?"),
                                                 lm.vocab().encode("calm"));
    tape.backward(graph.loss);
    // Prefix path is multiplied by gate = 0, so upstream grads vanish...
    CHECK(tape.grad(graph.vars.conv_kernel).cwiseAbs().maxCoeff() == 0.0);
    // ...but the gate itself still feels the prefix attention output.
    CHECK(tape.grad(graph.vars.gates).cwiseAbs().maxCoeff() > 0.0);
}

TEST_CASE("trainable parameter report partitions the model") {
    const ToyLm lm = small_lm();
    AdapterConfig cfg = default_adapter_config(4, 8, lm.config().model_dim);
    const auto params = AdapterParameters::init(cfg, 1);
    const ParameterReport report = trainable_parameter_report(lm, params);
    CHECK(report.trainable_count == params.parameter_count());
    CHECK(report.frozen_count == lm.parameter_count());
    std::set<std::string> trainable(report.trainable_names.begin(),
                                    report.trainable_names.end());
    std::set<std::string> frozen(report.frozen_names.begin(), report.frozen_names.end());
    CHECK(trainable.size() == report.trainable_names.size());
    CHECK(frozen.size() == report.frozen_names.size());
    std::vector<std::string> overlap;
    std::set_intersection(trainable.begin(), trainable.end(), frozen.begin(), frozen.end(),
                          std::back_inserter(overlap));
    CHECK(overlap.empty());
}
