#include <doctest.h>

#include <string>
#include <vector>

#include "musiscene/error.hpp"
#include "musiscene/tape.hpp"
#include "musiscene/toy_lm.hpp"

using namespace musiscene;
using namespace musiscene::model;

TEST_CASE("vocab ids are stable and text round-trips") {
    CharVocab vocab;
    CHECK(vocab.size() == 50);
    CHECK(CharVocab::kEosId == 0);
    CHECK(CharVocab::kUnkId == 1);
    const std::string text = "rainy jazz at 3 a.m.!";
    const auto ids = vocab.encode(text);
    CHECK(vocab.decode(ids) == text);
    // Lowercasing is part of encoding.
    CHECK(vocab.encode("ABC") == vocab.encode("abc"));
    // Unsupported characters map to the unknown id and decode as '?'.
    const auto unk = vocab.encode("caf\xc3\xa9");
    CHECK(unk[3] == CharVocab::kUnkId);
    CHECK(vocab.decode(unk) == "caf??");
    // append_eos terminates the sequence.
    const auto with_eos = vocab.encode("hi", true);
    CHECK(with_eos.back() == CharVocab::kEosId);
    CHECK(vocab.decode(with_eos) == "hi");
}

TEST_CASE("lm identity string round-trips the construction recipe") {
    ToyLmConfig cfg;
    cfg.model_dim = 16;
    cfg.num_layers = 2;
    cfg.ff_hidden = 24;
    cfg.max_seq_len = 64;
    cfg.seed = 7;
    const ToyLm lm(cfg);
    const ToyLm rebuilt = ToyLm::from_identity(lm.identity());
    CHECK(rebuilt.identity() == lm.identity());
    CHECK(rebuilt.weights_digest() == lm.weights_digest());
    CHECK(rebuilt.parameter_count() == lm.parameter_count());
}

TEST_CASE("lm weights depend deterministically on the seed") {
    ToyLmConfig cfg;
    cfg.model_dim = 16;
    cfg.num_layers = 1;
    cfg.ff_hidden = 16;
    cfg.max_seq_len = 32;
    const ToyLm a(cfg);
    const ToyLm b(cfg);
    CHECK(a.weights_digest() == b.weights_digest());
    cfg.seed = 43;
    const ToyLm c(cfg);
    CHECK(a.weights_digest() != c.weights_digest());
}

TEST_CASE("from_identity rejects malformed strings") {
    CHECK_THROWS_AS(ToyLm::from_identity("not-an-identity"), Error);
    CHECK_THROWS_AS(ToyLm::from_identity("toy-lm/v1?model_dim=bogus"), Error);
}

TEST_CASE("config validation bounds the depth") {
    ToyLmConfig cfg;
    cfg.num_layers = 5;
    CHECK_THROWS_AS(cfg.validate(), Error);
    cfg.num_layers = 0;
    CHECK_THROWS_AS(cfg.validate(), Error);
    cfg.num_layers = 4;
    CHECK_NOTHROW(cfg.validate());
}

TEST_CASE("forward logits are deterministic with the right shape") {
    ToyLmConfig cfg;
    cfg.model_dim = 16;
    cfg.num_layers = 2;
    cfg.ff_hidden = 24;
    cfg.max_seq_len = 64;
    const ToyLm lm(cfg);
    const auto tokens = lm.vocab().encode("hello there", true);

    Tape t1;
    const Eigen::MatrixXd l1 = t1.value(lm.forward_logits(t1, tokens));
    Tape t2;
    const Eigen::MatrixXd l2 = t2.value(lm.forward_logits(t2, tokens));
    CHECK(l1.rows() == static_cast<Eigen::Index>(tokens.size()));
    CHECK(l1.cols() == lm.vocab().size());
    CHECK((l1 - l2).cwiseAbs().maxCoeff() == 0.0);
    CHECK(l1.allFinite());
}

TEST_CASE("causal mask: later tokens never affect earlier logits") {
    ToyLmConfig cfg;
    cfg.model_dim = 16;
    cfg.num_layers = 2;
    cfg.ff_hidden = 24;
    cfg.max_seq_len = 64;
    const ToyLm lm(cfg);
    auto tokens = lm.vocab().encode("abcdef");
    Tape t1;
    const Eigen::MatrixXd base = t1.value(lm.forward_logits(t1, tokens));
    tokens.back() = lm.vocab().encode("z")[0]; // change only the last token
    Tape t2;
    const Eigen::MatrixXd changed = t2.value(lm.forward_logits(t2, tokens));
    const Eigen::Index n = base.rows();
    CHECK((base.topRows(n - 1) - changed.topRows(n - 1)).cwiseAbs().maxCoeff() == 0.0);
    CHECK((base.row(n - 1) - changed.row(n - 1)).cwiseAbs().maxCoeff() > 0.0);
}

TEST_CASE("forward validates token ids and sequence length") {
    ToyLmConfig cfg;
    cfg.model_dim = 8;
    cfg.num_layers = 1;
    cfg.ff_hidden = 8;
    cfg.max_seq_len = 4;
    const ToyLm lm(cfg);
    Tape tape;
    CHECK_THROWS_AS(lm.forward_logits(tape, {}), Error);
    CHECK_THROWS_AS(lm.forward_logits(tape, {0, 1, 999}), Error);
    CHECK_THROWS_AS(lm.forward_logits(tape, {2, 3, 4, 5, 6}), Error); // beyond max_seq_len
}

TEST_CASE("parameter walk covers the full parameter count") {
    ToyLmConfig cfg;
    cfg.model_dim = 16;
    cfg.num_layers = 2;
    cfg.ff_hidden = 24;
    cfg.max_seq_len = 64;
    const ToyLm lm(cfg);
    long long walked = 0;
    int named = 0;
    lm.for_each_parameter([&](const std::string& name, const Eigen::MatrixXd& m) {
        CHECK_FALSE(name.empty());
        walked += m.size();
        ++named;
    });
    CHECK(walked == lm.parameter_count());
    CHECK(named > 10);
}
