#pragma once

#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Dense>

#include "musiscene/tape.hpp"

namespace musiscene::model {

/// Character-level vocabulary with fixed ids: 0 = end-of-sequence,
/// 1 = unknown, then one id per charset character. Text is lowercased
/// before lookup so the mapping is total and deterministic.
class CharVocab {
public:
    static constexpr int kEosId = 0;
    static constexpr int kUnkId = 1;

    CharVocab();

    int size() const { return static_cast<int>(id_to_char_.size()) + 2; }
    int encode_char(char c) const;
    std::vector<int> encode(std::string_view text, bool append_eos = false) const;
    /// Decodes up to (not including) the first EOS; unknown ids error.
    std::string decode(const std::vector<int>& ids) const;

private:
    std::string id_to_char_;
    int char_to_id_[256];
};

struct ToyLmConfig {
    int vocab_size = 0; // 0 = take from CharVocab
    int model_dim = 32;
    int num_layers = 2;
    int ff_hidden = 64;
    int max_seq_len = 192;
    std::uint64_t seed = 42;

    void validate() const;
};

struct LmLayer {
    Eigen::MatrixXd ln1_gamma, ln1_beta;
    Eigen::MatrixXd wq, wk, wv, wo;
    Eigen::MatrixXd ln2_gamma, ln2_beta;
    Eigen::MatrixXd w1, b1, w2, b2;
};

/// Gradient-tracked prefix injected into the attention of the top
/// `num_injected_layers` blocks. `gates` is [num_injected_layers x 1]; a
/// gate of exactly zero leaves that layer's output bitwise unchanged.
struct PrefixInjection {
    Var prefix;              // [prefix_len x model_dim]
    Var gates;               // [num_injected_layers x 1]
    int num_injected_layers = 0;
};

/// Single-head pre-norm causal transformer with frozen, seed-derived
/// weights. The weights are never serialized: the identity string encodes
/// the construction recipe and any holder can rebuild the same model.
class ToyLm {
public:
    explicit ToyLm(const ToyLmConfig& config);

    static ToyLm from_identity(const std::string& identity);
    std::string identity() const;

    const ToyLmConfig& config() const { return config_; }
    const CharVocab& vocab() const { return vocab_; }
    long long parameter_count() const;
    /// Hash over the raw bytes of every weight matrix; used to prove the
    /// backbone stayed frozen across training.
    std::string weights_digest() const;
    void for_each_parameter(
        const std::function<void(const std::string&, const Eigen::MatrixXd&)>& fn) const;

    /// Builds the forward graph for one token sequence and returns the
    /// [num_tokens x vocab] logits node. `injection` may be null.
    Var forward_logits(Tape& tape, const std::vector<int>& tokens,
                       const PrefixInjection* injection = nullptr) const;

private:
    ToyLmConfig config_;
    CharVocab vocab_;
    Eigen::MatrixXd token_embedding_; // [vocab x dim]
    Eigen::MatrixXd pos_embedding_;   // [max_seq x dim]
    std::vector<LmLayer> layers_;
    Eigen::MatrixXd final_gamma_, final_beta_;
    Eigen::MatrixXd head_w_, head_b_; // [dim x vocab], [1 x vocab]
};

} // namespace musiscene::model
