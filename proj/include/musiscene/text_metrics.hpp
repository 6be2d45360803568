#pragma once

#include <array>
#include <memory>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "musiscene/metric_report.hpp"

namespace musiscene::text {

/// Shared preprocessing for every caption metric: lowercased tokens with
/// punctuation split into separate single-character tokens.
struct TokenSequence {
    std::vector<std::string> tokens;
    std::string source;

    size_t size() const { return tokens.size(); }
    bool empty() const { return tokens.empty(); }
};

TokenSequence tokenize(const std::string& text);

// ---- BLEU ----

using BleuWeights = std::array<double, 4>;
inline constexpr BleuWeights kUniformBleuWeights{0.25, 0.25, 0.25, 0.25};

/// Clipped matches and candidate n-gram total for one hypothesis.
struct NgramMatch {
    long long matches = 0;
    long long total = 0;
};

NgramMatch bleu_counts(const TokenSequence& hyp, const std::vector<TokenSequence>& refs, int n);

/// Modified n-gram precision with per-reference clipping. When the raw
/// numerator is 0 and n > 1, both numerator and denominator get +1.
double bleu_n(const TokenSequence& hyp, const std::vector<TokenSequence>& refs, int n);

/// exp(sum w_n log p_n) times the brevity penalty. Any zero precision with
/// positive weight makes the score 0.
double bleu_weighted(const TokenSequence& hyp, const std::vector<TokenSequence>& refs,
                     const BleuWeights& weights = kUniformBleuWeights);

/// Corpus-level BLEU over aggregated counts (one reference per hypothesis).
double corpus_bleu(const std::vector<std::pair<TokenSequence, TokenSequence>>& pairs,
                   const BleuWeights& weights = kUniformBleuWeights);

// ---- METEOR ----

struct MeteorParams {
    double alpha = 0.9;
    double beta = 3.0;
    double gamma = 0.5;
};

/// Exact-match unigram alignment, longest-fragment-first, which maximizes
/// the match count; chunks are the resulting contiguous fragments.
struct MeteorAlignment {
    int matches = 0;
    int chunks = 0;
};

MeteorAlignment meteor_align(const TokenSequence& hyp, const TokenSequence& ref);

double meteor(const TokenSequence& hyp, const TokenSequence& ref, const MeteorParams& params = {});

// ---- ROUGE-L ----

int lcs_length(const TokenSequence& a, const TokenSequence& b);

/// LCS F1 over token sequences.
double rouge_l(const TokenSequence& hyp, const TokenSequence& ref);

// ---- BERT-Score ----

/// Maps tokens to unit-normalized vectors, one row per token.
class TokenEmbedder {
public:
    virtual ~TokenEmbedder() = default;
    virtual std::string id() const = 0;
    virtual Eigen::MatrixXd embed(const std::vector<std::string>& tokens) = 0;
};

/// Deterministic offline embedder: each distinct token string hashes to a
/// fixed unit vector.
class HashTokenEmbedder final : public TokenEmbedder {
public:
    explicit HashTokenEmbedder(int dim = 64) : dim_(dim) {}
    std::string id() const override { return "hash-embedder-" + std::to_string(dim_); }
    Eigen::MatrixXd embed(const std::vector<std::string>& tokens) override;

private:
    int dim_;
};

struct BertScore {
    double precision = 0.0;
    double recall = 0.0;
    double f1 = 0.0;
};

/// Greedy matching on the token cosine-similarity matrix; scores are
/// clamped into [0, 1]. Empty sequences score 0.
BertScore bert_score(const TokenSequence& hyp, const TokenSequence& ref, TokenEmbedder& embedder);

// ---- Corpus aggregation ----

/// One row of B-U / M-R / R-L / B-S over hypothesis-reference string pairs.
/// BLEU is corpus-level; the other metrics are arithmetic means.
MetricReport corpus_report(const std::vector<std::pair<std::string, std::string>>& pairs,
                           TokenEmbedder& embedder, const std::string& row_key = "corpus",
                           const BleuWeights& weights = kUniformBleuWeights);

} // namespace musiscene::text
