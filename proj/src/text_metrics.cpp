#include "musiscene/text_metrics.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <unordered_map>

#include "musiscene/error.hpp"
#include "musiscene/rng.hpp"
#include "musiscene/sha256.hpp"

namespace musiscene::text {

TokenSequence tokenize(const std::string& raw) {
    TokenSequence seq;
    seq.source = raw;
    std::string cur;
    auto flush = [&] {
        if (!cur.empty()) {
            seq.tokens.push_back(cur);
            cur.clear();
        }
    };
    for (const unsigned char c : raw) {
        if (std::isspace(c)) {
            flush();
        } else if (std::isalnum(c) || c >= 0x80) {
            // non-ASCII bytes stay inside the word; only ASCII is lowercased
            cur.push_back(char(std::tolower(c)));
        } else {
            flush();
            seq.tokens.emplace_back(1, char(c));
        }
    }
    flush();
    return seq;
}

namespace {

// n-grams keyed as tokens joined with an unlikely separator byte
std::unordered_map<std::string, long long> ngram_counts(const TokenSequence& seq, int n) {
    std::unordered_map<std::string, long long> counts;
    if (static_cast<int>(seq.size()) < n) {
        return counts;
    }
    for (size_t i = 0; i + n <= seq.size(); ++i) {
        std::string key;
        for (int k = 0; k < n; ++k) {
            key += seq.tokens[i + k];
            key.push_back('\x1f');
        }
        ++counts[key];
    }
    return counts;
}

size_t closest_ref_length(size_t hyp_len, const std::vector<TokenSequence>& refs) {
    size_t best = 0;
    bool first = true;
    for (const auto& ref : refs) {
        const size_t len = ref.size();
        if (first) {
            best = len;
            first = false;
            continue;
        }
        const auto dist = [&](size_t l) {
            return l > hyp_len ? l - hyp_len : hyp_len - l;
        };
        if (dist(len) < dist(best) || (dist(len) == dist(best) && len < best)) {
            best = len;
        }
    }
    return best;
}

double combine_bleu(const std::array<double, 4>& precisions, const BleuWeights& weights,
                    long long hyp_len, long long ref_len) {
    if (hyp_len == 0) {
        return 0.0;
    }
    double log_sum = 0.0;
    for (int n = 0; n < 4; ++n) {
        if (weights[n] <= 0.0) {
            continue;
        }
        if (precisions[n] <= 0.0) {
            return 0.0;
        }
        log_sum += weights[n] * std::log(precisions[n]);
    }
    const double bp =
        hyp_len < ref_len ? std::exp(1.0 - double(ref_len) / double(hyp_len)) : 1.0;
    return bp * std::exp(log_sum);
}

void check_weights(const BleuWeights& weights) {
    double sum = 0.0;
    for (const double w : weights) {
        require(w >= 0.0, "BLEU weights must be non-negative");
        sum += w;
    }
    require(std::abs(sum - 1.0) <= 1e-9, "BLEU weights must sum to 1");
}

} // namespace

NgramMatch bleu_counts(const TokenSequence& hyp, const std::vector<TokenSequence>& refs, int n) {
    require(n >= 1, "n-gram order must be >= 1");
    NgramMatch out;
    out.total = static_cast<int>(hyp.size()) >= n ? (long long)hyp.size() - n + 1 : 0;
    if (out.total == 0) {
        return out;
    }
    const auto hyp_counts = ngram_counts(hyp, n);
    std::unordered_map<std::string, long long> max_ref;
    for (const auto& ref : refs) {
        for (const auto& [gram, count] : ngram_counts(ref, n)) {
            auto& slot = max_ref[gram];
            slot = std::max(slot, count);
        }
    }
    for (const auto& [gram, count] : hyp_counts) {
        const auto it = max_ref.find(gram);
        if (it != max_ref.end()) {
            out.matches += std::min(count, it->second);
        }
    }
    return out;
}

double bleu_n(const TokenSequence& hyp, const std::vector<TokenSequence>& refs, int n) {
    const NgramMatch c = bleu_counts(hyp, refs, n);
    if (c.matches == 0 && n > 1) {
        return double(c.matches + 1) / double(c.total + 1);
    }
    if (c.total == 0) {
        return 0.0;
    }
    return double(c.matches) / double(c.total);
}

double bleu_weighted(const TokenSequence& hyp, const std::vector<TokenSequence>& refs,
                     const BleuWeights& weights) {
    check_weights(weights);
    std::array<double, 4> precisions{};
    for (int n = 1; n <= 4; ++n) {
        precisions[n - 1] = bleu_n(hyp, refs, n);
    }
    return combine_bleu(precisions, weights, (long long)hyp.size(),
                        (long long)closest_ref_length(hyp.size(), refs));
}

double corpus_bleu(const std::vector<std::pair<TokenSequence, TokenSequence>>& pairs,
                   const BleuWeights& weights) {
    check_weights(weights);
    require(!pairs.empty(), "corpus BLEU needs at least one pair");
    std::array<NgramMatch, 4> agg{};
    long long hyp_len = 0;
    long long ref_len = 0;
    for (const auto& [hyp, ref] : pairs) {
        const std::vector<TokenSequence> refs{ref};
        for (int n = 1; n <= 4; ++n) {
            const NgramMatch c = bleu_counts(hyp, refs, n);
            agg[n - 1].matches += c.matches;
            agg[n - 1].total += c.total;
        }
        hyp_len += (long long)hyp.size();
        ref_len += (long long)closest_ref_length(hyp.size(), refs);
    }
    std::array<double, 4> precisions{};
    for (int n = 1; n <= 4; ++n) {
        const NgramMatch& c = agg[n - 1];
        if (c.matches == 0 && n > 1) {
            precisions[n - 1] = double(c.matches + 1) / double(c.total + 1);
        } else {
            precisions[n - 1] = c.total == 0 ? 0.0 : double(c.matches) / double(c.total);
        }
    }
    return combine_bleu(precisions, weights, hyp_len, ref_len);
}

MeteorAlignment meteor_align(const TokenSequence& hyp, const TokenSequence& ref) {
    MeteorAlignment out;
    std::vector<bool> used_h(hyp.size(), false);
    std::vector<bool> used_r(ref.size(), false);
    for (;;) {
        // longest common fragment of still-unmatched tokens; ties resolve to
        // the leftmost hypothesis position, then the leftmost reference one
        size_t best_len = 0, best_i = 0, best_j = 0;
        for (size_t i = 0; i < hyp.size(); ++i) {
            if (used_h[i]) {
                continue;
            }
            for (size_t j = 0; j < ref.size(); ++j) {
                if (used_r[j]) {
                    continue;
                }
                size_t len = 0;
                while (i + len < hyp.size() && j + len < ref.size() && !used_h[i + len] &&
                       !used_r[j + len] && hyp.tokens[i + len] == ref.tokens[j + len]) {
                    ++len;
                }
                if (len > best_len) {
                    best_len = len;
                    best_i = i;
                    best_j = j;
                }
            }
        }
        if (best_len == 0) {
            break;
        }
        for (size_t k = 0; k < best_len; ++k) {
            used_h[best_i + k] = true;
            used_r[best_j + k] = true;
        }
        out.matches += static_cast<int>(best_len);
        out.chunks += 1;
    }
    return out;
}

double meteor(const TokenSequence& hyp, const TokenSequence& ref, const MeteorParams& params) {
    if (hyp.empty() || ref.empty()) {
        return 0.0;
    }
    const MeteorAlignment a = meteor_align(hyp, ref);
    if (a.matches == 0) {
        return 0.0;
    }
    const double m = a.matches;
    const double precision = m / double(hyp.size());
    const double recall = m / double(ref.size());
    const double f = precision * recall /
                     (params.alpha * precision + (1.0 - params.alpha) * recall);
    const double penalty = params.gamma * std::pow(double(a.chunks) / m, params.beta);
    return f * (1.0 - penalty);
}

int lcs_length(const TokenSequence& a, const TokenSequence& b) {
    const size_t n = a.size(), m = b.size();
    std::vector<int> prev(m + 1, 0), cur(m + 1, 0);
    for (size_t i = 1; i <= n; ++i) {
        for (size_t j = 1; j <= m; ++j) {
            cur[j] = a.tokens[i - 1] == b.tokens[j - 1] ? prev[j - 1] + 1
                                                        : std::max(prev[j], cur[j - 1]);
        }
        std::swap(prev, cur);
    }
    return prev[m];
}

double rouge_l(const TokenSequence& hyp, const TokenSequence& ref) {
    if (hyp.empty() || ref.empty()) {
        return 0.0;
    }
    const int lcs = lcs_length(hyp, ref);
    if (lcs == 0) {
        return 0.0;
    }
    const double precision = double(lcs) / double(hyp.size());
    const double recall = double(lcs) / double(ref.size());
    return 2.0 * precision * recall / (precision + recall);
}

Eigen::MatrixXd HashTokenEmbedder::embed(const std::vector<std::string>& tokens) {
    Eigen::MatrixXd out(tokens.size(), dim_);
    for (size_t t = 0; t < tokens.size(); ++t) {
        Rng rng(sha256_prefix64("token-embedding:" + tokens[t]));
        for (int d = 0; d < dim_; ++d) {
            out(t, d) = rng.next_normal();
        }
        const double norm = out.row(t).norm();
        out.row(t) /= norm > 0 ? norm : 1.0;
    }
    return out;
}

BertScore bert_score(const TokenSequence& hyp, const TokenSequence& ref,
                     TokenEmbedder& embedder) {
    BertScore score;
    if (hyp.empty() || ref.empty()) {
        return score;
    }
    const Eigen::MatrixXd h = embedder.embed(hyp.tokens);
    const Eigen::MatrixXd r = embedder.embed(ref.tokens);
    require(h.rows() == Eigen::Index(hyp.size()) && r.rows() == Eigen::Index(ref.size()),
            "embedder returned wrong number of rows");
    require(h.cols() == r.cols(), "embedder returned inconsistent dimensions");
    const Eigen::MatrixXd sim = h * r.transpose();
    score.precision = std::clamp(sim.rowwise().maxCoeff().mean(), 0.0, 1.0);
    score.recall = std::clamp(sim.colwise().maxCoeff().mean(), 0.0, 1.0);
    const double denom = score.precision + score.recall;
    score.f1 = denom > 0.0 ? 2.0 * score.precision * score.recall / denom : 0.0;
    return score;
}

MetricReport corpus_report(const std::vector<std::pair<std::string, std::string>>& pairs,
                           TokenEmbedder& embedder, const std::string& row_key,
                           const BleuWeights& weights) {
    require(!pairs.empty(), "corpus report needs at least one pair");
    std::vector<std::pair<TokenSequence, TokenSequence>> tokenized;
    tokenized.reserve(pairs.size());
    for (const auto& [hyp, ref] : pairs) {
        tokenized.emplace_back(tokenize(hyp), tokenize(ref));
    }
    double meteor_sum = 0.0, rouge_sum = 0.0, bert_sum = 0.0;
    for (const auto& [hyp, ref] : tokenized) {
        meteor_sum += meteor(hyp, ref);
        rouge_sum += rouge_l(hyp, ref);
        bert_sum += bert_score(hyp, ref, embedder).f1;
    }
    const double n = double(pairs.size());
    MetricReport report;
    report.rows[row_key] = {{"B-U", corpus_bleu(tokenized, weights)},
                            {"M-R", meteor_sum / n},
                            {"R-L", rouge_sum / n},
                            {"B-S", bert_sum / n}};
    return report;
}

} // namespace musiscene::text
