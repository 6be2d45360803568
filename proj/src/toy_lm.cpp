#include "musiscene/toy_lm.hpp"

#include <cctype>
#include <cmath>
#include <cstring>
#include <functional>

#include "musiscene/error.hpp"
#include "musiscene/rng.hpp"
#include "musiscene/sha256.hpp"

namespace musiscene::model {

namespace {

constexpr std::string_view kCharset = "abcdefghijklmnopqrstuvwxyz0123456789 .,?!'\"-:;()";
constexpr std::string_view kIdentityPrefix = "toy-lm/v1?";

Eigen::MatrixXd seeded_normal(Rng& rng, Eigen::Index rows, Eigen::Index cols, double stddev) {
    Eigen::MatrixXd m(rows, cols);
    for (Eigen::Index r = 0; r < rows; ++r) {
        for (Eigen::Index c = 0; c < cols; ++c) m(r, c) = stddev * rng.next_normal();
    }
    return m;
}

std::string u64_to_string(std::uint64_t v) {
    return std::to_string(v);
}

} // namespace

CharVocab::CharVocab() : id_to_char_(kCharset) {
    for (int i = 0; i < 256; ++i) char_to_id_[i] = kUnkId;
    for (size_t i = 0; i < id_to_char_.size(); ++i) {
        char_to_id_[static_cast<unsigned char>(id_to_char_[i])] = static_cast<int>(i) + 2;
    }
}

int CharVocab::encode_char(char c) const {
    const unsigned char lowered =
        static_cast<unsigned char>(std::tolower(static_cast<unsigned char>(c)));
    return char_to_id_[lowered];
}

std::vector<int> CharVocab::encode(std::string_view text, bool append_eos) const {
    std::vector<int> ids;
    ids.reserve(text.size() + (append_eos ? 1 : 0));
    for (char c : text) ids.push_back(encode_char(c));
    if (append_eos) ids.push_back(kEosId);
    return ids;
}

std::string CharVocab::decode(const std::vector<int>& ids) const {
    std::string out;
    for (int id : ids) {
        if (id == kEosId) break;
        if (id == kUnkId) {
            out.push_back('?');
            continue;
        }
        require(id >= 2 && id < size(), "decode: token id out of vocabulary");
        out.push_back(id_to_char_[static_cast<size_t>(id - 2)]);
    }
    return out;
}

void ToyLmConfig::validate() const {
    require(model_dim > 0, "language model config: model_dim must be positive");
    require(num_layers > 0 && num_layers <= 4,
            "language model config: num_layers must be in [1, 4]");
    require(ff_hidden > 0, "language model config: ff_hidden must be positive");
    require(max_seq_len > 0, "language model config: max_seq_len must be positive");
}

ToyLm::ToyLm(const ToyLmConfig& config) : config_(config) {
    config_.validate();
    if (config_.vocab_size == 0) config_.vocab_size = vocab_.size();
    require(config_.vocab_size == vocab_.size(),
            "language model config: vocab_size does not match the character vocabulary");

    Rng rng(config_.seed);
    const int d = config_.model_dim;
    const int v = config_.vocab_size;
    const int ff = config_.ff_hidden;
    const double ds = 1.0 / std::sqrt(static_cast<double>(d));
    const double fs = 1.0 / std::sqrt(static_cast<double>(ff));

    token_embedding_ = seeded_normal(rng, v, d, 0.5);
    pos_embedding_ = seeded_normal(rng, config_.max_seq_len, d, 0.5);
    layers_.resize(static_cast<size_t>(config_.num_layers));
    for (auto& layer : layers_) {
        layer.ln1_gamma = Eigen::MatrixXd::Ones(1, d);
        layer.ln1_beta = Eigen::MatrixXd::Zero(1, d);
        layer.wq = seeded_normal(rng, d, d, ds);
        layer.wk = seeded_normal(rng, d, d, ds);
        layer.wv = seeded_normal(rng, d, d, ds);
        layer.wo = seeded_normal(rng, d, d, ds);
        layer.ln2_gamma = Eigen::MatrixXd::Ones(1, d);
        layer.ln2_beta = Eigen::MatrixXd::Zero(1, d);
        layer.w1 = seeded_normal(rng, d, ff, ds);
        layer.b1 = Eigen::MatrixXd::Zero(1, ff);
        layer.w2 = seeded_normal(rng, ff, d, fs);
        layer.b2 = Eigen::MatrixXd::Zero(1, d);
    }
    final_gamma_ = Eigen::MatrixXd::Ones(1, d);
    final_beta_ = Eigen::MatrixXd::Zero(1, d);
    head_w_ = seeded_normal(rng, d, v, ds);
    head_b_ = Eigen::MatrixXd::Zero(1, v);
}

std::string ToyLm::identity() const {
    std::string s(kIdentityPrefix);
    s += "dim=" + std::to_string(config_.model_dim);
    s += "&layers=" + std::to_string(config_.num_layers);
    s += "&ff=" + std::to_string(config_.ff_hidden);
    s += "&max_seq=" + std::to_string(config_.max_seq_len);
    s += "&seed=" + u64_to_string(config_.seed);
    s += "&vocab=" + std::to_string(config_.vocab_size);
    return s;
}

ToyLm ToyLm::from_identity(const std::string& identity) {
    require(identity.rfind(kIdentityPrefix, 0) == 0,
            "unrecognized language model identity: " + identity);
    ToyLmConfig cfg;
    std::string query = identity.substr(kIdentityPrefix.size());
    size_t pos = 0;
    while (pos < query.size()) {
        size_t amp = query.find('&', pos);
        if (amp == std::string::npos) amp = query.size();
        const std::string item = query.substr(pos, amp - pos);
        const size_t eq = item.find('=');
        require(eq != std::string::npos,
                "malformed language model identity component: " + item);
        const std::string key = item.substr(0, eq);
        const std::string value = item.substr(eq + 1);
        try {
            if (key == "dim") {
                cfg.model_dim = std::stoi(value);
            } else if (key == "layers") {
                cfg.num_layers = std::stoi(value);
            } else if (key == "ff") {
                cfg.ff_hidden = std::stoi(value);
            } else if (key == "max_seq") {
                cfg.max_seq_len = std::stoi(value);
            } else if (key == "seed") {
                cfg.seed = std::stoull(value);
            } else if (key == "vocab") {
                cfg.vocab_size = std::stoi(value);
            } else {
                fail("unknown language model identity key: " + key);
            }
        } catch (const Error&) {
            throw;
        } catch (const std::exception&) {
            fail("malformed language model identity value: " + item);
        }
        pos = amp + 1;
    }
    return ToyLm(cfg);
}

long long ToyLm::parameter_count() const {
    long long count = 0;
    for_each_parameter([&count](const std::string&, const Eigen::MatrixXd& m) {
        count += static_cast<long long>(m.size());
    });
    return count;
}

void ToyLm::for_each_parameter(
    const std::function<void(const std::string&, const Eigen::MatrixXd&)>& fn) const {
    fn("lm.token_embedding", token_embedding_);
    fn("lm.pos_embedding", pos_embedding_);
    for (size_t i = 0; i < layers_.size(); ++i) {
        const std::string base = "lm.layers." + std::to_string(i) + ".";
        const LmLayer& l = layers_[i];
        fn(base + "ln1_gamma", l.ln1_gamma);
        fn(base + "ln1_beta", l.ln1_beta);
        fn(base + "wq", l.wq);
        fn(base + "wk", l.wk);
        fn(base + "wv", l.wv);
        fn(base + "wo", l.wo);
        fn(base + "ln2_gamma", l.ln2_gamma);
        fn(base + "ln2_beta", l.ln2_beta);
        fn(base + "w1", l.w1);
        fn(base + "b1", l.b1);
        fn(base + "w2", l.w2);
        fn(base + "b2", l.b2);
    }
    fn("lm.final_gamma", final_gamma_);
    fn("lm.final_beta", final_beta_);
    fn("lm.head_w", head_w_);
    fn("lm.head_b", head_b_);
}

std::string ToyLm::weights_digest() const {
    Sha256 hasher;
    for_each_parameter([&hasher](const std::string& name, const Eigen::MatrixXd& m) {
        hasher.update(name);
        hasher.update(std::string_view(reinterpret_cast<const char*>(m.data()),
                                       static_cast<size_t>(m.size()) * sizeof(double)));
    });
    return hasher.hex_digest();
}

Var ToyLm::forward_logits(Tape& tape, const std::vector<int>& tokens,
                          const PrefixInjection* injection) const {
    require(!tokens.empty(), "forward: empty token sequence");
    const Eigen::Index t = static_cast<Eigen::Index>(tokens.size());
    require(t <= config_.max_seq_len,
            "forward: sequence length " + std::to_string(tokens.size()) +
                " exceeds max_seq_len " + std::to_string(config_.max_seq_len));
    const int d = config_.model_dim;

    Eigen::MatrixXd embedded(t, d);
    for (Eigen::Index i = 0; i < t; ++i) {
        const int id = tokens[static_cast<size_t>(i)];
        require(id >= 0 && id < config_.vocab_size, "forward: token id out of vocabulary");
        embedded.row(i) = token_embedding_.row(id) + pos_embedding_.row(i);
    }

    int first_injected = config_.num_layers;
    if (injection != nullptr) {
        require(injection->num_injected_layers >= 0 &&
                    injection->num_injected_layers <= config_.num_layers,
                "forward: injected layer count out of range");
        require(injection->prefix.valid() && injection->gates.valid(),
                "forward: injection requires prefix and gate nodes");
        require(tape.value(injection->prefix).cols() == d,
                "forward: prefix width must equal model_dim");
        require(tape.value(injection->gates).rows() == injection->num_injected_layers &&
                    tape.value(injection->gates).cols() == 1,
                "forward: gates must be [num_injected_layers x 1]");
        first_injected = config_.num_layers - injection->num_injected_layers;
    }

    BoolMask causal(t, t);
    for (Eigen::Index r = 0; r < t; ++r) {
        for (Eigen::Index c = 0; c < t; ++c) causal(r, c) = c <= r;
    }
    const double inv_sqrt_d = 1.0 / std::sqrt(static_cast<double>(d));

    Var x = tape.leaf(std::move(embedded));
    for (int li = 0; li < config_.num_layers; ++li) {
        const LmLayer& layer = layers_[static_cast<size_t>(li)];
        Var ln1_g = tape.leaf(layer.ln1_gamma);
        Var ln1_b = tape.leaf(layer.ln1_beta);
        Var normed = tape.layer_norm(x, ln1_g, ln1_b);

        Var q = tape.matmul(normed, tape.leaf(layer.wq));
        Var k = tape.matmul(normed, tape.leaf(layer.wk));
        Var v = tape.matmul(normed, tape.leaf(layer.wv));
        Var scores = tape.scale_const(tape.matmul_nt(q, k), inv_sqrt_d);
        Var attn = tape.matmul(tape.row_softmax(scores, causal), v);

        if (injection != nullptr && li >= first_injected) {
            // The prefix rows join the attention as extra attendable context:
            // one softmax over [context | prefix] slots, factorized into the
            // two block softmaxes mixed by their exp masses, with the prefix
            // mass multiplied by a per-layer learned gate. A zero gate gives a
            // zero mix weight, so the ungated output is reproduced exactly
            // (adding an all-zero matrix changes no bits). Keys come from the
            // layer-normed prefix so routing cannot saturate when the adapter
            // grows its output; values come from the raw prefix so the
            // adapter alone decides how strongly the injected content shifts
            // the residual stream.
            Var pnormed = tape.layer_norm(injection->prefix, ln1_g, ln1_b);
            Var pk = tape.matmul(pnormed, tape.leaf(layer.wk));
            Var pv = tape.matmul(injection->prefix, tape.leaf(layer.wv));
            Var pscores = tape.scale_const(tape.matmul_nt(q, pk), inv_sqrt_d);
            Var pattn = tape.matmul(tape.row_softmax(pscores), pv);

            // Shared per-row shift over both blocks keeps the raw exp sums in
            // range; it cancels in the mass ratio, so it is a constant leaf.
            const Eigen::MatrixXd& sv = tape.value(scores);
            const Eigen::MatrixXd& pw = tape.value(pscores);
            Eigen::MatrixXd shift(t, 1);
            for (Eigen::Index r = 0; r < t; ++r) {
                double mx = pw.row(r).maxCoeff();
                for (Eigen::Index c = 0; c <= r; ++c) mx = std::max(mx, sv(r, c));
                shift(r, 0) = -mx;
            }
            Var shift_col = tape.leaf(std::move(shift));
            Var ctx_mass = tape.row_sum(tape.masked_exp(tape.add_col(scores, shift_col), causal));
            Var pre_mass = tape.row_sum(tape.masked_exp(tape.add_col(pscores, shift_col)));
            // gates row (li - first_injected) selects this layer's gate.
            Eigen::MatrixXd pick = Eigen::MatrixXd::Zero(1, tape.value(injection->gates).rows());
            pick(0, li - first_injected) = 1.0;
            Var gate = tape.matmul(tape.leaf(std::move(pick)), injection->gates);
            Var gated_mass = tape.scale(pre_mass, gate);
            Var mix = tape.div(gated_mass, tape.add(ctx_mass, gated_mass));
            Var delta = tape.add(pattn, tape.scale_const(attn, -1.0));
            attn = tape.add(attn, tape.scale_rows(delta, mix));
        }

        x = tape.add(x, tape.matmul(attn, tape.leaf(layer.wo)));

        Var ln2_g = tape.leaf(layer.ln2_gamma);
        Var ln2_b = tape.leaf(layer.ln2_beta);
        Var normed2 = tape.layer_norm(x, ln2_g, ln2_b);
        Var h = tape.silu(tape.add_row(tape.matmul(normed2, tape.leaf(layer.w1)),
                                       tape.leaf(layer.b1)));
        Var ff = tape.add_row(tape.matmul(h, tape.leaf(layer.w2)), tape.leaf(layer.b2));
        x = tape.add(x, ff);
    }

    Var final_normed =
        tape.layer_norm(x, tape.leaf(final_gamma_), tape.leaf(final_beta_));
    return tape.add_row(tape.matmul(final_normed, tape.leaf(head_w_)), tape.leaf(head_b_));
}

} // namespace musiscene::model
