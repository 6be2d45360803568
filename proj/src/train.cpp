#include "musiscene/train.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <map>

#include "musiscene/error.hpp"
#include "musiscene/log.hpp"
#include "musiscene/rng.hpp"
#include "musiscene/sha256.hpp"
#include "musiscene/wav.hpp"

namespace musiscene::train {

namespace {

std::vector<Eigen::MatrixXd*> parameter_slots(model::AdapterParameters& p) {
    std::vector<Eigen::MatrixXd*> slots;
    p.for_each([&slots](const std::string&, Eigen::MatrixXd& m) { slots.push_back(&m); });
    return slots;
}

std::string format_loss(double loss) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.6f", loss);
    return buf;
}

} // namespace

void TrainConfig::validate() const {
    require(epochs > 0, "train config: epochs must be positive");
    require(batch_size > 0, "train config: batch_size must be positive");
    require(learning_rate > 0.0 && std::isfinite(learning_rate),
            "train config: learning_rate must be positive and finite");
    require(train_fraction > 0.0 && train_fraction < 1.0,
            "train config: train_fraction must be in (0, 1)");
    require(!question_template.empty(), "train config: question_template must not be empty");
    require(stop_loss >= 0.0, "train config: stop_loss must be non-negative");
}

AdamState AdamState::init(const model::AdapterParameters& params) {
    AdamState s;
    s.m = model::AdapterParameters::zeros_like(params);
    s.v = model::AdapterParameters::zeros_like(params);
    return s;
}

void AdamState::apply(model::AdapterParameters& params, const model::AdapterParameters& grads,
                      double lr) {
    ++step;
    auto p_slots = parameter_slots(params);
    auto g_slots = parameter_slots(const_cast<model::AdapterParameters&>(grads));
    auto m_slots = parameter_slots(m);
    auto v_slots = parameter_slots(v);
    require(p_slots.size() == g_slots.size() && p_slots.size() == m_slots.size() &&
                p_slots.size() == v_slots.size(),
            "optimizer: parameter/gradient structure mismatch");
    const double bc1 = 1.0 - std::pow(beta1, static_cast<double>(step));
    const double bc2 = 1.0 - std::pow(beta2, static_cast<double>(step));
    for (size_t i = 0; i < p_slots.size(); ++i) {
        Eigen::MatrixXd& pm = *p_slots[i];
        const Eigen::MatrixXd& gm = *g_slots[i];
        Eigen::MatrixXd& mm = *m_slots[i];
        Eigen::MatrixXd& vm = *v_slots[i];
        require(pm.rows() == gm.rows() && pm.cols() == gm.cols(),
                "optimizer: gradient shape mismatch");
        mm = beta1 * mm + (1.0 - beta1) * gm;
        vm = beta2 * vm + (1.0 - beta2) * gm.cwiseProduct(gm);
        const Eigen::ArrayXXd m_hat = mm.array() / bc1;
        const Eigen::ArrayXXd v_hat = vm.array() / bc2;
        pm.array() -= lr * m_hat / (v_hat.sqrt() + eps);
    }
}

TrainResult train(const std::vector<TrainSample>& samples, const model::ToyLm& lm,
                  const model::AdapterConfig& adapter_config, const TrainConfig& config) {
    config.validate();
    adapter_config.validate();
    require(!samples.empty(), "train: empty training set");
    for (const auto& s : samples) {
        s.features.validate();
        require(!s.question.empty(), "train: sample '" + s.clip_id + "' has an empty question");
        require(!s.answer.empty(), "train: sample '" + s.clip_id + "' has an empty answer");
    }

    const model::CharVocab& vocab = lm.vocab();
    struct Encoded {
        const TrainSample* sample;
        std::vector<int> question;
        std::vector<int> answer;
    };
    std::vector<Encoded> encoded;
    encoded.reserve(samples.size());
    for (const auto& s : samples) {
        encoded.push_back({&s, vocab.encode(s.question), vocab.encode(s.answer)});
    }

    model::AdapterParameters params =
        model::AdapterParameters::init(adapter_config, config.seed);
    AdamState adam = AdamState::init(params);

    TrainResult result;
    std::vector<size_t> order(encoded.size());
    for (size_t i = 0; i < order.size(); ++i) order[i] = i;

    for (int epoch = 1; epoch <= config.epochs; ++epoch) {
        const auto epoch_start = std::chrono::steady_clock::now();
        Rng shuffle_rng(sha256_prefix64("train-shuffle:" + std::to_string(config.seed) +
                                        ":" + std::to_string(epoch)));
        shuffle_rng.shuffle(order);

        double epoch_loss_weighted = 0.0;
        long long epoch_tokens = 0;
        for (size_t batch_start = 0; batch_start < order.size();
             batch_start += static_cast<size_t>(config.batch_size)) {
            const size_t batch_end =
                std::min(order.size(), batch_start + static_cast<size_t>(config.batch_size));
            model::AdapterParameters grads = model::AdapterParameters::zeros_like(params);
            auto grad_slots = parameter_slots(grads);
            double batch_loss_weighted = 0.0;
            long long batch_tokens = 0;

            for (size_t bi = batch_start; bi < batch_end; ++bi) {
                const Encoded& item = encoded[order[bi]];
                model::Tape tape;
                model::SampleGraph graph =
                    model::build_sample_graph(tape, lm, adapter_config, params,
                                              item.sample->features, item.question,
                                              item.answer);
                const double loss = tape.value(graph.loss)(0, 0);
                require(std::isfinite(loss),
                        "training diverged: non-finite loss at epoch " +
                            std::to_string(epoch) + " on clip '" + item.sample->clip_id +
                            "'");
                tape.backward(graph.loss);

                const double w = static_cast<double>(graph.answer_token_count);
                batch_loss_weighted += w * loss;
                batch_tokens += graph.answer_token_count;

                // Gather sample gradients in for_each order, weighted by the
                // sample's scored token count.
                std::vector<const Eigen::MatrixXd*> sample_grads;
                sample_grads.push_back(&tape.grad(graph.vars.conv_kernel));
                for (const auto& [w_var, b_var] : graph.vars.dense) {
                    sample_grads.push_back(&tape.grad(w_var));
                    sample_grads.push_back(&tape.grad(b_var));
                }
                sample_grads.push_back(&tape.grad(graph.vars.gates));
                require(sample_grads.size() == grad_slots.size(),
                        "training: gradient structure mismatch");
                for (size_t gi = 0; gi < grad_slots.size(); ++gi) {
                    *grad_slots[gi] += w * (*sample_grads[gi]);
                }
            }

            require(batch_tokens > 0, "training: batch scored no tokens");
            const double inv = 1.0 / static_cast<double>(batch_tokens);
            for (auto* g : grad_slots) (*g) *= inv;
            adam.apply(params, grads, config.learning_rate);
            epoch_loss_weighted += batch_loss_weighted;
            epoch_tokens += batch_tokens;
        }

        const double mean_loss = epoch_loss_weighted / static_cast<double>(epoch_tokens);
        const double seconds =
            std::chrono::duration<double>(std::chrono::steady_clock::now() - epoch_start)
                .count();
        result.log.push_back(TrainLogEntry{epoch, mean_loss, seconds});
        if (config.log_progress) {
            log::info("epoch " + std::to_string(epoch) + "/" + std::to_string(config.epochs) +
                      " mean_loss=" + format_loss(mean_loss));
        }
        if (config.stop_loss > 0.0 && mean_loss < config.stop_loss) break;
    }

    model::Checkpoint ckpt;
    ckpt.config = adapter_config;
    ckpt.params = std::move(params);
    ckpt.backbone_identity = lm.identity();
    ckpt.metadata = nlohmann::json{
        {"epochs_configured", config.epochs},
        {"epochs_run", static_cast<int>(result.log.size())},
        {"final_loss", result.log.back().mean_loss},
        {"learning_rate", config.learning_rate},
        {"batch_size", config.batch_size},
        {"seed", config.seed},
        {"num_samples", static_cast<long long>(samples.size())},
        {"question_template", config.question_template}};
    result.checkpoint = std::move(ckpt);
    return result;
}

std::string decode_answer(const model::ToyLm& lm, const model::AdapterConfig& config,
                          const model::AdapterParameters& params,
                          const model::AudioFeatureStack& features,
                          const std::string& question, const DecodeConfig& decode) {
    require(decode.max_new_tokens > 0, "decode: max length must be positive");
    require(!question.empty(), "decode: empty question");
    require(decode.temperature > 0.0, "decode: temperature must be positive");
    params.validate_against(config);

    // The prefix depends only on the clip features; compute it once.
    Eigen::MatrixXd prefix;
    {
        model::Tape tape;
        model::AdapterVars vars = model::lift_adapter(tape, params, false);
        prefix = tape.value(model::build_prefix(tape, features, config, vars));
    }

    const model::CharVocab& vocab = lm.vocab();
    std::vector<int> tokens = vocab.encode(question);
    const size_t question_len = tokens.size();
    Rng rng(decode.seed);

    for (int step = 0; step < decode.max_new_tokens; ++step) {
        if (static_cast<int>(tokens.size()) >= lm.config().max_seq_len) break;
        model::Tape tape;
        model::PrefixInjection inj;
        inj.prefix = tape.leaf(prefix, false);
        inj.gates = tape.leaf(params.gates, false);
        inj.num_injected_layers = config.injected_layers;
        const model::Var logits = lm.forward_logits(tape, tokens, &inj);
        const Eigen::RowVectorXd last = tape.value(logits).row(
            static_cast<Eigen::Index>(tokens.size()) - 1);

        int next = 0;
        if (decode.greedy) {
            double best = last(0);
            for (Eigen::Index i = 1; i < last.size(); ++i) {
                if (last(i) > best) {
                    best = last(i);
                    next = static_cast<int>(i);
                }
            }
        } else {
            const Eigen::ArrayXd scaled = last.array() / decode.temperature;
            const double mx = scaled.maxCoeff();
            Eigen::ArrayXd probs = (scaled - mx).exp();
            probs /= probs.sum();
            const double u = rng.next_unit();
            double acc = 0.0;
            next = static_cast<int>(last.size()) - 1;
            for (Eigen::Index i = 0; i < probs.size(); ++i) {
                acc += probs(i);
                if (u < acc) {
                    next = static_cast<int>(i);
                    break;
                }
            }
        }
        if (next == model::CharVocab::kEosId) break;
        tokens.push_back(next);
    }
    return vocab.decode(std::vector<int>(tokens.begin() + static_cast<long>(question_len),
                                         tokens.end()));
}

std::string normalize_text(const model::CharVocab& vocab, const std::string& text) {
    return vocab.decode(vocab.encode(text));
}

MetricReport evaluate_checkpoint(const model::ToyLm& lm, const model::Checkpoint& checkpoint,
                                 const std::vector<TrainSample>& samples,
                                 text::TokenEmbedder& embedder, const std::string& row_key,
                                 const DecodeConfig& decode) {
    checkpoint.validate();
    require(!samples.empty(), "evaluate: empty evaluation set");
    require(checkpoint.backbone_identity == lm.identity(),
            "evaluate: checkpoint was trained against backbone '" +
                checkpoint.backbone_identity + "' but got '" + lm.identity() + "'");
    std::vector<std::pair<std::string, std::string>> pairs;
    pairs.reserve(samples.size());
    for (const auto& s : samples) {
        const std::string hyp = decode_answer(lm, checkpoint.config, checkpoint.params,
                                              s.features, s.question, decode);
        pairs.emplace_back(hyp, normalize_text(lm.vocab(), s.answer));
    }
    return text::corpus_report(pairs, embedder, row_key);
}

FeatureResolver::FeatureResolver(std::filesystem::path features_dir,
                                 model::ToyFeatureEncoder encoder,
                                 std::filesystem::path audio_root)
    : features_dir_(std::move(features_dir)),
      encoder_(std::move(encoder)),
      audio_root_(std::move(audio_root)) {}

model::AudioFeatureStack FeatureResolver::resolve(const std::string& clip_id,
                                                  const std::string& audio_path) const {
    if (!features_dir_.empty()) {
        const std::filesystem::path candidate = features_dir_ / (clip_id + ".f32a");
        if (std::filesystem::exists(candidate)) {
            return model::read_feature_stack(candidate, clip_id);
        }
    }
    if (!audio_path.empty()) {
        std::filesystem::path wav_path(audio_path);
        if (wav_path.is_relative() && !audio_root_.empty()) {
            wav_path = audio_root_ / wav_path;
        }
        if (std::filesystem::exists(wav_path)) {
            return encoder_.encode(read_wav(wav_path), clip_id);
        }
    }
    fail("no features for clip '" + clip_id + "': no feature file under '" +
         features_dir_.string() + "' and no audio file at '" + audio_path + "'");
}

std::vector<TrainSample> make_samples(const std::vector<corpus::CaptionBundle>& bundles,
                                      const std::vector<corpus::ClipRecord>& manifest,
                                      const FeatureResolver& resolver,
                                      const std::string& question_template) {
    require(!question_template.empty(), "dataset: question template must not be empty");
    std::map<std::string, const corpus::ClipRecord*> by_id;
    for (const auto& rec : manifest) by_id[rec.clip_id] = &rec;

    std::vector<TrainSample> samples;
    samples.reserve(bundles.size());
    for (const auto& bundle : bundles) {
        require(!bundle.msi_caption.empty(),
                "dataset: bundle '" + bundle.clip_id + "' has no scene answer");
        const auto it = by_id.find(bundle.clip_id);
        const std::string audio_path =
            it == by_id.end() ? std::string() : it->second->audio_path;
        TrainSample s;
        s.clip_id = bundle.clip_id;
        s.features = resolver.resolve(bundle.clip_id, audio_path);
        s.question = question_template;
        s.answer = bundle.msi_caption;
        samples.push_back(std::move(s));
    }
    return samples;
}

} // namespace musiscene::train
