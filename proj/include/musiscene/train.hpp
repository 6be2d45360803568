#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "musiscene/adapter.hpp"
#include "musiscene/checkpoint.hpp"
#include "musiscene/corpus.hpp"
#include "musiscene/encoder.hpp"
#include "musiscene/features.hpp"
#include "musiscene/metric_report.hpp"
#include "musiscene/text_metrics.hpp"
#include "musiscene/toy_lm.hpp"

namespace musiscene::train {

inline constexpr const char* kDefaultQuestionTemplate =
    "what kinds of video would this piece of music be suitable for?";

struct TrainConfig {
    int epochs = 20;
    int batch_size = 4;
    double learning_rate = 1e-2;
    std::uint64_t seed = 0;
    double train_fraction = 0.8;
    std::string question_template = kDefaultQuestionTemplate;
    /// When positive, training stops after the first epoch whose mean loss
    /// drops below this threshold.
    double stop_loss = 0.0;
    bool log_progress = true;

    void validate() const;
};

struct TrainSample {
    std::string clip_id;
    model::AudioFeatureStack features;
    std::string question;
    std::string answer;
};

struct TrainLogEntry {
    int epoch = 0;          // 1-based
    double mean_loss = 0.0; // token-weighted mean over the epoch
    double seconds = 0.0;   // wall time of this epoch
};

struct TrainResult {
    model::Checkpoint checkpoint;
    std::vector<TrainLogEntry> log;
};

/// Adam state for the adapter parameters (the only trainable state).
struct AdamState {
    model::AdapterParameters m;
    model::AdapterParameters v;
    long long step = 0;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;

    static AdamState init(const model::AdapterParameters& params);
    void apply(model::AdapterParameters& params, const model::AdapterParameters& grads,
               double lr);
};

/// Fine-tunes a fresh adapter against the frozen backbone. Samples are
/// re-shuffled deterministically every epoch; batches accumulate gradients
/// weighted by answer length so the result matches a padded-batch mean.
TrainResult train(const std::vector<TrainSample>& samples, const model::ToyLm& lm,
                  const model::AdapterConfig& adapter_config, const TrainConfig& config);

struct DecodeConfig {
    int max_new_tokens = 96;
    bool greedy = true;
    double temperature = 1.0;
    std::uint64_t seed = 0;
};

/// Generates an answer for one clip by autoregressive decoding with the
/// adapter prefix injected. Greedy decoding breaks argmax ties toward the
/// lower token id.
std::string decode_answer(const model::ToyLm& lm, const model::AdapterConfig& config,
                          const model::AdapterParameters& params,
                          const model::AudioFeatureStack& features,
                          const std::string& question, const DecodeConfig& decode = {});

/// What a decoded string looks like after a round trip through the model
/// vocabulary; use this to compare generated text against references.
std::string normalize_text(const model::CharVocab& vocab, const std::string& text);

/// Decodes every sample and scores the outputs against the reference
/// answers as one corpus-level metric row.
MetricReport evaluate_checkpoint(const model::ToyLm& lm, const model::Checkpoint& checkpoint,
                                 const std::vector<TrainSample>& samples,
                                 text::TokenEmbedder& embedder,
                                 const std::string& row_key = "finetuned",
                                 const DecodeConfig& decode = {});

/// Resolves clip features: a precomputed feature file when present,
/// otherwise the audio file run through the toy encoder.
class FeatureResolver {
public:
    FeatureResolver(std::filesystem::path features_dir, model::ToyFeatureEncoder encoder,
                    std::filesystem::path audio_root = {});
    model::AudioFeatureStack resolve(const std::string& clip_id,
                                     const std::string& audio_path) const;

private:
    std::filesystem::path features_dir_;
    mutable model::ToyFeatureEncoder encoder_;
    std::filesystem::path audio_root_;
};

/// Builds training samples from caption bundles: the configured question
/// paired with each bundle's scene answer.
std::vector<TrainSample> make_samples(const std::vector<corpus::CaptionBundle>& bundles,
                                      const std::vector<corpus::ClipRecord>& manifest,
                                      const FeatureResolver& resolver,
                                      const std::string& question_template);

} // namespace musiscene::train
