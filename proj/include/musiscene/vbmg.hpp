#pragma once

#include <atomic>
#include <cstdint>
#include <filesystem>
#include <map>
#include <mutex>
#include <string>
#include <vector>

#include "musiscene/audio_metrics.hpp"
#include "musiscene/caption_backends.hpp"
#include "musiscene/corpus.hpp"
#include "musiscene/metric_report.hpp"
#include "musiscene/wav.hpp"

namespace musiscene::vbmg {

/// Which caption drives the text-to-music backend for a clip.
enum class CaptionStrategy { kMsi, kVideo, kMusic, kFusion };

std::string strategy_name(CaptionStrategy strategy); // "msi", "video", "music", "fusion"
CaptionStrategy parse_strategy(const std::string& name);
const std::vector<CaptionStrategy>& all_strategies();
/// Parses a comma-separated list like "msi,video"; rejects duplicates.
std::vector<CaptionStrategy> parse_strategy_list(const std::string& csv);

/// The bundle field matching the strategy; empty fields are an error.
std::string select_caption(const corpus::CaptionBundle& bundle, CaptionStrategy strategy);

// ---- survey aggregation ----

struct SurveyResponse {
    std::string respondent_id;
    std::string video_id;
    CaptionStrategy strategy = CaptionStrategy::kMsi;
    double score = 0.0; // 0..100
};

/// CSV with exact header "respondent_id,video_id,strategy,score".
std::vector<SurveyResponse> read_survey_csv(const std::filesystem::path& path);

/// Per-strategy arithmetic mean at full precision, one row per strategy
/// present, column "Mean". Duplicate (respondent, video, strategy) or
/// out-of-range scores are errors.
MetricReport aggregate_subjective(const std::vector<SurveyResponse>& responses);

// ---- music generation ----

struct MusicRequest {
    std::string caption;
    double duration_s = 10.0;
    std::uint64_t seed = 0;
};

class MusicBackend {
public:
    virtual ~MusicBackend() = default;
    virtual std::string id() const = 0;
    virtual AudioClip generate(const MusicRequest& request) = 0;
};

/// Deterministic offline generator: a small bank of sine partials whose
/// frequencies and amplitudes are a pure function of (caption, seed).
class SineMusicBackend final : public MusicBackend {
public:
    explicit SineMusicBackend(int sample_rate = 16000) : sample_rate_(sample_rate) {}
    std::string id() const override { return "sine-music/v1"; }
    AudioClip generate(const MusicRequest& request) override;

private:
    int sample_rate_;
};

/// Returns the reference audio registered for a caption; used to close the
/// loop in identity experiments.
class EchoReferenceBackend final : public MusicBackend {
public:
    explicit EchoReferenceBackend(std::map<std::string, std::filesystem::path> by_caption)
        : by_caption_(std::move(by_caption)) {}
    std::string id() const override { return "echo-reference/v1"; }
    AudioClip generate(const MusicRequest& request) override;

private:
    std::map<std::string, std::filesystem::path> by_caption_;
};

/// Fails the first `fail_first_n` calls (forever when negative), then
/// delegates; exercises retry and partial-row paths.
class FlakyMusicBackend final : public MusicBackend {
public:
    FlakyMusicBackend(MusicBackend& inner, int fail_first_n)
        : inner_(inner), fail_first_n_(fail_first_n) {}
    std::string id() const override { return "flaky(" + inner_.id() + ")"; }
    AudioClip generate(const MusicRequest& request) override;
    long long calls() const { return calls_.load(); }

private:
    MusicBackend& inner_;
    int fail_first_n_;
    std::atomic<long long> calls_{0};
};

/// Rejects every generation call; lets report-style reruns prove that the
/// ledger already covers all requested work.
class NoGenerationBackend final : public MusicBackend {
public:
    std::string id() const override { return "no-generation"; }
    AudioClip generate(const MusicRequest&) override;
};

// ---- experiment ledger ----

struct LedgerEntry {
    std::string clip_id;
    std::string strategy;
    std::string caption_sha256;
    std::string backend_id;
    std::uint64_t seed = 0;
    double duration_s = 0.0;
    std::string status; // "ok" | "failed"
    std::string output_path;
    std::string error;
};

/// Append-only JSON Lines record of every generation attempt. Appends are
/// serialized and fsync'd so an interrupted run never loses acknowledged
/// work; completed (clip, strategy, caption) triples are skipped on rerun.
class GenerationLedger {
public:
    explicit GenerationLedger(std::filesystem::path path);

    const std::filesystem::path& path() const { return path_; }
    const std::vector<LedgerEntry>& entries() const { return entries_; }
    /// Latest successful entry for the triple, or nullptr.
    const LedgerEntry* find_ok(const std::string& clip_id, const std::string& strategy,
                               const std::string& caption_sha256) const;
    void append(const LedgerEntry& entry);

private:
    std::filesystem::path path_;
    std::vector<LedgerEntry> entries_;
    std::map<std::string, size_t> ok_index_;
    std::mutex mutex_;
};

struct GenerationTask {
    std::string clip_id;
    CaptionStrategy strategy = CaptionStrategy::kMsi;
    std::string caption;
    double duration_s = 10.0;
    std::uint64_t seed = 0;
    std::filesystem::path output_path;
};

/// Generates one clip with retries, enforcing the requested duration within
/// ±0.5 s, writing the audio atomically, and recording the attempt in the
/// ledger (successes and final failures alike). Already-ledgered work with
/// an existing output file is returned without touching the backend.
std::filesystem::path generate_music(const GenerationTask& task, MusicBackend& backend,
                                     GenerationLedger& ledger,
                                     const corpus::RetryPolicy& retry = {});

/// The per-(clip, strategy) generation seed derived from the run seed.
std::uint64_t derive_generation_seed(std::uint64_t run_seed, const std::string& clip_id,
                                     CaptionStrategy strategy);

// ---- experiment driver ----

struct ExperimentConfig {
    std::vector<CaptionStrategy> strategies = all_strategies();
    std::filesystem::path output_dir;  // wavs land at <output_dir>/<strategy>/<clip>.wav
    std::filesystem::path ledger_path; // default <output_dir>/generation_ledger.jsonl
    double duration_s = 10.0;
    std::uint64_t seed = 0;
    corpus::RetryPolicy retry;
    int jobs = 1;
};

/// Generates music for every (bundle, strategy), then reports one row per
/// strategy with columns FAD (pooled embeddings, generated vs reference)
/// and KL (mean per-clip label divergence). A strategy whose generation
/// fails is dropped from the rows and listed as partial instead.
MetricReport run_experiment(const std::vector<corpus::CaptionBundle>& bundles,
                            const std::map<std::string, AudioClip>& reference_audio,
                            MusicBackend& music_backend,
                            audio::AudioEmbedderBackend& embedder,
                            audio::LabelClassifierBackend& classifier,
                            const ExperimentConfig& config);

/// Loads each clip's reference audio from the manifest's audio paths,
/// resolving relative paths against `audio_root`.
std::map<std::string, AudioClip> load_reference_audio(
    const std::vector<corpus::ClipRecord>& manifest,
    const std::filesystem::path& audio_root = {});

} // namespace musiscene::vbmg
