#include "musiscene/vbmg.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <future>
#include <set>
#include <sstream>
#include <thread>

#include <fcntl.h>
#include <unistd.h>

#include <nlohmann/json.hpp>

#include "musiscene/error.hpp"
#include "musiscene/fsio.hpp"
#include "musiscene/log.hpp"
#include "musiscene/rng.hpp"
#include "musiscene/sha256.hpp"

namespace musiscene::vbmg {

namespace {
constexpr double kDurationToleranceS = 0.5;
constexpr double kTwoPi = 6.283185307179586476925286766559;
} // namespace

std::string strategy_name(CaptionStrategy strategy) {
    switch (strategy) {
    case CaptionStrategy::kMsi: return "msi";
    case CaptionStrategy::kVideo: return "video";
    case CaptionStrategy::kMusic: return "music";
    case CaptionStrategy::kFusion: return "fusion";
    }
    fail("unreachable strategy value");
}

CaptionStrategy parse_strategy(const std::string& name) {
    std::string lowered = name;
    std::transform(lowered.begin(), lowered.end(), lowered.begin(),
                   [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
    if (lowered == "msi") return CaptionStrategy::kMsi;
    if (lowered == "video") return CaptionStrategy::kVideo;
    if (lowered == "music") return CaptionStrategy::kMusic;
    if (lowered == "fusion") return CaptionStrategy::kFusion;
    fail("unknown caption strategy '" + name + "' (expected msi, video, music, or fusion)");
}

const std::vector<CaptionStrategy>& all_strategies() {
    static const std::vector<CaptionStrategy> all = {
        CaptionStrategy::kMsi, CaptionStrategy::kVideo, CaptionStrategy::kMusic,
        CaptionStrategy::kFusion};
    return all;
}

std::vector<CaptionStrategy> parse_strategy_list(const std::string& csv) {
    std::vector<CaptionStrategy> strategies;
    std::set<std::string> seen;
    std::stringstream ss(csv);
    std::string item;
    while (std::getline(ss, item, ',')) {
        if (item.empty()) continue;
        const CaptionStrategy s = parse_strategy(item);
        require(seen.insert(strategy_name(s)).second,
                "duplicate caption strategy '" + strategy_name(s) + "'");
        strategies.push_back(s);
    }
    require(!strategies.empty(), "no caption strategies given");
    return strategies;
}

std::string select_caption(const corpus::CaptionBundle& bundle, CaptionStrategy strategy) {
    const std::string* caption = nullptr;
    switch (strategy) {
    case CaptionStrategy::kMsi: caption = &bundle.msi_caption; break;
    case CaptionStrategy::kVideo: caption = &bundle.video_caption; break;
    case CaptionStrategy::kMusic: caption = &bundle.music_caption; break;
    case CaptionStrategy::kFusion: caption = &bundle.fusion_caption; break;
    }
    require(caption != nullptr && !caption->empty(),
            "clip '" + bundle.clip_id + "': bundle has no " + strategy_name(strategy) +
                " caption");
    return *caption;
}

// ---- survey aggregation ----

std::vector<SurveyResponse> read_survey_csv(const std::filesystem::path& path) {
    const std::string content = read_file(path);
    std::vector<SurveyResponse> responses;
    size_t lineno = 0;
    size_t pos = 0;
    while (pos <= content.size()) {
        size_t eol = content.find('\n', pos);
        if (eol == std::string::npos) eol = content.size();
        std::string line = content.substr(pos, eol - pos);
        pos = eol + 1;
        ++lineno;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) {
            if (pos > content.size()) break;
            continue;
        }
        if (lineno == 1) {
            require(line == "respondent_id,video_id,strategy,score",
                    path.string() +
                        ": expected header 'respondent_id,video_id,strategy,score', got '" +
                        line + "'");
            continue;
        }
        std::vector<std::string> fields;
        std::stringstream ss(line);
        std::string field;
        while (std::getline(ss, field, ',')) fields.push_back(field);
        require(fields.size() == 4, path.string() + ":" + std::to_string(lineno) +
                                        ": expected 4 comma-separated fields, got " +
                                        std::to_string(fields.size()));
        SurveyResponse r;
        r.respondent_id = fields[0];
        r.video_id = fields[1];
        require(!r.respondent_id.empty(),
                path.string() + ":" + std::to_string(lineno) + ": empty respondent_id");
        require(!r.video_id.empty(),
                path.string() + ":" + std::to_string(lineno) + ": empty video_id");
        try {
            r.strategy = parse_strategy(fields[2]);
        } catch (const Error& e) {
            fail(path.string() + ":" + std::to_string(lineno) + ": " + e.what());
        }
        try {
            size_t consumed = 0;
            r.score = std::stod(fields[3], &consumed);
            require(consumed == fields[3].size(), "trailing characters");
        } catch (const std::exception&) {
            fail(path.string() + ":" + std::to_string(lineno) + ": invalid score '" +
                 fields[3] + "'");
        }
        responses.push_back(std::move(r));
    }
    return responses;
}

MetricReport aggregate_subjective(const std::vector<SurveyResponse>& responses) {
    require(!responses.empty(), "subjective aggregation: no responses");
    std::set<std::string> seen;
    std::map<std::string, std::pair<double, long long>> sums;
    for (const auto& r : responses) {
        require(std::isfinite(r.score) && r.score >= 0.0 && r.score <= 100.0,
                "subjective aggregation: score " + std::to_string(r.score) +
                    " for respondent '" + r.respondent_id + "' is outside [0, 100]");
        const std::string key =
            r.respondent_id + "\x1f" + r.video_id + "\x1f" + strategy_name(r.strategy);
        require(seen.insert(key).second,
                "subjective aggregation: duplicate response for respondent '" +
                    r.respondent_id + "', video '" + r.video_id + "', strategy '" +
                    strategy_name(r.strategy) + "'");
        auto& [sum, count] = sums[strategy_name(r.strategy)];
        sum += r.score;
        count += 1;
    }
    MetricReport report;
    for (const auto& [strategy, sum_count] : sums) {
        report.rows[strategy]["Mean"] =
            sum_count.first / static_cast<double>(sum_count.second);
    }
    return report;
}

// ---- music backends ----

AudioClip SineMusicBackend::generate(const MusicRequest& request) {
    require(!request.caption.empty(), "music backend: empty caption");
    require(request.duration_s > 0.0, "music backend: duration must be positive");
    Rng rng(sha256_prefix64("sine-music:" + request.caption) ^ request.seed);
    const int partials = 3;
    std::vector<double> freqs(partials), amps(partials), phases(partials);
    double amp_total = 0.0;
    for (int i = 0; i < partials; ++i) {
        freqs[i] = rng.next_uniform(110.0, 880.0);
        amps[i] = rng.next_uniform(0.2, 1.0);
        phases[i] = rng.next_uniform(0.0, kTwoPi);
        amp_total += amps[i];
    }
    AudioClip clip;
    clip.sample_rate = static_cast<uint32_t>(sample_rate_);
    const auto n = static_cast<size_t>(std::llround(request.duration_s * sample_rate_));
    clip.samples.resize(n);
    const double fade = std::min(0.05, request.duration_s / 4.0);
    for (size_t i = 0; i < n; ++i) {
        const double t = static_cast<double>(i) / sample_rate_;
        double v = 0.0;
        for (int p = 0; p < partials; ++p) {
            v += amps[p] * std::sin(kTwoPi * freqs[p] * t + phases[p]);
        }
        v *= 0.8 / amp_total;
        const double to_end = request.duration_s - t;
        if (t < fade) v *= t / fade;
        if (to_end < fade) v *= std::max(0.0, to_end / fade);
        clip.samples[i] = v;
    }
    return clip;
}

AudioClip EchoReferenceBackend::generate(const MusicRequest& request) {
    const auto it = by_caption_.find(request.caption);
    require(it != by_caption_.end(),
            "echo-reference backend: no reference registered for caption '" +
                request.caption + "'");
    return read_wav(it->second);
}

AudioClip FlakyMusicBackend::generate(const MusicRequest& request) {
    const long long call = calls_++;
    if (fail_first_n_ < 0 || call < fail_first_n_) {
        fail("music backend unavailable (injected failure " + std::to_string(call + 1) + ")");
    }
    return inner_.generate(request);
}

AudioClip NoGenerationBackend::generate(const MusicRequest&) {
    fail("generation disabled: clip is missing from the experiment ledger");
}

// ---- ledger ----

namespace {

nlohmann::json entry_to_json(const LedgerEntry& e) {
    nlohmann::json j{{"clip_id", e.clip_id},
                     {"strategy", e.strategy},
                     {"caption_sha256", e.caption_sha256},
                     {"backend", e.backend_id},
                     {"seed", e.seed},
                     {"duration_s", e.duration_s},
                     {"status", e.status},
                     {"output_path", e.output_path}};
    if (!e.error.empty()) j["error"] = e.error;
    return j;
}

LedgerEntry entry_from_json(const nlohmann::json& j, const std::string& context) {
    LedgerEntry e;
    try {
        e.clip_id = j.at("clip_id").get<std::string>();
        e.strategy = j.at("strategy").get<std::string>();
        e.caption_sha256 = j.at("caption_sha256").get<std::string>();
        e.backend_id = j.at("backend").get<std::string>();
        e.seed = j.at("seed").get<std::uint64_t>();
        e.duration_s = j.at("duration_s").get<double>();
        e.status = j.at("status").get<std::string>();
        e.output_path = j.at("output_path").get<std::string>();
        e.error = j.value("error", "");
    } catch (const nlohmann::json::exception& ex) {
        fail(context + ": malformed ledger entry: " + ex.what());
    }
    require(e.status == "ok" || e.status == "failed",
            context + ": ledger entry has unknown status '" + e.status + "'");
    return e;
}

std::string triple_key(const std::string& clip_id, const std::string& strategy,
                       const std::string& caption_sha256) {
    return clip_id + "\x1f" + strategy + "\x1f" + caption_sha256;
}

} // namespace

GenerationLedger::GenerationLedger(std::filesystem::path path) : path_(std::move(path)) {
    ensure_parent_dir(path_);
    if (std::filesystem::exists(path_)) {
        const auto lines = read_jsonl(path_);
        entries_.reserve(lines.size());
        for (size_t i = 0; i < lines.size(); ++i) {
            LedgerEntry e = entry_from_json(
                lines[i], path_.string() + ":" + std::to_string(i + 1));
            if (e.status == "ok") {
                ok_index_[triple_key(e.clip_id, e.strategy, e.caption_sha256)] =
                    entries_.size();
            }
            entries_.push_back(std::move(e));
        }
    }
}

const LedgerEntry* GenerationLedger::find_ok(const std::string& clip_id,
                                             const std::string& strategy,
                                             const std::string& caption_sha256) const {
    const auto it = ok_index_.find(triple_key(clip_id, strategy, caption_sha256));
    return it == ok_index_.end() ? nullptr : &entries_[it->second];
}

void GenerationLedger::append(const LedgerEntry& entry) {
    std::lock_guard<std::mutex> lock(mutex_);
    const std::string line = entry_to_json(entry).dump() + "\n";
    const int fd = ::open(path_.c_str(), O_WRONLY | O_CREAT | O_APPEND, 0644);
    require(fd >= 0, "cannot open ledger " + path_.string() + " for append");
    size_t written = 0;
    while (written < line.size()) {
        const ssize_t n = ::write(fd, line.data() + written, line.size() - written);
        if (n < 0) {
            ::close(fd);
            fail("short write to ledger " + path_.string());
        }
        written += static_cast<size_t>(n);
    }
    if (::fsync(fd) != 0) {
        ::close(fd);
        fail("fsync failed on ledger " + path_.string());
    }
    ::close(fd);
    if (entry.status == "ok") {
        ok_index_[triple_key(entry.clip_id, entry.strategy, entry.caption_sha256)] =
            entries_.size();
    }
    entries_.push_back(entry);
}

std::uint64_t derive_generation_seed(std::uint64_t run_seed, const std::string& clip_id,
                                     CaptionStrategy strategy) {
    return sha256_prefix64("gen-seed:" + std::to_string(run_seed) + ":" + clip_id + ":" +
                           strategy_name(strategy));
}

std::filesystem::path generate_music(const GenerationTask& task, MusicBackend& backend,
                                     GenerationLedger& ledger,
                                     const corpus::RetryPolicy& retry) {
    require(!task.caption.empty(), "clip '" + task.clip_id + "': empty caption");
    require(task.duration_s > 0.0, "clip '" + task.clip_id + "': duration must be positive");
    require(!task.output_path.empty(), "clip '" + task.clip_id + "': no output path");
    require(retry.attempts >= 1, "retry policy: attempts must be at least 1");

    const std::string caption_sha = Sha256::hex(task.caption);
    const std::string strategy = strategy_name(task.strategy);
    if (const LedgerEntry* done = ledger.find_ok(task.clip_id, strategy, caption_sha)) {
        if (std::filesystem::exists(done->output_path)) {
            return std::filesystem::path(done->output_path);
        }
    }

    LedgerEntry entry;
    entry.clip_id = task.clip_id;
    entry.strategy = strategy;
    entry.caption_sha256 = caption_sha;
    entry.backend_id = backend.id();
    entry.seed = task.seed;
    entry.duration_s = task.duration_s;
    entry.output_path = task.output_path.string();

    MusicRequest request{task.caption, task.duration_s, task.seed};
    std::string last_error;
    for (int attempt = 1; attempt <= retry.attempts; ++attempt) {
        try {
            AudioClip clip = backend.generate(request);
            const double got = clip.duration_s();
            require(std::abs(got - task.duration_s) <= kDurationToleranceS,
                    "backend returned " + std::to_string(got) + " s of audio, requested " +
                        std::to_string(task.duration_s) + " s");
            write_wav(task.output_path, clip);
            entry.status = "ok";
            ledger.append(entry);
            return task.output_path;
        } catch (const std::exception& e) {
            last_error = e.what();
            if (attempt < retry.attempts) {
                std::this_thread::sleep_for(std::chrono::milliseconds(
                    static_cast<long long>(retry.base_delay_ms) << (attempt - 1)));
            }
        }
    }
    entry.status = "failed";
    entry.error = last_error;
    ledger.append(entry);
    fail("clip '" + task.clip_id + "' strategy '" + strategy + "': backend '" +
         backend.id() + "' failed after " + std::to_string(retry.attempts) +
         " attempts: " + last_error);
}

// ---- experiment driver ----

namespace {

Eigen::MatrixXd pool_embeddings(const std::vector<audio::EmbeddingSet>& sets) {
    Eigen::Index rows = 0;
    const Eigen::Index dim = sets.empty() ? 0 : sets.front().vectors.cols();
    for (const auto& s : sets) rows += s.vectors.rows();
    Eigen::MatrixXd pooled(rows, dim);
    Eigen::Index at = 0;
    for (const auto& s : sets) {
        require(s.vectors.cols() == dim, "pooled embeddings: dimension mismatch");
        pooled.middleRows(at, s.vectors.rows()) = s.vectors;
        at += s.vectors.rows();
    }
    return pooled;
}

} // namespace

MetricReport run_experiment(const std::vector<corpus::CaptionBundle>& bundles,
                            const std::map<std::string, AudioClip>& reference_audio,
                            MusicBackend& music_backend,
                            audio::AudioEmbedderBackend& embedder,
                            audio::LabelClassifierBackend& classifier,
                            const ExperimentConfig& config) {
    require(!bundles.empty(), "experiment: empty dataset");
    require(!config.strategies.empty(), "experiment: no strategies selected");
    require(!config.output_dir.empty(), "experiment: no output directory");
    require(config.duration_s > 0.0, "experiment: duration must be positive");
    for (const auto& bundle : bundles) {
        require(reference_audio.count(bundle.clip_id) == 1,
                "experiment: no reference audio for clip '" + bundle.clip_id + "'");
    }

    std::filesystem::create_directories(config.output_dir);
    const std::filesystem::path ledger_path = config.ledger_path.empty()
                                                  ? config.output_dir / "generation_ledger.jsonl"
                                                  : config.ledger_path;
    GenerationLedger ledger(ledger_path);

    // Reference statistics are strategy-independent: embed and classify once.
    std::vector<audio::EmbeddingSet> ref_sets;
    std::map<std::string, audio::LabelDistribution> ref_labels;
    for (const auto& bundle : bundles) {
        const AudioClip& ref = reference_audio.at(bundle.clip_id);
        ref_sets.push_back(embedder.embed(ref, bundle.clip_id));
        ref_labels.emplace(bundle.clip_id, classifier.classify(ref, bundle.clip_id));
    }
    audio::EmbeddingSet ref_pooled;
    ref_pooled.vectors = pool_embeddings(ref_sets);
    ref_pooled.source_id = "reference";
    const audio::EmbeddingSetStats ref_stats = audio::embedding_stats(ref_pooled);

    MetricReport report;
    for (const CaptionStrategy strategy : config.strategies) {
        const std::string name = strategy_name(strategy);
        std::vector<std::filesystem::path> generated(bundles.size());
        try {
            std::filesystem::create_directories(config.output_dir / name);
            const int jobs = std::max(1, config.jobs);
            if (jobs == 1) {
                for (size_t i = 0; i < bundles.size(); ++i) {
                    const auto& bundle = bundles[i];
                    GenerationTask task;
                    task.clip_id = bundle.clip_id;
                    task.strategy = strategy;
                    task.caption = select_caption(bundle, strategy);
                    task.duration_s = config.duration_s;
                    task.seed = derive_generation_seed(config.seed, bundle.clip_id, strategy);
                    task.output_path = config.output_dir / name / (bundle.clip_id + ".wav");
                    generated[i] = generate_music(task, music_backend, ledger, config.retry);
                }
            } else {
                std::atomic<size_t> next{0};
                std::atomic<bool> failed{false};
                std::string first_error;
                std::mutex error_mutex;
                auto worker = [&]() {
                    while (true) {
                        const size_t i = next.fetch_add(1);
                        if (i >= bundles.size() || failed.load()) return;
                        try {
                            const auto& bundle = bundles[i];
                            GenerationTask task;
                            task.clip_id = bundle.clip_id;
                            task.strategy = strategy;
                            task.caption = select_caption(bundle, strategy);
                            task.duration_s = config.duration_s;
                            task.seed =
                                derive_generation_seed(config.seed, bundle.clip_id, strategy);
                            task.output_path =
                                config.output_dir / name / (bundle.clip_id + ".wav");
                            generated[i] =
                                generate_music(task, music_backend, ledger, config.retry);
                        } catch (const std::exception& e) {
                            std::lock_guard<std::mutex> lock(error_mutex);
                            if (!failed.exchange(true)) first_error = e.what();
                        }
                    }
                };
                std::vector<std::thread> threads;
                const size_t n_threads =
                    std::min(static_cast<size_t>(jobs), bundles.size());
                threads.reserve(n_threads);
                for (size_t t = 0; t < n_threads; ++t) threads.emplace_back(worker);
                for (auto& t : threads) t.join();
                if (failed.load()) fail(first_error);
            }
        } catch (const std::exception& e) {
            log::warn("strategy '" + name + "' aborted: " + e.what());
            report.partial_rows.push_back(name);
            continue;
        }

        std::vector<audio::EmbeddingSet> gen_sets;
        double kl_sum = 0.0;
        for (size_t i = 0; i < bundles.size(); ++i) {
            const AudioClip clip = read_wav(generated[i]);
            gen_sets.push_back(embedder.embed(clip, bundles[i].clip_id));
            const audio::LabelDistribution pred =
                classifier.classify(clip, bundles[i].clip_id);
            kl_sum += audio::label_kl(ref_labels.at(bundles[i].clip_id), pred);
        }
        audio::EmbeddingSet gen_pooled;
        gen_pooled.vectors = pool_embeddings(gen_sets);
        gen_pooled.source_id = "generated:" + name;
        const double fad =
            audio::frechet_distance(ref_stats, audio::embedding_stats(gen_pooled));
        report.rows[name]["FAD"] = fad;
        report.rows[name]["KL"] = kl_sum / static_cast<double>(bundles.size());
    }
    return report;
}

std::map<std::string, AudioClip> load_reference_audio(
    const std::vector<corpus::ClipRecord>& manifest, const std::filesystem::path& audio_root) {
    std::map<std::string, AudioClip> refs;
    for (const auto& rec : manifest) {
        require(!rec.audio_path.empty(),
                "clip '" + rec.clip_id + "': manifest has no audio path");
        std::filesystem::path p(rec.audio_path);
        if (p.is_relative() && !audio_root.empty()) p = audio_root / p;
        refs.emplace(rec.clip_id, read_wav(p));
    }
    return refs;
}

} // namespace musiscene::vbmg
