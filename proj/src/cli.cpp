#include "musiscene/cli.hpp"

#include <cctype>
#include <cstdlib>
#include <functional>
#include <iostream>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "musiscene/adapter.hpp"
#include "musiscene/audio_metrics.hpp"
#include "musiscene/caption_backends.hpp"
#include "musiscene/caption_cache.hpp"
#include "musiscene/checkpoint.hpp"
#include "musiscene/corpus.hpp"
#include "musiscene/corpus_build.hpp"
#include "musiscene/encoder.hpp"
#include "musiscene/error.hpp"
#include "musiscene/fsio.hpp"
#include "musiscene/log.hpp"
#include "musiscene/metric_report.hpp"
#include "musiscene/remote.hpp"
#include "musiscene/sha256.hpp"
#include "musiscene/text_metrics.hpp"
#include "musiscene/toy_lm.hpp"
#include "musiscene/train.hpp"
#include "musiscene/vbmg.hpp"

namespace musiscene::cli {

namespace {

namespace fs = std::filesystem;

/// Configuration mistakes: wrong flag values, missing keys, bad config
/// files. Reported with exit code 2 instead of 1.
struct UsageError : Error {
    using Error::Error;
};

[[noreturn]] void usage_fail(const std::string& msg) { throw UsageError(msg); }

std::string unquote(std::string s) {
    if (s.size() >= 2 && s.front() == '"' && s.back() == '"') {
        return s.substr(1, s.size() - 2);
    }
    return s;
}

std::string trim(const std::string& s) {
    size_t b = 0;
    size_t e = s.size();
    while (b < e && std::isspace(static_cast<unsigned char>(s[b]))) ++b;
    while (e > b && std::isspace(static_cast<unsigned char>(s[e - 1]))) --e;
    return s.substr(b, e - b);
}

/// Layered key/value store implementing the resolution order
/// environment > command-line flags > config file > built-in default.
class Settings {
public:
    void load_file(const fs::path& path) {
        const std::string content = read_file(path);
        size_t pos = 0;
        int lineno = 0;
        while (pos <= content.size()) {
            size_t eol = content.find('\n', pos);
            if (eol == std::string::npos) eol = content.size();
            std::string line = content.substr(pos, eol - pos);
            pos = eol + 1;
            ++lineno;
            if (!line.empty() && line.back() == '\r') line.pop_back();
            const std::string stripped = trim(line);
            if (stripped.empty() || stripped.front() == '#') {
                if (pos > content.size()) break;
                continue;
            }
            const size_t eq = stripped.find('=');
            if (eq == std::string::npos) {
                usage_fail(path.string() + ":" + std::to_string(lineno) +
                           ": expected 'key = value'");
            }
            const std::string key = trim(stripped.substr(0, eq));
            const std::string value = unquote(trim(stripped.substr(eq + 1)));
            if (key.empty()) {
                usage_fail(path.string() + ":" + std::to_string(lineno) + ": empty key");
            }
            if (!file_values_.emplace(key, value).second) {
                usage_fail(path.string() + ":" + std::to_string(lineno) +
                           ": duplicate key '" + key + "'");
            }
            if (pos > content.size()) break;
        }
    }

    void set_flag(const std::string& key, const std::string& value) {
        flag_values_[key] = value;
    }

    static std::string env_name(const std::string& key) {
        std::string name = "MUSISCENE_";
        for (char c : key) {
            name += (c == '.' || c == '-')
                        ? '_'
                        : static_cast<char>(std::toupper(static_cast<unsigned char>(c)));
        }
        return name;
    }

    std::optional<std::string> lookup(const std::string& key) const {
        if (const char* env = std::getenv(env_name(key).c_str())) {
            return std::string(env);
        }
        if (const auto it = flag_values_.find(key); it != flag_values_.end()) {
            return it->second;
        }
        if (const auto it = file_values_.find(key); it != file_values_.end()) {
            return it->second;
        }
        return std::nullopt;
    }

    std::string get_string(const std::string& key, const std::string& fallback) const {
        return lookup(key).value_or(fallback);
    }

    std::string get_required(const std::string& key) const {
        const auto v = lookup(key);
        if (!v || v->empty()) {
            usage_fail("missing required value for " + key + " (flag --" + flag_spelling(key) +
                       ", environment " + env_name(key) + ", or config key '" + key + "')");
        }
        return *v;
    }

    long long get_ll(const std::string& key, long long fallback) const {
        const auto v = lookup(key);
        if (!v) return fallback;
        try {
            size_t consumed = 0;
            const long long parsed = std::stoll(*v, &consumed);
            if (consumed != v->size()) throw std::invalid_argument("trailing characters");
            return parsed;
        } catch (const std::exception&) {
            usage_fail("invalid value for " + key + ": '" + *v + "' (expected an integer)");
        }
    }

    int get_int(const std::string& key, int fallback) const {
        const long long v = get_ll(key, fallback);
        if (v < INT_MIN || v > INT_MAX) {
            usage_fail("invalid value for " + key + ": out of range");
        }
        return static_cast<int>(v);
    }

    std::uint64_t get_u64(const std::string& key, std::uint64_t fallback) const {
        const auto v = lookup(key);
        if (!v) return fallback;
        try {
            size_t consumed = 0;
            const std::uint64_t parsed = std::stoull(*v, &consumed);
            if (consumed != v->size()) throw std::invalid_argument("trailing characters");
            return parsed;
        } catch (const std::exception&) {
            usage_fail("invalid value for " + key +
                       ": '" + *v + "' (expected a non-negative integer)");
        }
    }

    double get_double(const std::string& key, double fallback) const {
        const auto v = lookup(key);
        if (!v) return fallback;
        try {
            size_t consumed = 0;
            const double parsed = std::stod(*v, &consumed);
            if (consumed != v->size()) throw std::invalid_argument("trailing characters");
            return parsed;
        } catch (const std::exception&) {
            usage_fail("invalid value for " + key + ": '" + *v + "' (expected a number)");
        }
    }

    bool get_bool(const std::string& key, bool fallback) const {
        const auto v = lookup(key);
        if (!v) return fallback;
        if (*v == "1" || *v == "true" || *v == "yes" || *v == "on") return true;
        if (*v == "0" || *v == "false" || *v == "no" || *v == "off") return false;
        usage_fail("invalid value for " + key + ": '" + *v + "' (expected a boolean)");
    }

private:
    static std::string flag_spelling(const std::string& key) {
        std::string flag;
        for (char c : key) flag += (c == '.' ? '-' : (c == '_' ? '-' : c));
        return flag;
    }

    std::map<std::string, std::string> flag_values_;
    std::map<std::string, std::string> file_values_;
};

/// Registers string-valued options whose post-parse values land in the
/// Settings layer only when the user actually passed them.
class FlagBinder {
public:
    FlagBinder(CLI::App* cmd, Settings* settings) : cmd_(cmd), settings_(settings) {}

    // The lambdas capture the Settings pointer, not `this`: binders live in
    // a growing vector, so `this` may move between add() and commit().
    void add(const std::string& flag, const std::string& key, const std::string& desc) {
        auto value = std::make_shared<std::string>();
        CLI::Option* opt = cmd_->add_option(flag, *value, desc);
        commits_.push_back([settings = settings_, opt, value, key]() {
            if (opt->count() > 0) settings->set_flag(key, *value);
        });
    }

    void add_flag(const std::string& flag, const std::string& key, const std::string& desc) {
        auto value = std::make_shared<bool>(false);
        CLI::Option* opt = cmd_->add_flag(flag, *value, desc);
        commits_.push_back([settings = settings_, opt, value, key]() {
            if (opt->count() > 0) settings->set_flag(key, *value ? "true" : "false");
        });
    }

    void commit() const {
        for (const auto& fn : commits_) fn();
    }

private:
    CLI::App* cmd_;
    Settings* settings_;
    std::vector<std::function<void()>> commits_;
};

void guard_overwrite(const fs::path& path, bool force) {
    require(force || !fs::exists(path),
            "output " + path.string() + " already exists (pass --force to overwrite)");
}

void write_report_file(const fs::path& path, const MetricReport& report, bool force) {
    guard_overwrite(path, force);
    ensure_parent_dir(path);
    atomic_write_file(path, report.to_json().dump(2) + "\n");
}

std::vector<std::string> read_lines(const fs::path& path) {
    const std::string content = read_file(path);
    std::vector<std::string> lines;
    if (content.empty()) return lines;
    size_t pos = 0;
    while (pos <= content.size()) {
        size_t eol = content.find('\n', pos);
        const bool last = eol == std::string::npos;
        if (last) eol = content.size();
        std::string line = content.substr(pos, eol - pos);
        if (!line.empty() && line.back() == '\r') line.pop_back();
        lines.push_back(std::move(line));
        if (last) break;
        pos = eol + 1;
        if (pos == content.size()) break; // trailing newline, no empty final line
    }
    return lines;
}

std::string short_digest(const std::string& input) {
    return Sha256::hex(input).substr(0, 8);
}

fs::path with_split_suffix(const fs::path& out, const std::string& split) {
    fs::path p = out;
    const std::string ext = p.extension().string();
    p.replace_extension();
    return p.concat("." + split).concat(ext.empty() ? ".jsonl" : ext);
}

double parse_validated_fraction(const Settings& settings) {
    const double f = settings.get_double("train_fraction", 0.8);
    if (!(f > 0.0 && f < 1.0)) {
        usage_fail("invalid value for train_fraction: must be in (0, 1), got " +
                   std::to_string(f));
    }
    return f;
}

corpus::RetryPolicy retry_policy(const Settings& settings) {
    corpus::RetryPolicy policy;
    policy.attempts = settings.get_int("retry.attempts", 3);
    policy.base_delay_ms = settings.get_int("retry.base_delay_ms", 100);
    if (policy.attempts < 1) usage_fail("invalid value for retry.attempts: must be >= 1");
    if (policy.base_delay_ms < 0) {
        usage_fail("invalid value for retry.base_delay_ms: must be >= 0");
    }
    return policy;
}

model::ToyLmConfig lm_config(const Settings& settings) {
    model::ToyLmConfig cfg;
    cfg.model_dim = settings.get_int("lm.model_dim", 32);
    cfg.num_layers = settings.get_int("lm.num_layers", 2);
    cfg.ff_hidden = settings.get_int("lm.ff_hidden", 64);
    cfg.max_seq_len = settings.get_int("lm.max_seq_len", 192);
    cfg.seed = settings.get_u64("lm.seed", 42);
    return cfg;
}

std::vector<int> parse_int_list(const std::string& csv, const std::string& key) {
    std::vector<int> out;
    std::stringstream ss(csv);
    std::string item;
    while (std::getline(ss, item, ',')) {
        item = trim(item);
        if (item.empty()) continue;
        try {
            size_t consumed = 0;
            out.push_back(std::stoi(item, &consumed));
            if (consumed != item.size()) throw std::invalid_argument("trailing characters");
        } catch (const std::exception&) {
            usage_fail("invalid value for " + key + ": '" + csv +
                       "' (expected comma-separated integers)");
        }
    }
    return out;
}

model::AdapterConfig adapter_config(const Settings& settings, int model_dim) {
    const int num_layers_in = settings.get_int("adapter.num_layers_in", 4);
    const int feature_dim = settings.get_int("adapter.feature_dim", 8);
    model::AdapterConfig cfg = model::default_adapter_config(num_layers_in, feature_dim,
                                                             model_dim);
    cfg.prefix_len = settings.get_int("adapter.prefix_len", cfg.prefix_len);
    cfg.injected_layers = settings.get_int("adapter.injected_layers", cfg.injected_layers);
    cfg.gate_init = settings.get_double("adapter.gate_init", cfg.gate_init);
    if (const auto dims = settings.lookup("adapter.dense_hidden_dims")) {
        cfg.dense_hidden_dims = parse_int_list(*dims, "adapter.dense_hidden_dims");
    }
    try {
        cfg.validate();
    } catch (const Error& e) {
        usage_fail(e.what());
    }
    return cfg;
}

model::ToyFeatureEncoder feature_encoder(const Settings& settings,
                                         const model::AdapterConfig& adapter) {
    return model::ToyFeatureEncoder(adapter.num_layers_in, adapter.feature_dim,
                                    settings.get_u64("encoder.seed", 1234),
                                    settings.get_int("encoder.bands", 8),
                                    settings.get_double("encoder.window_s", 0.5),
                                    settings.get_double("encoder.hop_s", 0.25));
}

train::FeatureResolver feature_resolver(const Settings& settings,
                                        const model::AdapterConfig& adapter) {
    return train::FeatureResolver(settings.get_string("features_dir", ""),
                                  feature_encoder(settings, adapter),
                                  settings.get_string("audio_root", ""));
}

std::vector<corpus::ClipRecord> optional_manifest(const Settings& settings) {
    const std::string path = settings.get_string("manifest", "");
    if (path.empty()) return {};
    return corpus::load_manifest(path);
}

std::vector<train::TrainSample> dataset_samples(const Settings& settings,
                                                const model::AdapterConfig& adapter,
                                                const std::string& question_template,
                                                const std::string& context) {
    const std::string dataset_path = settings.get_required("dataset");
    const auto bundles = corpus::read_dataset(dataset_path);
    require(!bundles.empty(), context + ": empty dataset at " + dataset_path);
    const auto resolver = feature_resolver(settings, adapter);
    return train::make_samples(bundles, optional_manifest(settings), resolver,
                               question_template);
}

// ---- subcommand handlers ----

void handle_build_corpus(const Settings& settings) {
    const fs::path manifest_path = settings.get_required("manifest");
    const fs::path out = settings.get_required("out");
    const bool force = settings.get_bool("force", false);
    const double fraction = parse_validated_fraction(settings);
    const std::uint64_t seed = settings.get_u64("seed", 0);
    const int jobs = settings.get_int("jobs", 1);
    const std::string label = settings.get_string("label", "");

    const fs::path train_path = with_split_suffix(out, "train");
    const fs::path test_path = with_split_suffix(out, "test");
    guard_overwrite(out, force);
    guard_overwrite(train_path, force);
    guard_overwrite(test_path, force);

    auto records = corpus::load_manifest(manifest_path);
    if (!label.empty()) {
        records = corpus::filter_by_label(records, label);
        require(!records.empty(), "no clips in " + manifest_path.string() +
                                      " carry the label '" + label + "'");
    }
    require(!records.empty(), "manifest " + manifest_path.string() + " lists no clips");

    const fs::path cache_dir = settings.get_string(
        "cache_dir", (out.parent_path() / "caption_cache").string());
    corpus::CaptionCache cache(cache_dir);

    std::unique_ptr<corpus::CaptionerBackend> video;
    std::unique_ptr<corpus::CaptionerBackend> music;
    std::unique_ptr<corpus::CaptionerBackend> llm;
    const std::string video_url = settings.get_string("backend.video_url", "");
    const std::string music_url = settings.get_string("backend.music_url", "");
    const std::string llm_url = settings.get_string("backend.llm_url", "");
    if (video_url.empty()) {
        video = std::make_unique<corpus::StubCaptioner>(
            "stub-video-captioner", "", [](const std::string& payload) {
                return "a video showing scene " + short_digest("video:" + payload);
            });
    } else {
        video = std::make_unique<remote::HttpCaptionerBackend>(video_url, "/caption");
    }
    if (music_url.empty()) {
        music = std::make_unique<corpus::StubCaptioner>(
            "stub-music-captioner", "", [](const std::string& payload) {
                return "music with motif " + short_digest("music:" + payload);
            });
    } else {
        music = std::make_unique<remote::HttpCaptionerBackend>(music_url, "/caption");
    }
    if (llm_url.empty()) {
        llm = std::make_unique<corpus::StubCaptioner>(
            "stub-llm", "", [](const std::string& payload) {
                return "a scene of kind " + short_digest("llm:" + payload);
            });
    } else {
        llm = std::make_unique<remote::HttpCaptionerBackend>(llm_url, "/caption");
    }

    corpus::BundleBackends backends{*video, *music, *llm};
    const auto bundles = corpus::build_corpus(records, backends, cache,
                                              retry_policy(settings), jobs);
    const auto [train_split, test_split] = corpus::split_dataset(bundles, fraction, seed);

    corpus::write_dataset(out, bundles);
    corpus::write_dataset(train_path, train_split);
    corpus::write_dataset(test_path, test_split);
    log::info("built " + std::to_string(bundles.size()) + " caption bundles (train " +
              std::to_string(train_split.size()) + ", test " +
              std::to_string(test_split.size()) + ")");
    std::cout << out.string() << "\n" << train_path.string() << "\n"
              << test_path.string() << "\n";
}

void handle_finetune(const Settings& settings) {
    const fs::path out = settings.get_required("out");
    const bool force = settings.get_bool("force", false);
    guard_overwrite(out, force);

    train::TrainConfig tconfig;
    tconfig.epochs = settings.get_int("train.epochs", 20);
    tconfig.batch_size = settings.get_int("train.batch_size", 4);
    tconfig.learning_rate = settings.get_double("train.learning_rate", 1e-2);
    tconfig.seed = settings.get_u64("seed", 0);
    tconfig.train_fraction = parse_validated_fraction(settings);
    tconfig.question_template =
        settings.get_string("train.question_template", train::kDefaultQuestionTemplate);
    tconfig.stop_loss = settings.get_double("train.stop_loss", 0.0);
    try {
        tconfig.validate();
    } catch (const Error& e) {
        usage_fail(e.what());
    }

    const model::ToyLm lm(lm_config(settings));
    const model::AdapterConfig acfg = adapter_config(settings, lm.config().model_dim);
    const auto samples =
        dataset_samples(settings, acfg, tconfig.question_template, "finetune");

    const auto result = train::train(samples, lm, acfg, tconfig);
    ensure_parent_dir(out);
    model::save_checkpoint(out, result.checkpoint);

    const std::string log_path = settings.get_string("train_log", "");
    if (!log_path.empty()) {
        std::vector<nlohmann::json> rows;
        rows.reserve(result.log.size());
        for (const auto& entry : result.log) {
            rows.push_back(nlohmann::json{{"epoch", entry.epoch},
                                          {"mean_loss", entry.mean_loss},
                                          {"seconds", entry.seconds}});
        }
        write_jsonl(log_path, rows);
    }
    log::info("checkpoint written to " + out.string() + " (final loss " +
              std::to_string(result.log.back().mean_loss) + ")");
    std::cout << out.string() << "\n";
}

void handle_eval_msi(const Settings& settings) {
    const fs::path ckpt_path = settings.get_required("ckpt");
    const fs::path report_path = settings.get_required("report");
    const bool force = settings.get_bool("force", false);
    guard_overwrite(report_path, force);

    const model::Checkpoint ckpt = model::load_checkpoint(ckpt_path);
    const model::ToyLm lm = model::ToyLm::from_identity(ckpt.backbone_identity);
    const std::string question = ckpt.metadata.value("question_template",
                                                     train::kDefaultQuestionTemplate);
    const auto samples = dataset_samples(settings, ckpt.config, question, "eval-msi");

    text::HashTokenEmbedder embedder(settings.get_int("metrics.embed_dim", 64));
    const std::string row_key = settings.get_string("model_name", "musiscene");
    const MetricReport report =
        train::evaluate_checkpoint(lm, ckpt, samples, embedder, row_key);
    write_report_file(report_path, report, force);
    std::cout << render_table(report);
}

void handle_eval_text(const Settings& settings) {
    const fs::path hyps_path = settings.get_required("hyps");
    const fs::path refs_path = settings.get_required("refs");
    const fs::path report_path = settings.get_required("report");
    const bool force = settings.get_bool("force", false);
    guard_overwrite(report_path, force);

    const auto hyps = read_lines(hyps_path);
    const auto refs = read_lines(refs_path);
    require(!hyps.empty(), "eval-text: " + hyps_path.string() + " is empty");
    require(hyps.size() == refs.size(),
            "eval-text: " + hyps_path.string() + " has " + std::to_string(hyps.size()) +
                " lines but " + refs_path.string() + " has " + std::to_string(refs.size()));
    std::vector<std::pair<std::string, std::string>> pairs;
    pairs.reserve(hyps.size());
    for (size_t i = 0; i < hyps.size(); ++i) pairs.emplace_back(hyps[i], refs[i]);

    text::HashTokenEmbedder embedder(settings.get_int("metrics.embed_dim", 64));
    const MetricReport report = text::corpus_report(pairs, embedder, "corpus");
    write_report_file(report_path, report, force);
    std::cout << render_table(report);
}

void handle_eval_audio_fad(const Settings& settings) {
    const fs::path ref_path = settings.get_required("ref");
    const fs::path gen_path = settings.get_required("gen");
    const audio::EmbeddingSet ref = audio::read_embedding_set(ref_path);
    const audio::EmbeddingSet gen = audio::read_embedding_set(gen_path);
    const double fad = audio::frechet_distance(audio::embedding_stats(ref),
                                               audio::embedding_stats(gen));
    MetricReport report;
    report.rows["audio"]["FAD"] = fad;
    const std::string report_path = settings.get_string("report", "");
    if (!report_path.empty()) {
        write_report_file(report_path, report, settings.get_bool("force", false));
    }
    char buf[64];
    std::snprintf(buf, sizeof(buf), "FAD %.9f\n", fad);
    std::cout << buf;
}

void handle_eval_audio_kl(const Settings& settings) {
    const fs::path target_path = settings.get_required("target");
    const fs::path pred_path = settings.get_required("pred");
    const auto targets = audio::read_label_file(target_path);
    const auto preds = audio::read_label_file(pred_path);
    require(targets.size() == preds.size(),
            "eval-audio kl: " + target_path.string() + " has " +
                std::to_string(targets.size()) + " distributions but " + pred_path.string() +
                " has " + std::to_string(preds.size()));
    std::vector<std::pair<audio::LabelDistribution, audio::LabelDistribution>> pairs;
    pairs.reserve(targets.size());
    for (size_t i = 0; i < targets.size(); ++i) {
        pairs.emplace_back(targets[i], preds[i]);
    }
    const double kl = audio::corpus_kl(pairs);
    MetricReport report;
    report.rows["audio"]["KL"] = kl;
    const std::string report_path = settings.get_string("report", "");
    if (!report_path.empty()) {
        write_report_file(report_path, report, settings.get_bool("force", false));
    }
    char buf[64];
    std::snprintf(buf, sizeof(buf), "KL %.9f\n", kl);
    std::cout << buf;
}

std::unique_ptr<vbmg::MusicBackend> music_backend(const Settings& settings) {
    const std::string url = settings.get_string("backend.music_url", "");
    if (!url.empty()) return std::make_unique<remote::HttpMusicBackend>(url);
    const std::string kind = settings.get_string("music_backend", "sine");
    if (kind == "sine") return std::make_unique<vbmg::SineMusicBackend>();
    if (kind == "none") return std::make_unique<vbmg::NoGenerationBackend>();
    usage_fail("invalid value for music_backend: '" + kind + "' (expected sine or none)");
}

vbmg::ExperimentConfig experiment_config(const Settings& settings, const fs::path& out_dir) {
    vbmg::ExperimentConfig cfg;
    cfg.strategies = vbmg::parse_strategy_list(
        settings.get_string("strategies", "msi,video,music,fusion"));
    cfg.output_dir = out_dir;
    cfg.duration_s = settings.get_double("duration_s", 10.0);
    cfg.seed = settings.get_u64("seed", 0);
    cfg.retry = retry_policy(settings);
    cfg.jobs = settings.get_int("jobs", 1);
    if (cfg.duration_s <= 0.0) {
        usage_fail("invalid value for duration_s: must be positive");
    }
    return cfg;
}

void handle_gen_music(const Settings& settings) {
    const fs::path dataset_path = settings.get_required("dataset");
    const fs::path out_dir = settings.get_required("out");
    const auto bundles = corpus::read_dataset(dataset_path);
    require(!bundles.empty(), "gen-music: empty dataset at " + dataset_path.string());

    const vbmg::ExperimentConfig cfg = experiment_config(settings, out_dir);
    const auto backend = music_backend(settings);
    fs::create_directories(cfg.output_dir);
    vbmg::GenerationLedger ledger(cfg.output_dir / "generation_ledger.jsonl");

    long long generated = 0;
    for (const vbmg::CaptionStrategy strategy : cfg.strategies) {
        const std::string name = vbmg::strategy_name(strategy);
        fs::create_directories(cfg.output_dir / name);
        for (const auto& bundle : bundles) {
            vbmg::GenerationTask task;
            task.clip_id = bundle.clip_id;
            task.strategy = strategy;
            task.caption = vbmg::select_caption(bundle, strategy);
            task.duration_s = cfg.duration_s;
            task.seed = vbmg::derive_generation_seed(cfg.seed, bundle.clip_id, strategy);
            task.output_path = cfg.output_dir / name / (bundle.clip_id + ".wav");
            vbmg::generate_music(task, *backend, ledger, cfg.retry);
            ++generated;
        }
    }
    log::info("generated or reused " + std::to_string(generated) + " clips under " +
              out_dir.string());
    std::cout << ledger.path().string() << "\n";
}

void handle_report(const Settings& settings) {
    const fs::path ledger_dir = settings.get_required("ledger");
    const fs::path dataset_path = settings.get_required("dataset");
    const fs::path out = settings.get_required("out");
    const bool force = settings.get_bool("force", false);
    guard_overwrite(out, force);

    const auto bundles = corpus::read_dataset(dataset_path);
    require(!bundles.empty(), "report: empty dataset at " + dataset_path.string());
    const auto manifest = optional_manifest(settings);
    require(!manifest.empty(), "report: a manifest with reference audio paths is required");
    const auto refs =
        vbmg::load_reference_audio(manifest, settings.get_string("audio_root", ""));

    vbmg::ExperimentConfig cfg = experiment_config(settings, ledger_dir);
    const int bands = settings.get_int("metrics.bands", 8);
    audio::MelStatsEmbedder embedder(bands);
    audio::EnergyBandClassifier classifier(bands);
    vbmg::NoGenerationBackend no_generation;
    const MetricReport report =
        vbmg::run_experiment(bundles, refs, no_generation, embedder, classifier, cfg);
    write_report_file(out, report, force);
    std::cout << render_table(report);
}

void handle_subjective(const Settings& settings) {
    const fs::path responses_path = settings.get_required("responses");
    const fs::path out = settings.get_required("out");
    const bool force = settings.get_bool("force", false);
    guard_overwrite(out, force);

    const auto responses = vbmg::read_survey_csv(responses_path);
    const MetricReport report = vbmg::aggregate_subjective(responses);
    write_report_file(out, report, force);
    std::cout << render_table(report, 1);
}

} // namespace

int run(int argc, const char* const* argv) {
    CLI::App app{"MusiScene pipeline: caption corpus construction, adapter fine-tuning on a "
                 "frozen language model, caption and audio metrics, and the "
                 "caption-to-music experiment driver.",
                 "musiscene"};
    app.require_subcommand(1);

    Settings settings;
    std::vector<FlagBinder> binders;

    std::string config_path;
    CLI::Option* config_opt =
        app.add_option("--config", config_path, "Configuration file with 'key = value' lines");
    bool json_logs_flag = false;
    CLI::Option* json_logs_opt =
        app.add_flag("--json-logs", json_logs_flag, "Emit structured JSON log lines");
    bool quiet_flag = false;
    CLI::Option* quiet_opt =
        app.add_flag("--quiet", quiet_flag, "Silence informational logging");

    auto bind_common = [&settings, &binders](CLI::App* cmd) -> FlagBinder& {
        // Let the global flags (--config, --json-logs, --quiet) appear after
        // the subcommand name too.
        cmd->fallthrough(true);
        binders.emplace_back(cmd, &settings);
        FlagBinder& b = binders.back();
        b.add("--seed", "seed", "Base seed for every stochastic choice");
        b.add_flag("--force", "force", "Overwrite existing outputs");
        return b;
    };

    CLI::App* build = app.add_subcommand(
        "build-corpus", "Caption every manifest clip and write dataset splits");
    {
        FlagBinder& b = bind_common(build);
        b.add("--manifest", "manifest", "Clip manifest (JSON Lines)");
        b.add("--label", "label", "Keep only clips carrying this label");
        b.add("--out", "out", "Output dataset path; .train/.test siblings are derived");
        b.add("--train-fraction", "train_fraction", "Train split fraction in (0, 1)");
        b.add("--cache", "cache_dir", "Caption cache directory");
        b.add("--jobs", "jobs", "Parallel caption workers");
        b.add("--video-backend-url", "backend.video_url", "Remote video captioner base URL");
        b.add("--music-backend-url", "backend.music_url", "Remote music captioner base URL");
        b.add("--llm-backend-url", "backend.llm_url", "Remote LLM base URL");
    }

    CLI::App* finetune = app.add_subcommand(
        "finetune", "Train the adapter on a dataset against the frozen toy LM");
    {
        FlagBinder& b = bind_common(finetune);
        b.add("--dataset", "dataset", "Training dataset (JSON Lines caption bundles)");
        b.add("--out", "out", "Checkpoint output path");
        b.add("--manifest", "manifest", "Manifest for resolving clip audio");
        b.add("--features-dir", "features_dir", "Directory of precomputed feature files");
        b.add("--audio-root", "audio_root", "Base directory for relative audio paths");
        b.add("--epochs", "train.epochs", "Training epochs");
        b.add("--batch-size", "train.batch_size", "Batch size");
        b.add("--learning-rate", "train.learning_rate", "Adam learning rate");
        b.add("--stop-loss", "train.stop_loss", "Stop once epoch mean loss drops below this");
        b.add("--question-template", "train.question_template", "Question given to the model");
        b.add("--train-fraction", "train_fraction", "Train split fraction in (0, 1)");
        b.add("--train-log", "train_log", "Write per-epoch loss log (JSON Lines)");
    }

    CLI::App* eval_msi = app.add_subcommand(
        "eval-msi", "Decode scene answers for a dataset and score them");
    {
        FlagBinder& b = bind_common(eval_msi);
        b.add("--ckpt", "ckpt", "Adapter checkpoint");
        b.add("--dataset", "dataset", "Evaluation dataset (JSON Lines caption bundles)");
        b.add("--report", "report", "Report output path (JSON)");
        b.add("--manifest", "manifest", "Manifest for resolving clip audio");
        b.add("--features-dir", "features_dir", "Directory of precomputed feature files");
        b.add("--audio-root", "audio_root", "Base directory for relative audio paths");
        b.add("--model-name", "model_name", "Row key used in the report");
        b.add("--embed-dim", "metrics.embed_dim", "Token embedding width for similarity");
    }

    CLI::App* eval_text = app.add_subcommand(
        "eval-text", "Score line-aligned hypothesis/reference caption files");
    {
        FlagBinder& b = bind_common(eval_text);
        b.add("--hyps", "hyps", "Hypothesis captions, one per line");
        b.add("--refs", "refs", "Reference captions, one per line");
        b.add("--report", "report", "Report output path (JSON)");
        b.add("--embed-dim", "metrics.embed_dim", "Token embedding width for similarity");
    }

    CLI::App* eval_audio = app.add_subcommand(
        "eval-audio", "Audio metrics over embedding or label files");
    eval_audio->require_subcommand(1);
    eval_audio->fallthrough(true);
    CLI::App* eval_fad =
        eval_audio->add_subcommand("fad", "Distribution distance between embedding sets");
    {
        FlagBinder& b = bind_common(eval_fad);
        b.add("--ref", "ref", "Reference embedding set (.f32a)");
        b.add("--gen", "gen", "Generated embedding set (.f32a)");
        b.add("--report", "report", "Optional report output path (JSON)");
    }
    CLI::App* eval_kl =
        eval_audio->add_subcommand("kl", "Mean label divergence between aligned label files");
    {
        FlagBinder& b = bind_common(eval_kl);
        b.add("--target", "target", "Target label distributions (JSON Lines)");
        b.add("--pred", "pred", "Predicted label distributions (JSON Lines)");
        b.add("--report", "report", "Optional report output path (JSON)");
    }

    CLI::App* gen_music = app.add_subcommand(
        "gen-music", "Generate music per clip and strategy into a run directory");
    {
        FlagBinder& b = bind_common(gen_music);
        b.add("--dataset", "dataset", "Dataset of caption bundles (JSON Lines)");
        b.add("--strategies", "strategies", "Comma-separated: msi,video,music,fusion");
        b.add("--out", "out", "Run directory for audio and the generation ledger");
        b.add("--duration", "duration_s", "Requested clip length in seconds");
        b.add("--jobs", "jobs", "Parallel generation workers");
        b.add("--music-backend", "music_backend", "Generator: sine or none");
        b.add("--music-backend-url", "backend.music_url", "Remote generator base URL");
    }

    CLI::App* report_cmd = app.add_subcommand(
        "report", "Score a completed generation run against reference audio");
    {
        FlagBinder& b = bind_common(report_cmd);
        b.add("--ledger", "ledger", "Run directory produced by gen-music");
        b.add("--dataset", "dataset", "Dataset of caption bundles (JSON Lines)");
        b.add("--manifest", "manifest", "Manifest with reference audio paths");
        b.add("--audio-root", "audio_root", "Base directory for relative audio paths");
        b.add("--strategies", "strategies", "Comma-separated: msi,video,music,fusion");
        b.add("--duration", "duration_s", "Clip length the run was generated with");
        b.add("--bands", "metrics.bands", "Energy bands for embedding/classification");
        b.add("--out", "out", "Report output path (JSON)");
    }

    CLI::App* subjective = app.add_subcommand(
        "subjective", "Aggregate survey responses into per-strategy means");
    {
        FlagBinder& b = bind_common(subjective);
        b.add("--responses", "responses", "Survey CSV (respondent_id,video_id,strategy,score)");
        b.add("--out", "out", "Report output path (JSON)");
    }

    if (argc <= 1) {
        std::cerr << app.help();
        return 2;
    }
    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp&) {
        std::cout << app.help("", CLI::AppFormatMode::All);
        return 0;
    } catch (const CLI::ParseError& e) {
        if (e.get_exit_code() == 0) {
            std::cout << app.help("", CLI::AppFormatMode::All);
            return 0;
        }
        std::cerr << "error: " << e.what() << "\n\n" << app.help();
        return 2;
    }

    std::string active = "musiscene";
    try {
        // Environment beats flags for these globals too.
        if (config_opt->count() > 0) settings.set_flag("config", config_path);
        if (json_logs_opt->count() > 0) settings.set_flag("json_logs", "true");
        if (quiet_opt->count() > 0) settings.set_flag("quiet", "true");
        for (const auto& binder : binders) binder.commit();

        const std::string effective_config = settings.get_string("config", "");
        if (!effective_config.empty()) settings.load_file(effective_config);

        log::set_format(settings.get_bool("json_logs", false) ? log::Format::json
                                                              : log::Format::text);
        log::set_quiet(settings.get_bool("quiet", false));

        if (app.got_subcommand(build)) {
            active = "build-corpus";
            handle_build_corpus(settings);
        } else if (app.got_subcommand(finetune)) {
            active = "finetune";
            handle_finetune(settings);
        } else if (app.got_subcommand(eval_msi)) {
            active = "eval-msi";
            handle_eval_msi(settings);
        } else if (app.got_subcommand(eval_text)) {
            active = "eval-text";
            handle_eval_text(settings);
        } else if (app.got_subcommand(eval_audio)) {
            if (eval_audio->got_subcommand(eval_fad)) {
                active = "eval-audio fad";
                handle_eval_audio_fad(settings);
            } else {
                active = "eval-audio kl";
                handle_eval_audio_kl(settings);
            }
        } else if (app.got_subcommand(gen_music)) {
            active = "gen-music";
            handle_gen_music(settings);
        } else if (app.got_subcommand(report_cmd)) {
            active = "report";
            handle_report(settings);
        } else if (app.got_subcommand(subjective)) {
            active = "subjective";
            handle_subjective(settings);
        } else {
            std::cerr << app.help();
            return 2;
        }
        return 0;
    } catch (const UsageError& e) {
        log::error(active + ": " + e.what());
        return 2;
    } catch (const std::exception& e) {
        log::error(active + ": " + e.what());
        return 1;
    }
}

} // namespace musiscene::cli
