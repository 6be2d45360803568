#include "musiscene/corpus.hpp"

#include <cmath>
#include <fstream>
#include <numeric>

#include <nlohmann/json.hpp>

#include "musiscene/error.hpp"
#include "musiscene/fsio.hpp"
#include "musiscene/rng.hpp"

namespace fs = std::filesystem;

namespace musiscene::corpus {

namespace {

ClipRecord record_from_json(const nlohmann::json& j, const std::string& where) {
    for (const char* field : {"clip_id", "media_uri", "audio_path", "labels", "start_s", "end_s"}) {
        require(j.contains(field), where + ": missing field '" + std::string(field) + "'");
    }
    ClipRecord r;
    r.clip_id = j["clip_id"].get<std::string>();
    r.media_uri = j["media_uri"].get<std::string>();
    r.audio_path = j["audio_path"].get<std::string>();
    for (const auto& label : j["labels"]) {
        r.labels.insert(label.get<std::string>());
    }
    r.start_s = j["start_s"].get<double>();
    r.end_s = j["end_s"].get<double>();
    require(!r.clip_id.empty(), where + ": empty clip_id");
    require(r.end_s - r.start_s > 0.0, where + ": end_s must be greater than start_s");
    return r;
}

} // namespace

std::vector<ClipRecord> load_manifest(const fs::path& path) {
    std::ifstream in(path);
    if (!in) {
        fail("cannot open manifest: " + path.string());
    }
    std::vector<ClipRecord> records;
    std::set<std::string> seen;
    std::string line;
    size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.find_first_not_of(" \t\r") == std::string::npos) {
            continue;
        }
        const std::string where = path.string() + ":" + std::to_string(lineno);
        nlohmann::json j = nlohmann::json::parse(line, nullptr, false);
        if (j.is_discarded()) {
            fail(where + ": malformed JSON");
        }
        ClipRecord r = record_from_json(j, where);
        require(seen.insert(r.clip_id).second, where + ": duplicate clip_id '" + r.clip_id + "'");
        records.push_back(std::move(r));
    }
    return records;
}

void write_manifest(const fs::path& path, const std::vector<ClipRecord>& records) {
    std::vector<nlohmann::json> rows;
    rows.reserve(records.size());
    for (const auto& r : records) {
        rows.push_back({{"clip_id", r.clip_id},
                        {"media_uri", r.media_uri},
                        {"audio_path", r.audio_path},
                        {"labels", r.labels},
                        {"start_s", r.start_s},
                        {"end_s", r.end_s}});
    }
    write_jsonl(path, rows);
}

std::vector<ClipRecord> filter_by_label(const std::vector<ClipRecord>& records,
                                        const std::string& label) {
    std::vector<ClipRecord> out;
    for (const auto& r : records) {
        if (r.labels.count(label)) {
            out.push_back(r);
        }
    }
    return out;
}

std::string build_fusion_prompt(const std::string& video_caption,
                                const std::string& music_caption) {
    require(!video_caption.empty(), "fusion prompt needs a non-empty video caption");
    require(!music_caption.empty(), "fusion prompt needs a non-empty music caption");
    return "Video Caption: \"" + video_caption + "\", Music Caption: \"" + music_caption +
           "\". Describe the music from both video and music captions.";
}

std::string build_msi_prompt(const std::string& video_caption, const std::string& music_caption) {
    require(!video_caption.empty(), "msi prompt needs a non-empty video caption");
    require(!music_caption.empty(), "msi prompt needs a non-empty music caption");
    return "Video Caption: \"" + video_caption + "\", Music Caption: \"" + music_caption +
           "\". What type of scene the music is suitable for?";
}

std::pair<std::vector<CaptionBundle>, std::vector<CaptionBundle>>
split_dataset(const std::vector<CaptionBundle>& bundles, double train_fraction, uint64_t seed) {
    require(!bundles.empty(), "cannot split an empty dataset");
    require(train_fraction > 0.0 && train_fraction < 1.0,
            "train_fraction must be in (0,1), got " + std::to_string(train_fraction));

    std::vector<size_t> order(bundles.size());
    std::iota(order.begin(), order.end(), size_t{0});
    Rng rng(seed);
    rng.shuffle(order);

    const size_t train_count = size_t(std::floor(train_fraction * double(bundles.size())));
    std::pair<std::vector<CaptionBundle>, std::vector<CaptionBundle>> out;
    out.first.reserve(train_count);
    out.second.reserve(bundles.size() - train_count);
    for (size_t i = 0; i < order.size(); ++i) {
        (i < train_count ? out.first : out.second).push_back(bundles[order[i]]);
    }
    return out;
}

namespace {

nlohmann::json bundle_to_json(const CaptionBundle& b) {
    return {{"clip_id", b.clip_id},
            {"video_caption", b.video_caption},
            {"music_caption", b.music_caption},
            {"fusion_caption", b.fusion_caption},
            {"msi_caption", b.msi_caption},
            {"backend_provenance", b.backend_provenance}};
}

} // namespace

void write_dataset(const fs::path& path, const std::vector<CaptionBundle>& bundles) {
    std::vector<nlohmann::json> rows;
    rows.reserve(bundles.size());
    for (const auto& b : bundles) {
        rows.push_back(bundle_to_json(b));
    }
    write_jsonl(path, rows);
}

std::vector<CaptionBundle> read_dataset(const fs::path& path) {
    std::vector<CaptionBundle> bundles;
    size_t row_index = 0;
    for (const auto& j : read_jsonl(path)) {
        ++row_index;
        const std::string where = path.string() + " record " + std::to_string(row_index);
        for (const char* field : {"clip_id", "video_caption", "music_caption", "fusion_caption",
                                  "msi_caption"}) {
            require(j.contains(field), where + ": missing field '" + std::string(field) + "'");
        }
        CaptionBundle b;
        b.clip_id = j["clip_id"].get<std::string>();
        b.video_caption = j["video_caption"].get<std::string>();
        b.music_caption = j["music_caption"].get<std::string>();
        b.fusion_caption = j["fusion_caption"].get<std::string>();
        b.msi_caption = j["msi_caption"].get<std::string>();
        if (j.contains("backend_provenance")) {
            b.backend_provenance =
                j["backend_provenance"].get<std::map<std::string, std::string>>();
        }
        bundles.push_back(std::move(b));
    }
    return bundles;
}

} // namespace musiscene::corpus
