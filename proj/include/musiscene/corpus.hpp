#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <set>
#include <string>
#include <utility>
#include <vector>

namespace musiscene::corpus {

/// One source clip from a manifest.
struct ClipRecord {
    std::string clip_id;
    std::string media_uri;
    std::string audio_path;
    std::set<std::string> labels;
    double start_s = 0.0;
    double end_s = 0.0;

    bool operator==(const ClipRecord&) const = default;
};

/// The four captions attached to one clip, plus which backend produced each.
struct CaptionBundle {
    std::string clip_id;
    std::string video_caption;
    std::string music_caption;
    std::string fusion_caption;
    std::string msi_caption;
    std::map<std::string, std::string> backend_provenance;

    bool operator==(const CaptionBundle&) const = default;
};

/// Reads a JSON Lines manifest, one clip per line, order preserved.
/// Malformed lines and duplicate ids are reported with their line number.
std::vector<ClipRecord> load_manifest(const std::filesystem::path& path);

void write_manifest(const std::filesystem::path& path, const std::vector<ClipRecord>& records);

/// Records whose label set contains `label`, in input order.
std::vector<ClipRecord> filter_by_label(const std::vector<ClipRecord>& records,
                                        const std::string& label);

/// Exact prompt handed to the fusion LLM for a caption pair.
std::string build_fusion_prompt(const std::string& video_caption,
                                const std::string& music_caption);

/// Exact prompt handed to the LLM when asking for the scene a music fits.
std::string build_msi_prompt(const std::string& video_caption,
                             const std::string& music_caption);

/// Seeded shuffle-and-cut. Train gets floor(train_fraction * N) bundles;
/// the two halves partition the input.
std::pair<std::vector<CaptionBundle>, std::vector<CaptionBundle>>
split_dataset(const std::vector<CaptionBundle>& bundles, double train_fraction, uint64_t seed);

/// Dataset files are JSON Lines with the CaptionBundle field names. Unknown
/// extra fields on read are ignored.
void write_dataset(const std::filesystem::path& path, const std::vector<CaptionBundle>& bundles);
std::vector<CaptionBundle> read_dataset(const std::filesystem::path& path);

} // namespace musiscene::corpus
