#include <doctest.h>

#include <algorithm>
#include <set>
#include <string>
#include <vector>

#include "musiscene/caption_backends.hpp"
#include "musiscene/caption_cache.hpp"
#include "musiscene/corpus.hpp"
#include "musiscene/corpus_build.hpp"
#include "musiscene/error.hpp"
#include "test_util.hpp"

using namespace musiscene;
using namespace musiscene::corpus;

namespace {

std::vector<CaptionBundle> numbered_bundles(int n) {
    std::vector<CaptionBundle> bundles;
    bundles.reserve(n);
    for (int i = 0; i < n; ++i) {
        CaptionBundle b;
        b.clip_id = "clip-" + std::to_string(i);
        b.video_caption = "video " + std::to_string(i);
        b.music_caption = "music " + std::to_string(i);
        b.fusion_caption = "fusion " + std::to_string(i);
        b.msi_caption = "scene " + std::to_string(i);
        bundles.push_back(std::move(b));
    }
    return bundles;
}

std::vector<ClipRecord> small_manifest(int n) {
    std::vector<ClipRecord> records;
    for (int i = 0; i < n; ++i) {
        ClipRecord r;
        r.clip_id = "clip-" + std::to_string(i);
        r.media_uri = "media://clip-" + std::to_string(i);
        r.audio_path = "clip-" + std::to_string(i) + ".wav";
        r.labels = {"Music"};
        r.start_s = 0.0;
        r.end_s = 10.0;
        records.push_back(std::move(r));
    }
    return records;
}

} // namespace

TEST_CASE("fusion prompt is the exact template") {
    CHECK(build_fusion_prompt("x", "y") ==
          "Video Caption: \"x\", Music Caption: \"y\". Describe the music from both video "
          "and music captions.");
    const std::string v = "A basketball game is being played in front of a crowd.";
    const std::string m = "The music has a mood of suspense...";
    CHECK(build_fusion_prompt(v, m) ==
          "Video Caption: \"" + v + "\", Music Caption: \"" + m +
              "\". Describe the music from both video and music captions.");
    CHECK_THROWS_AS(build_fusion_prompt("", "y"), Error);
    CHECK_THROWS_AS(build_fusion_prompt("x", ""), Error);
}

TEST_CASE("msi prompt is the exact template") {
    CHECK(build_msi_prompt("x", "y") ==
          "Video Caption: \"x\", Music Caption: \"y\". What type of scene the music is "
          "suitable for?");
    CHECK_THROWS_AS(build_msi_prompt("", "y"), Error);
    CHECK_THROWS_AS(build_msi_prompt("x", ""), Error);
}

TEST_CASE("manifest round trip preserves records and order") {
    testutil::TempDir tmp;
    const auto records = small_manifest(5);
    const auto path = tmp / "manifest.jsonl";
    write_manifest(path, records);
    const auto back = load_manifest(path);
    CHECK(back == records);
}

TEST_CASE("manifest loader reports duplicate ids with line numbers") {
    testutil::TempDir tmp;
    auto records = small_manifest(2);
    records[1].clip_id = records[0].clip_id;
    const auto path = tmp / "manifest.jsonl";
    write_manifest(path, records);
    try {
        load_manifest(path);
        FAIL("expected an error");
    } catch (const Error& e) {
        CHECK(std::string(e.what()).find("duplicate") != std::string::npos);
    }
}

TEST_CASE("filter_by_label keeps matching records in order") {
    auto records = small_manifest(4);
    records[1].labels = {"Speech"};
    records[3].labels = {"Music", "Speech"};
    const auto music = filter_by_label(records, "Music");
    REQUIRE(music.size() == 3);
    CHECK(music[0].clip_id == "clip-0");
    CHECK(music[1].clip_id == "clip-2");
    CHECK(music[2].clip_id == "clip-3");
}

TEST_CASE("split_dataset floor rule, partition, determinism") {
    const auto bundles = numbered_bundles(10);
    const auto [train, test] = split_dataset(bundles, 0.8, 7);
    CHECK(train.size() == 8);
    CHECK(test.size() == 2);

    std::set<std::string> seen;
    for (const auto& b : train) seen.insert(b.clip_id);
    for (const auto& b : test) seen.insert(b.clip_id);
    CHECK(seen.size() == 10);

    const auto [train2, test2] = split_dataset(bundles, 0.8, 7);
    CHECK(train == train2);
    CHECK(test == test2);

    const auto [train3, test3] = split_dataset(bundles, 0.8, 8);
    const bool same_order = train == train3;
    CHECK_FALSE(same_order); // different seed shuffles differently

    CHECK_THROWS_AS(split_dataset(bundles, 0.0, 1), Error);
    CHECK_THROWS_AS(split_dataset(bundles, 1.0, 1), Error);
    CHECK_THROWS_AS(split_dataset({}, 0.8, 1), Error);
}

TEST_CASE("split_dataset with 3371 bundles gives 2696/675") {
    const auto bundles = numbered_bundles(3371);
    const auto [train, test] = split_dataset(bundles, 0.8, 0);
    CHECK(train.size() == 2696);
    CHECK(test.size() == 675);
}

TEST_CASE("dataset round trip") {
    testutil::TempDir tmp;
    auto bundles = numbered_bundles(3);
    bundles[0].backend_provenance["video"] = "stub-video";
    const auto path = tmp / "dataset.jsonl";
    write_dataset(path, bundles);
    CHECK(read_dataset(path) == bundles);
}

TEST_CASE("caption cache stores and replays responses") {
    testutil::TempDir tmp;
    CaptionCache cache(tmp / "cache");
    CHECK_FALSE(cache.lookup("backend-a", "payload-1").has_value());
    cache.store("backend-a", "payload-1", "hello");
    REQUIRE(cache.lookup("backend-a", "payload-1").has_value());
    CHECK(*cache.lookup("backend-a", "payload-1") == "hello");
    // Distinct backend or payload means a distinct entry.
    CHECK_FALSE(cache.lookup("backend-b", "payload-1").has_value());
    CHECK_FALSE(cache.lookup("backend-a", "payload-2").has_value());
    CHECK(CaptionCache::key("backend-a", "payload-1") !=
          CaptionCache::key("backend-b", "payload-1"));
    // Conflicting content under an existing key is an error.
    CHECK_THROWS_AS(cache.store("backend-a", "payload-1", "different"), Error);
    // Same content is an idempotent no-op.
    CHECK_NOTHROW(cache.store("backend-a", "payload-1", "hello"));
}

TEST_CASE("generate_bundle fills all four captions and consults the cache") {
    testutil::TempDir tmp;
    CaptionCache cache(tmp / "cache");
    StubCaptioner video("stub-video", "a video");
    StubCaptioner music("stub-music", "some music");
    StubCaptioner llm("stub-llm", "an answer");
    BundleBackends backends{video, music, llm};

    const auto records = small_manifest(1);
    const CaptionBundle bundle = generate_bundle(records[0], backends, cache);
    CHECK(bundle.clip_id == "clip-0");
    CHECK(bundle.video_caption == "a video for media://clip-0");
    // The music backend is handed the audio path, not the media URI.
    CHECK(bundle.music_caption == "some music for clip-0.wav");
    CHECK_FALSE(bundle.fusion_caption.empty());
    CHECK_FALSE(bundle.msi_caption.empty());
    // fusion/msi go through the LLM with the exact prompts
    CHECK(bundle.fusion_caption ==
          "an answer for " + build_fusion_prompt(bundle.video_caption, bundle.music_caption));
    CHECK(bundle.msi_caption ==
          "an answer for " + build_msi_prompt(bundle.video_caption, bundle.music_caption));
    CHECK(video.calls() == 1);
    CHECK(music.calls() == 1);
    CHECK(llm.calls() == 2);

    // Warm cache: identical bundle, zero additional backend calls.
    const CaptionBundle again = generate_bundle(records[0], backends, cache);
    CHECK(again == bundle);
    CHECK(video.calls() == 1);
    CHECK(music.calls() == 1);
    CHECK(llm.calls() == 2);
}

TEST_CASE("backend failures carry clip id and backend identity") {
    testutil::TempDir tmp;
    CaptionCache cache(tmp / "cache");
    FailingCaptioner video("broken-video", -1);
    StubCaptioner music("stub-music", "some music");
    StubCaptioner llm("stub-llm", "an answer");
    BundleBackends backends{video, music, llm};
    const auto records = small_manifest(1);
    corpus::RetryPolicy fast{2, 0};
    try {
        generate_bundle(records[0], backends, cache, fast);
        FAIL("expected an error");
    } catch (const Error& e) {
        const std::string msg = e.what();
        CHECK(msg.find("clip-0") != std::string::npos);
        CHECK(msg.find("broken-video") != std::string::npos);
    }
}

TEST_CASE("request_with_retries recovers from transient failures") {
    FailingCaptioner flaky("flaky", 2);
    corpus::RetryPolicy policy{3, 0};
    CHECK(request_with_retries(flaky, "x", policy) == "recovered response");
    CHECK(flaky.calls() == 3);

    FailingCaptioner dead("dead", -1);
    CHECK_THROWS_AS(request_with_retries(dead, "x", policy), Error);
    CHECK(dead.calls() == 3);
}

TEST_CASE("build_corpus processes every record and is idempotent under cache") {
    testutil::TempDir tmp;
    CaptionCache cache(tmp / "cache");
    StubCaptioner video("stub-video", "a video");
    StubCaptioner music("stub-music", "some music");
    StubCaptioner llm("stub-llm", "an answer");
    BundleBackends backends{video, music, llm};
    const auto records = small_manifest(6);

    const auto bundles = build_corpus(records, backends, cache);
    REQUIRE(bundles.size() == 6);
    for (size_t i = 0; i < bundles.size(); ++i) {
        CHECK(bundles[i].clip_id == records[i].clip_id);
    }
    const long long calls_after_first = video.calls();

    const auto again = build_corpus(records, backends, cache);
    CHECK(again == bundles);
    CHECK(video.calls() == calls_after_first);

    // Parallel build from a cold cache gives the same result.
    testutil::TempDir tmp2;
    CaptionCache cold(tmp2 / "cache");
    const auto parallel = build_corpus(records, backends, cold, {}, 3);
    CHECK(parallel == bundles);
}
