#include "musiscene/corpus_build.hpp"

#include <future>

#include "musiscene/error.hpp"

namespace musiscene::corpus {

namespace {

std::string strip(const std::string& s) {
    const size_t begin = s.find_first_not_of(" \t\r\n");
    if (begin == std::string::npos) {
        return "";
    }
    const size_t end = s.find_last_not_of(" \t\r\n");
    return s.substr(begin, end - begin + 1);
}

std::string cached_request(CaptionerBackend& backend, const std::string& payload,
                           CaptionCache& cache, const RetryPolicy& retry,
                           const std::string& clip_id) {
    if (auto hit = cache.lookup(backend.id(), payload)) {
        return *hit;
    }
    std::string response;
    try {
        response = strip(request_with_retries(backend, payload, retry));
    } catch (const std::exception& e) {
        fail("clip " + clip_id + ": backend " + backend.id() + ": " + e.what());
    }
    require(!response.empty(),
            "clip " + clip_id + ": backend " + backend.id() + " returned an empty caption");
    cache.store(backend.id(), payload, response);
    return response;
}

} // namespace

CaptionBundle generate_bundle(const ClipRecord& record, const BundleBackends& backends,
                              CaptionCache& cache, const RetryPolicy& retry) {
    CaptionBundle bundle;
    bundle.clip_id = record.clip_id;
    bundle.video_caption =
        cached_request(backends.video, record.media_uri, cache, retry, record.clip_id);
    bundle.music_caption =
        cached_request(backends.music, record.audio_path, cache, retry, record.clip_id);
    bundle.fusion_caption =
        cached_request(backends.llm, build_fusion_prompt(bundle.video_caption, bundle.music_caption),
                       cache, retry, record.clip_id);
    bundle.msi_caption =
        cached_request(backends.llm, build_msi_prompt(bundle.video_caption, bundle.music_caption),
                       cache, retry, record.clip_id);
    bundle.backend_provenance = {{"video", backends.video.id()},
                                 {"music", backends.music.id()},
                                 {"fusion", backends.llm.id()},
                                 {"msi", backends.llm.id()}};
    return bundle;
}

std::vector<CaptionBundle> build_corpus(const std::vector<ClipRecord>& records,
                                        const BundleBackends& backends, CaptionCache& cache,
                                        const RetryPolicy& retry, int jobs) {
    std::vector<CaptionBundle> bundles(records.size());
    if (jobs <= 1) {
        for (size_t i = 0; i < records.size(); ++i) {
            bundles[i] = generate_bundle(records[i], backends, cache, retry);
        }
        return bundles;
    }
    std::atomic<size_t> next{0};
    auto worker = [&] {
        for (;;) {
            const size_t i = next.fetch_add(1);
            if (i >= records.size()) {
                return;
            }
            bundles[i] = generate_bundle(records[i], backends, cache, retry);
        }
    };
    std::vector<std::future<void>> futures;
    for (int j = 0; j < jobs; ++j) {
        futures.push_back(std::async(std::launch::async, worker));
    }
    for (auto& f : futures) {
        f.get(); // rethrows the first worker failure
    }
    return bundles;
}

} // namespace musiscene::corpus
