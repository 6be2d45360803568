#pragma once

#include <vector>

#include "musiscene/caption_backends.hpp"
#include "musiscene/caption_cache.hpp"
#include "musiscene/corpus.hpp"

namespace musiscene::corpus {

struct BundleBackends {
    CaptionerBackend& video;
    CaptionerBackend& music;
    CaptionerBackend& llm;
};

/// Produces the four captions for one clip. Every backend call goes through
/// the cache, so a rerun over a warm cache touches no backend. Captions are
/// whitespace-stripped before caching.
CaptionBundle generate_bundle(const ClipRecord& record, const BundleBackends& backends,
                              CaptionCache& cache, const RetryPolicy& retry = {});

/// generate_bundle over a record list; `jobs` > 1 processes clips in
/// parallel while keeping output order equal to input order.
std::vector<CaptionBundle> build_corpus(const std::vector<ClipRecord>& records,
                                        const BundleBackends& backends, CaptionCache& cache,
                                        const RetryPolicy& retry = {}, int jobs = 1);

} // namespace musiscene::corpus
