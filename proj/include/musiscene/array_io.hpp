#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace musiscene {

/// Dense float32 array with its shape, as stored on disk.
///
/// File layout (little endian):
///   8-byte magic "MSARRF32", u32 ndim, ndim x u64 dims, row-major f32 data.
/// A sidecar `<path>.json` records which backend produced the array.
struct F32Array {
    std::vector<uint64_t> shape;
    std::vector<float> data;

    uint64_t element_count() const {
        uint64_t n = 1;
        for (uint64_t d : shape) {
            n *= d;
        }
        return shape.empty() ? 0 : n;
    }
};

void write_f32_array(const std::filesystem::path& path, const F32Array& array,
                     const std::string& backend_id);

F32Array read_f32_array(const std::filesystem::path& path);

/// Backend id from the sidecar; empty string when the sidecar is missing.
std::string read_array_backend(const std::filesystem::path& path);

} // namespace musiscene
