#pragma once

#include <cstdint>
#include <string>
#include <string_view>

namespace musiscene {

/// Incremental SHA-256. Used for content-addressed cache keys and for
/// deriving per-item seeds from a run seed.
class Sha256 {
public:
    Sha256() { reset(); }

    void reset();
    void update(const void* data, size_t len);
    void update(std::string_view s) { update(s.data(), s.size()); }

    /// Finishes the digest and returns 64 hex characters.
    std::string hex_digest();

    /// One-shot convenience.
    static std::string hex(std::string_view s) {
        Sha256 h;
        h.update(s);
        return h.hex_digest();
    }

private:
    void process_block(const uint8_t* block);

    uint32_t state_[8];
    uint64_t bit_count_ = 0;
    uint8_t buffer_[64];
    size_t buffer_len_ = 0;
};

/// First 8 digest bytes as a big-endian integer; handy for seed derivation.
uint64_t sha256_prefix64(std::string_view s);

} // namespace musiscene
