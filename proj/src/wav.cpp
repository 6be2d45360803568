#include "musiscene/wav.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>

#include "musiscene/error.hpp"
#include "musiscene/fsio.hpp"

namespace fs = std::filesystem;

namespace musiscene {

namespace {

void put_u32(std::string& s, uint32_t v) {
    for (int i = 0; i < 4; ++i) {
        s.push_back(char((v >> (8 * i)) & 0xff));
    }
}

void put_u16(std::string& s, uint16_t v) {
    s.push_back(char(v & 0xff));
    s.push_back(char((v >> 8) & 0xff));
}

uint32_t get_u32(const char* p) {
    return uint32_t(uint8_t(p[0])) | uint32_t(uint8_t(p[1])) << 8 |
           uint32_t(uint8_t(p[2])) << 16 | uint32_t(uint8_t(p[3])) << 24;
}

uint16_t get_u16(const char* p) {
    return uint16_t(uint8_t(p[0])) | uint16_t(uint8_t(p[1])) << 8;
}

} // namespace

std::string wav_bytes(const AudioClip& clip) {
    const uint32_t n = uint32_t(clip.samples.size());
    const uint32_t data_bytes = n * 2;
    std::string out;
    out.reserve(44 + data_bytes);
    out += "RIFF";
    put_u32(out, 36 + data_bytes);
    out += "WAVEfmt ";
    put_u32(out, 16);
    put_u16(out, 1); // PCM
    put_u16(out, 1); // mono
    put_u32(out, clip.sample_rate);
    put_u32(out, clip.sample_rate * 2);
    put_u16(out, 2);
    put_u16(out, 16);
    out += "data";
    put_u32(out, data_bytes);
    for (uint32_t i = 0; i < n; ++i) {
        const double x = std::clamp(clip.samples[i], -1.0, 1.0);
        const int16_t q = int16_t(std::lround(x * 32767.0));
        put_u16(out, uint16_t(q));
    }
    return out;
}

void write_wav(const fs::path& path, const AudioClip& clip) {
    atomic_write_file(path, wav_bytes(clip));
}

AudioClip wav_from_bytes(const std::string& raw) {
    if (raw.size() < 44 || raw.compare(0, 4, "RIFF") != 0 || raw.compare(8, 4, "WAVE") != 0) {
        fail("not a RIFF/WAVE payload");
    }
    AudioClip clip;
    uint16_t channels = 0;
    uint16_t bits = 0;
    bool have_fmt = false;
    size_t off = 12;
    while (off + 8 <= raw.size()) {
        const std::string id = raw.substr(off, 4);
        const uint32_t size = get_u32(raw.data() + off + 4);
        off += 8;
        if (off + size > raw.size()) {
            fail("truncated WAVE chunk '" + id + "'");
        }
        if (id == "fmt ") {
            require(size >= 16, "short fmt chunk");
            const uint16_t format = get_u16(raw.data() + off);
            channels = get_u16(raw.data() + off + 2);
            clip.sample_rate = get_u32(raw.data() + off + 4);
            bits = get_u16(raw.data() + off + 14);
            require(format == 1, "only PCM WAVE is supported");
            require(bits == 16, "only 16-bit WAVE is supported");
            require(channels == 1 || channels == 2, "only mono/stereo WAVE is supported");
            have_fmt = true;
        } else if (id == "data") {
            require(have_fmt, "data chunk before fmt");
            const size_t frames = size / (2 * channels);
            clip.samples.resize(frames);
            for (size_t i = 0; i < frames; ++i) {
                double acc = 0;
                for (uint16_t c = 0; c < channels; ++c) {
                    const int16_t q =
                        int16_t(get_u16(raw.data() + off + 2 * (i * channels + c)));
                    acc += double(q) / 32767.0;
                }
                clip.samples[i] = acc / channels;
            }
            return clip;
        }
        off += size + (size & 1);
    }
    fail("WAVE file has no data chunk");
}

AudioClip read_wav(const fs::path& path) {
    try {
        return wav_from_bytes(read_file(path));
    } catch (const Error& e) {
        fail(path.string() + ": " + e.what());
    }
}

} // namespace musiscene
