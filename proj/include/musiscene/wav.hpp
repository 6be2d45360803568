#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

namespace musiscene {

/// Mono audio clip, samples in [-1, 1].
struct AudioClip {
    std::vector<double> samples;
    uint32_t sample_rate = 16000;

    double duration_s() const {
        return sample_rate ? double(samples.size()) / sample_rate : 0.0;
    }
};

/// 16-bit PCM mono WAV. Stereo input is averaged down to mono on read.
void write_wav(const std::filesystem::path& path, const AudioClip& clip);
AudioClip read_wav(const std::filesystem::path& path);

/// Serialized form of write_wav, for backends that return audio payloads.
std::string wav_bytes(const AudioClip& clip);
AudioClip wav_from_bytes(const std::string& bytes);

} // namespace musiscene
