#include "musiscene/array_io.hpp"

#include <cstring>
#include <fstream>

#include <nlohmann/json.hpp>

#include "musiscene/error.hpp"
#include "musiscene/fsio.hpp"

namespace fs = std::filesystem;

namespace musiscene {

namespace {

constexpr char kMagic[8] = {'M', 'S', 'A', 'R', 'R', 'F', '3', '2'};

template <typename T>
void append_le(std::string& out, T v) {
    for (size_t i = 0; i < sizeof(T); ++i) {
        out.push_back(char((v >> (8 * i)) & 0xff));
    }
}

template <typename T>
T read_le(const char* p) {
    T v = 0;
    for (size_t i = 0; i < sizeof(T); ++i) {
        v |= T(uint8_t(p[i])) << (8 * i);
    }
    return v;
}

} // namespace

void write_f32_array(const fs::path& path, const F32Array& array, const std::string& backend_id) {
    require(array.data.size() == array.element_count(),
            "array data size does not match its shape");
    std::string out;
    out.append(kMagic, sizeof(kMagic));
    append_le<uint32_t>(out, uint32_t(array.shape.size()));
    for (uint64_t d : array.shape) {
        append_le<uint64_t>(out, d);
    }
    const size_t data_bytes = array.data.size() * sizeof(float);
    const size_t off = out.size();
    out.resize(off + data_bytes);
    static_assert(sizeof(float) == 4);
    // f32 payload is written as-is; this targets little-endian hosts
    std::memcpy(out.data() + off, array.data.data(), data_bytes);
    atomic_write_file(path, out);

    nlohmann::json sidecar{{"backend", backend_id},
                           {"dtype", "float32"},
                           {"shape", array.shape}};
    fs::path side = path;
    side += ".json";
    atomic_write_file(side, sidecar.dump(2) + "\n");
}

F32Array read_f32_array(const fs::path& path) {
    const std::string raw = read_file(path);
    if (raw.size() < sizeof(kMagic) + 4 || std::memcmp(raw.data(), kMagic, sizeof(kMagic)) != 0) {
        fail("not an f32 array file: " + path.string());
    }
    size_t off = sizeof(kMagic);
    const uint32_t ndim = read_le<uint32_t>(raw.data() + off);
    off += 4;
    if (ndim == 0 || ndim > 8 || raw.size() < off + size_t(ndim) * 8) {
        fail("corrupt array header: " + path.string());
    }
    F32Array array;
    array.shape.resize(ndim);
    for (uint32_t i = 0; i < ndim; ++i) {
        array.shape[i] = read_le<uint64_t>(raw.data() + off);
        off += 8;
    }
    const uint64_t count = array.element_count();
    if (raw.size() != off + count * sizeof(float)) {
        fail("array payload size mismatch: " + path.string());
    }
    array.data.resize(count);
    std::memcpy(array.data.data(), raw.data() + off, count * sizeof(float));
    return array;
}

std::string read_array_backend(const fs::path& path) {
    fs::path side = path;
    side += ".json";
    if (!fs::exists(side)) {
        return "";
    }
    const nlohmann::json j = nlohmann::json::parse(read_file(side));
    return j.value("backend", "");
}

} // namespace musiscene
