#include "musiscene/fsio.hpp"

#include <fstream>
#include <sstream>

#include <nlohmann/json.hpp>

#include "musiscene/error.hpp"

namespace fs = std::filesystem;

namespace musiscene {

std::string read_file(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        fail("cannot open file: " + path.string());
    }
    std::ostringstream buf;
    buf << in.rdbuf();
    if (in.bad()) {
        fail("read failed: " + path.string());
    }
    return buf.str();
}

void ensure_parent_dir(const fs::path& path) {
    const fs::path parent = path.parent_path();
    if (!parent.empty()) {
        fs::create_directories(parent);
    }
}

void atomic_write_file(const fs::path& path, std::string_view content) {
    ensure_parent_dir(path);
    fs::path tmp = path;
    tmp += ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) {
            fail("cannot open for write: " + tmp.string());
        }
        out.write(content.data(), static_cast<std::streamsize>(content.size()));
        out.flush();
        if (!out) {
            fail("write failed: " + tmp.string());
        }
    }
    std::error_code ec;
    fs::rename(tmp, path, ec);
    if (ec) {
        fs::remove(tmp);
        fail("rename failed for " + path.string() + ": " + ec.message());
    }
}

std::vector<nlohmann::json> read_jsonl(const fs::path& path) {
    std::ifstream in(path);
    if (!in) {
        fail("cannot open file: " + path.string());
    }
    std::vector<nlohmann::json> rows;
    std::string line;
    size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty() || line.find_first_not_of(" \t\r") == std::string::npos) {
            continue;
        }
        nlohmann::json j = nlohmann::json::parse(line, nullptr, false);
        if (j.is_discarded()) {
            fail("malformed JSON at " + path.string() + ":" + std::to_string(lineno));
        }
        rows.push_back(std::move(j));
    }
    return rows;
}

void write_jsonl(const fs::path& path, const std::vector<nlohmann::json>& rows) {
    std::string out;
    for (const auto& row : rows) {
        out += row.dump();
        out += '\n';
    }
    atomic_write_file(path, out);
}

} // namespace musiscene
