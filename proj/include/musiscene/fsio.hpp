#pragma once

#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include <nlohmann/json_fwd.hpp>

namespace musiscene {

std::string read_file(const std::filesystem::path& path);

/// Writes via a sibling temp file and rename, so readers never observe a
/// partial file.
void atomic_write_file(const std::filesystem::path& path, std::string_view content);

void ensure_parent_dir(const std::filesystem::path& path);

/// Parses a JSON Lines file. Blank lines are skipped; a malformed line
/// raises an Error naming its 1-based line number.
std::vector<nlohmann::json> read_jsonl(const std::filesystem::path& path);

/// Serializes one JSON object per line (atomic write).
void write_jsonl(const std::filesystem::path& path, const std::vector<nlohmann::json>& rows);

} // namespace musiscene
