#pragma once

#include <map>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

namespace musiscene {

/// Named metric table: row key -> metric name -> value. Shaped like the
/// result tables the evaluation commands emit. Rows that could not be
/// completed (a backend failed mid-run) are listed in `partial_rows`
/// instead of carrying non-finite values.
struct MetricReport {
    std::map<std::string, std::map<std::string, double>> rows;
    std::vector<std::string> partial_rows;

    nlohmann::json to_json() const;
    static MetricReport from_json(const nlohmann::json& j);

    bool operator==(const MetricReport&) const = default;
};

/// Fixed-width text rendering with `decimals` fraction digits; partial rows
/// appear at the bottom marked "(partial)". Display-only — serialization
/// keeps full precision.
std::string render_table(const MetricReport& report, int decimals = 3);

} // namespace musiscene
