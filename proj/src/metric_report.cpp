#include "musiscene/metric_report.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>

#include "musiscene/error.hpp"

namespace musiscene {

nlohmann::json MetricReport::to_json() const {
    nlohmann::json rows_json = nlohmann::json::object();
    for (const auto& [key, metrics] : rows) {
        nlohmann::json row = nlohmann::json::object();
        for (const auto& [name, value] : metrics) {
            require(std::isfinite(value), "non-finite metric value for " + key + "/" + name);
            row[name] = value;
        }
        rows_json[key] = std::move(row);
    }
    nlohmann::json j{{"rows", std::move(rows_json)}};
    if (!partial_rows.empty()) {
        j["partial"] = partial_rows;
    }
    return j;
}

MetricReport MetricReport::from_json(const nlohmann::json& j) {
    MetricReport report;
    require(j.contains("rows") && j["rows"].is_object(), "report has no rows object");
    for (const auto& [key, row] : j["rows"].items()) {
        for (const auto& [name, value] : row.items()) {
            report.rows[key][name] = value.get<double>();
        }
    }
    if (j.contains("partial")) {
        report.partial_rows = j["partial"].get<std::vector<std::string>>();
    }
    return report;
}

std::string render_table(const MetricReport& report, int decimals) {
    require(decimals >= 0 && decimals <= 12, "render_table: decimals out of range");
    std::vector<std::string> columns;
    for (const auto& [key, metrics] : report.rows) {
        for (const auto& [name, value] : metrics) {
            (void)value;
            bool known = false;
            for (const auto& c : columns) {
                if (c == name) {
                    known = true;
                    break;
                }
            }
            if (!known) columns.push_back(name);
        }
    }

    auto format_value = [decimals](double v) {
        char buf[64];
        std::snprintf(buf, sizeof(buf), "%.*f", decimals, v);
        return std::string(buf);
    };

    size_t key_width = 0;
    for (const auto& [key, metrics] : report.rows) key_width = std::max(key_width, key.size());
    for (const auto& key : report.partial_rows) key_width = std::max(key_width, key.size());
    std::vector<size_t> widths(columns.size());
    for (size_t c = 0; c < columns.size(); ++c) {
        widths[c] = columns[c].size();
        for (const auto& [key, metrics] : report.rows) {
            const auto it = metrics.find(columns[c]);
            if (it != metrics.end()) {
                widths[c] = std::max(widths[c], format_value(it->second).size());
            }
        }
    }

    std::string out;
    auto pad = [](const std::string& s, size_t width) {
        return s + std::string(width > s.size() ? width - s.size() : 0, ' ');
    };
    out += pad("", key_width);
    for (size_t c = 0; c < columns.size(); ++c) {
        out += "  ";
        out += pad(columns[c], widths[c]);
    }
    out += "\n";
    for (const auto& [key, metrics] : report.rows) {
        out += pad(key, key_width);
        for (size_t c = 0; c < columns.size(); ++c) {
            out += "  ";
            const auto it = metrics.find(columns[c]);
            out += pad(it == metrics.end() ? "-" : format_value(it->second), widths[c]);
        }
        out += "\n";
    }
    for (const auto& key : report.partial_rows) {
        out += pad(key, key_width) + "  (partial)\n";
    }
    return out;
}

} // namespace musiscene
