#pragma once

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "memodetector/error.hpp"
#include "memodetector/io/csv.hpp"

namespace memodetector::train {

/// A table.csv plus the run.json written next to it.
struct RunTable {
    std::filesystem::path dir;
    std::string kind;
    std::string dataset;
    std::vector<std::string> labels;
    io::CsvRow header;
    std::vector<io::CsvRow> rows;

    std::size_t column(const std::string& name) const {
        auto it = std::find(header.begin(), header.end(), name);
        if (it == header.end()) throw ValidationError(dir.string() + "/table.csv lacks column '" + name + "'");
        return static_cast<std::size_t>(it - header.begin());
    }
};

inline RunTable load_run_table(const std::filesystem::path& dir) {
    RunTable t;
    t.dir = dir;
    std::ifstream in(dir / "run.json");
    if (!in) throw InputError("cannot open " + (dir / "run.json").string());
    try {
        const auto j = nlohmann::json::parse(in);
        t.kind = j.at("kind").get<std::string>();
        t.dataset = j.at("dataset").get<std::string>();
        t.labels = j.at("labels").get<std::vector<std::string>>();
    } catch (const nlohmann::json::exception& e) {
        throw ValidationError((dir / "run.json").string() + ": " + e.what());
    }
    auto rows = io::read_csv(dir / "table.csv");
    if (rows.empty()) throw ValidationError((dir / "table.csv").string() + " is empty");
    t.header = rows.front();
    for (std::size_t i = 1; i < rows.size(); ++i) {
        if (rows[i].size() != t.header.size())
            throw ValidationError((dir / "table.csv").string() + " row " + std::to_string(i + 1) +
                                  " has the wrong number of fields");
        t.rows.push_back(rows[i]);
    }
    return t;
}

/// Every directory below (or equal to) the inputs that holds a run.json, in path order.
inline std::vector<std::filesystem::path> find_runs(const std::vector<std::filesystem::path>& inputs) {
    namespace fs = std::filesystem;
    std::vector<fs::path> dirs;
    for (const auto& in : inputs) {
        if (!fs::exists(in)) throw InputError("no such input: " + in.string());
        if (fs::is_regular_file(in)) {
            if (in.filename() == "run.json" || in.filename() == "table.csv") dirs.push_back(in.parent_path());
            continue;
        }
        if (fs::exists(in / "run.json")) dirs.push_back(in);
        for (const auto& e : fs::recursive_directory_iterator(in))
            if (e.is_regular_file() && e.path().filename() == "run.json" && e.path().parent_path() != in)
                dirs.push_back(e.path().parent_path());
    }
    std::sort(dirs.begin(), dirs.end());
    dirs.erase(std::unique(dirs.begin(), dirs.end()), dirs.end());
    return dirs;
}

struct Bar {
    double mean = 0.0;
    double std = 0.0;
};

struct ChartGroup {
    std::string name;
    std::vector<Bar> bars;
};

/// Grouped vertical bar chart over [0, 1] with one-std error whiskers.
inline std::string render_bar_chart(const std::string& title, const std::vector<std::string>& series,
                                    const std::vector<ChartGroup>& groups) {
    static const char* colours[] = {"#4c72b0", "#dd8452", "#55a868", "#c44e52", "#8172b3", "#937860"};
    const double left = 60, top = 40, plot_h = 260, bar_w = 16, gap = 28;
    const double group_w = bar_w * static_cast<double>(series.size()) + gap;
    const double width = left + group_w * static_cast<double>(groups.size()) + 160;
    const double height = top + plot_h + 90;
    auto num = [](double v) {
        char b[32];
        std::snprintf(b, sizeof b, "%.1f", v);
        return std::string(b);
    };
    auto esc = [](const std::string& s) {
        std::string o;
        for (char c : s) {
            if (c == '&') o += "&amp;";
            else if (c == '<') o += "&lt;";
            else if (c == '>') o += "&gt;";
            else if (c == '"') o += "&quot;";
            else o += c;
        }
        return o;
    };
    auto y_of = [&](double v) { return top + plot_h * (1.0 - std::clamp(v, 0.0, 1.0)); };

    std::ostringstream svg;
    svg << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << num(width) << "\" height=\"" << num(height)
        << "\" font-family=\"sans-serif\" font-size=\"11\">\n";
    svg << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
    svg << "<text x=\"" << num(left) << "\" y=\"20\" font-size=\"14\">" << esc(title) << "</text>\n";
    for (int tick = 0; tick <= 5; ++tick) {
        const double v = tick / 5.0, y = y_of(v);
        svg << "<line x1=\"" << num(left) << "\" y1=\"" << num(y) << "\" x2=\""
            << num(left + group_w * static_cast<double>(groups.size())) << "\" y2=\"" << num(y)
            << "\" stroke=\"#ddd\"/>\n";
        svg << "<text x=\"" << num(left - 6) << "\" y=\"" << num(y + 4) << "\" text-anchor=\"end\">" << num(v * 100)
            << "</text>\n";
    }
    for (std::size_t g = 0; g < groups.size(); ++g) {
        const double x0 = left + gap / 2 + group_w * static_cast<double>(g);
        for (std::size_t s = 0; s < groups[g].bars.size() && s < series.size(); ++s) {
            const auto& b = groups[g].bars[s];
            const double x = x0 + bar_w * static_cast<double>(s);
            const double y = y_of(b.mean);
            svg << "<rect x=\"" << num(x) << "\" y=\"" << num(y) << "\" width=\"" << num(bar_w - 2)
                << "\" height=\"" << num(top + plot_h - y) << "\" fill=\"" << colours[s % 6] << "\"/>\n";
            if (b.std > 0) {
                const double cx = x + (bar_w - 2) / 2;
                svg << "<line x1=\"" << num(cx) << "\" y1=\"" << num(y_of(b.mean + b.std)) << "\" x2=\"" << num(cx)
                    << "\" y2=\"" << num(y_of(b.mean - b.std)) << "\" stroke=\"black\"/>\n";
            }
        }
        svg << "<text x=\"" << num(x0 + bar_w * static_cast<double>(series.size()) / 2) << "\" y=\""
            << num(top + plot_h + 16) << "\" text-anchor=\"middle\">" << esc(groups[g].name) << "</text>\n";
    }
    const double lx = left + group_w * static_cast<double>(groups.size()) + 20;
    for (std::size_t s = 0; s < series.size(); ++s) {
        const double ly = top + 16 * static_cast<double>(s);
        svg << "<rect x=\"" << num(lx) << "\" y=\"" << num(ly) << "\" width=\"10\" height=\"10\" fill=\""
            << colours[s % 6] << "\"/>\n";
        svg << "<text x=\"" << num(lx + 14) << "\" y=\"" << num(ly + 9) << "\">" << esc(series[s]) << "</text>\n";
    }
    svg << "</svg>\n";
    return svg.str();
}

struct ReportResult {
    std::size_t runs = 0;
    std::size_t rows = 0;
    std::vector<std::filesystem::path> charts;
    std::vector<std::string> notices;
};

/// Consolidates every run table under `inputs` into out/report.csv and
/// out/report.md, and draws one grouped bar chart per dataset and sweep kind
/// that has at least two rows.
inline ReportResult build_report(const std::vector<std::filesystem::path>& inputs, const std::filesystem::path& out) {
    const auto dirs = find_runs(inputs);
    if (dirs.empty()) throw InputError("no run tables (run.json + table.csv) found under the given inputs");
    std::vector<RunTable> tables;
    std::map<std::string, std::pair<std::vector<std::string>, std::filesystem::path>> vocab;
    for (const auto& d : dirs) {
        auto t = load_run_table(d);
        auto [it, fresh] = vocab.emplace(t.dataset, std::make_pair(t.labels, d));
        if (!fresh && it->second.first != t.labels)
            throw ValidationError("dataset '" + t.dataset + "' has conflicting label vocabularies in " +
                                  it->second.second.string() + " and " + d.string());
        tables.push_back(std::move(t));
    }

    static const std::vector<std::string> metrics{"accuracy", "macro_precision", "macro_recall", "macro_f1"};
    ReportResult result;
    result.runs = tables.size();
    std::vector<io::CsvRow> csv{{"dataset", "kind", "run", "name", "variant", "steps", "config_hash", "parameters",
                                 "seeds"}};
    for (const auto& m : metrics) csv.front().push_back(m + "_mean");
    for (const auto& m : metrics) csv.front().push_back(m + "_std");

    // (dataset, kind) -> groups
    std::map<std::pair<std::string, std::string>, std::vector<ChartGroup>> charts;
    std::ostringstream md;
    for (const auto& t : tables) {
        md << "## " << t.dataset << " / " << t.kind << " (" << t.dir.string() << ")\n\n";
        md << "| name | variant | steps |";
        for (const auto& m : metrics) md << ' ' << m << " |";
        md << "\n|---|---|---|";
        for (std::size_t i = 0; i < metrics.size(); ++i) md << "---|";
        md << '\n';
        for (const auto& row : t.rows) {
            io::CsvRow out_row{t.dataset, t.kind, t.dir.string()};
            for (const auto* col : {"name", "variant", "steps", "config_hash", "parameters", "seeds"})
                out_row.push_back(row[t.column(col)]);
            ChartGroup group{row[t.column("name")], {}};
            md << "| " << row[t.column("name")] << " | " << row[t.column("variant")] << " | "
               << row[t.column("steps")] << " |";
            for (const auto& m : metrics) {
                const auto& mean = row[t.column(m + "_mean")];
                const auto& sd = row[t.column(m + "_std")];
                out_row.push_back(mean);
                Bar b{std::stod(mean), std::stod(sd)};
                group.bars.push_back(b);
                char cell[64];
                std::snprintf(cell, sizeof cell, " %.2f ± %.2f |", b.mean * 100, b.std * 100);
                md << cell;
            }
            for (const auto& m : metrics) out_row.push_back(row[t.column(m + "_std")]);
            csv.push_back(out_row);
            charts[{t.dataset, t.kind}].push_back(group);
            ++result.rows;
        }
        md << '\n';
    }

    std::filesystem::create_directories(out);
    io::write_csv(out / "report.csv", csv);
    std::ofstream(out / "report.md", std::ios::binary) << md.str();
    for (const auto& [key, groups] : charts) {
        const auto name = key.first + " " + key.second;
        if (groups.size() < 2) {
            result.notices.push_back("chart for " + name + " skipped: a comparison needs at least two rows");
            continue;
        }
        std::string file = "chart_" + key.first + "_" + key.second + ".svg";
        std::replace_if(file.begin(), file.end(), [](char c) { return c == '/' || c == ' ' || c == '\\'; }, '_');
        std::ofstream(out / file, std::ios::binary) << render_bar_chart(name, metrics, groups);
        result.charts.push_back(out / file);
    }
    return result;
}

}  // namespace memodetector::train
