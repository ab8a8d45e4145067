// Copyright (C) 2026 The rewardcal Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

// CSV report emission. Numbers use six significant digits and rows follow a
// fixed order, so identical inputs give byte-identical files.

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "rewardcal/datamodel.hpp"
#include "rewardcal/error.hpp"
#include "rewardcal/metrics.hpp"
#include "rewardcal/overoptsim.hpp"
#include "rewardcal/promptsynth.hpp"

namespace rewardcal {

inline std::string format_number(double v) {
    if (std::isnan(v)) return "nan";
    if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.6g", v);
    return buf;
}

inline std::string format_number(const std::optional<double>& v) { return v ? format_number(*v) : std::string(); }

inline std::string csv_field(std::string_view s) {
    if (s.find_first_of(",\"\n\r") == std::string_view::npos) return std::string(s);
    std::string out = "\"";
    for (char c : s) {
        if (c == '"') out += '"';
        out += c;
    }
    out += '"';
    return out;
}

inline std::string csv_row(const std::vector<std::string>& fields) {
    std::string line;
    for (std::size_t i = 0; i < fields.size(); ++i) {
        if (i) line += ',';
        line += csv_field(fields[i]);
    }
    line += '\n';
    return line;
}

/// A set of files written together: either all land or none do. Contents
/// go to temporary siblings first and are renamed into place at commit.
class ReportBundle {
public:
    void add(std::filesystem::path path, std::string content) { files_.emplace_back(std::move(path), std::move(content)); }

    const std::vector<std::pair<std::filesystem::path, std::string>>& files() const { return files_; }

    void commit() const {
        std::vector<std::pair<std::filesystem::path, std::filesystem::path>> staged;
        auto cleanup = [&] {
            std::error_code ec;
            for (const auto& [tmp, dst] : staged) std::filesystem::remove(tmp, ec);
        };
        try {
            for (const auto& [path, content] : files_) {
                if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
                auto tmp = path;
                tmp += ".tmp";
                std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
                if (!out) fail(ErrorCode::IoError, "cannot write '" + tmp.string() + "'");
                staged.emplace_back(tmp, path);
                out << content;
                out.close();
                if (!out) fail(ErrorCode::IoError, "cannot write '" + tmp.string() + "'");
            }
            for (const auto& [tmp, dst] : staged) std::filesystem::rename(tmp, dst);
        } catch (const std::filesystem::filesystem_error& e) {
            cleanup();
            fail(ErrorCode::IoError, e.what());
        } catch (...) {
            cleanup();
            throw;
        }
    }

private:
    std::vector<std::pair<std::filesystem::path, std::string>> files_;
};

inline void write_file_atomic(const std::filesystem::path& path, std::string content) {
    ReportBundle b;
    b.add(path, std::move(content));
    b.commit();
}

// ---------------------------------------------------------------------------
// Metric tables

namespace detail {

inline std::vector<std::string> metric_header(std::span<const std::size_t> k_values) {
    std::vector<std::string> h = {"AUROC", "AUPRC"};
    for (std::size_t k : k_values) h.push_back("AP@" + std::to_string(k));
    h.push_back("Spearman");
    h.push_back("Kendall");
    return h;
}

inline std::vector<std::string> metric_cells(const SetReport& r, std::span<const std::size_t> k_values) {
    std::vector<std::string> c = {format_number(r.auroc), format_number(r.auprc)};
    for (std::size_t k : k_values) {
        auto it = r.ap_at.find(k);
        c.push_back(it == r.ap_at.end() ? std::string() : format_number(it->second));
    }
    c.push_back(format_number(r.spearman));
    c.push_back(format_number(r.kendall));
    return c;
}

inline std::string set_name(const SetReport& r) { return r.set ? std::string(to_string(*r.set)) : "all"; }

} // namespace detail

/// One row per prompt set present plus a pooled "all" row.
inline std::string summary_csv(const Evaluation& ev, std::span<const std::size_t> k_values = kDefaultKValues) {
    std::vector<std::string> header = {"set", "retained", "excluded"};
    for (auto& h : detail::metric_header(k_values)) header.push_back(std::move(h));
    std::string out = csv_row(header);
    auto row = [&](const SetReport& r) {
        std::vector<std::string> f = {detail::set_name(r), std::to_string(r.retained_count),
                                      std::to_string(r.excluded_count)};
        for (auto& c : detail::metric_cells(r, k_values)) f.push_back(std::move(c));
        out += csv_row(f);
    };
    for (const auto& s : ev.sets) row(s);
    row(ev.overall);
    return out;
}

/// Ablation table: one block of rows per mode, in the order given.
inline std::string ablation_csv(const std::vector<std::pair<std::string, Evaluation>>& runs,
                                std::span<const std::size_t> k_values = kDefaultKValues) {
    std::vector<std::string> header = {"mode", "set", "retained", "excluded"};
    for (auto& h : detail::metric_header(k_values)) header.push_back(std::move(h));
    std::string out = csv_row(header);
    for (const auto& [mode, ev] : runs) {
        auto row = [&](const SetReport& r) {
            std::vector<std::string> f = {mode, detail::set_name(r), std::to_string(r.retained_count),
                                          std::to_string(r.excluded_count)};
            for (auto& c : detail::metric_cells(r, k_values)) f.push_back(std::move(c));
            out += csv_row(f);
        };
        for (const auto& s : ev.sets) row(s);
        row(ev.overall);
    }
    return out;
}

inline std::string per_prompt_csv(const Evaluation& ev, std::span<const std::size_t> k_values = kDefaultKValues) {
    std::vector<std::string> header = {"prompt_id", "set", "n_pos", "n_neg"};
    for (auto& h : detail::metric_header(k_values)) header.push_back(std::move(h));
    std::string out = csv_row(header);
    for (const auto& p : ev.prompts) {
        std::vector<std::string> f = {p.prompt_id, std::string(to_string(p.set)), std::to_string(p.n_pos),
                                      std::to_string(p.n_neg), format_number(p.auroc), format_number(p.auprc)};
        for (std::size_t k : k_values) {
            auto it = p.ap_at.find(k);
            f.push_back(it == p.ap_at.end() ? std::string() : format_number(it->second));
        }
        f.push_back(format_number(p.spearman));
        f.push_back(format_number(p.kendall));
        out += csv_row(f);
    }
    return out;
}

// ---------------------------------------------------------------------------
// Per-prompt AUROC heat maps

enum class HeatmapAxis { CompositionPairs, CountingCounts };

inline std::optional<HeatmapAxis> parse_heatmap_axis(std::string_view text) {
    if (text == "composition" || text == "composition_pairs") return HeatmapAxis::CompositionPairs;
    if (text == "counting" || text == "counting_counts") return HeatmapAxis::CountingCounts;
    return std::nullopt;
}

// Cells at this value are drawn uncolored.
inline constexpr double kHeatmapMidpoint = 0.75;

namespace detail {

// Benchmark classes first (alphabetical), then any others seen, sorted.
inline std::vector<std::string> heatmap_classes(const std::set<std::string>& seen) {
    std::vector<std::string> out = benchmark_object_classes();
    std::set<std::string> known(out.begin(), out.end());
    for (const auto& c : seen)
        if (!known.contains(c)) out.push_back(c);
    return out;
}

inline std::string heatmap_csv(const std::string& corner, const std::vector<std::string>& row_labels,
                               const std::vector<std::string>& cols,
                               const std::map<std::pair<std::string, std::string>, std::pair<double, int>>& cells) {
    std::vector<std::string> header = {corner};
    header.insert(header.end(), cols.begin(), cols.end());
    header.push_back("color_midpoint");
    std::string out = csv_row(header);
    for (const auto& r : row_labels) {
        std::vector<std::string> f = {r};
        for (const auto& c : cols) {
            auto it = cells.find({r, c});
            f.push_back(it == cells.end() ? std::string()
                                          : format_number(it->second.first / static_cast<double>(it->second.second)));
        }
        f.push_back(format_number(kHeatmapMidpoint));
        out += csv_row(f);
    }
    return out;
}

} // namespace detail

/// Grid of per-prompt AUROC. Composition: class-by-class, filled
/// symmetrically with a blank diagonal. Counting: count (1..6) by class.
/// Cells with several prompts hold their mean; cells with none are blank.
inline std::string heatmap_csv(const Dataset& ds, const Evaluation& ev, HeatmapAxis axis) {
    using Cells = std::map<std::pair<std::string, std::string>, std::pair<double, int>>;
    Cells cells;
    std::set<std::string> seen;
    auto add = [&](const std::string& r, const std::string& c, double v) {
        auto& cell = cells[{r, c}];
        cell.first += v;
        cell.second += 1;
    };
    const PromptSet want = axis == HeatmapAxis::CompositionPairs ? PromptSet::Composition : PromptSet::Counting;
    for (const auto& p : ev.prompts) {
        if (p.set != want || !p.auroc) continue;
        const auto& rec = ds.prompts.at(p.prompt_id);
        if (axis == HeatmapAxis::CompositionPairs) {
            if (rec.object_classes.size() != 2) continue;
            const auto& a = rec.object_classes[0];
            const auto& b = rec.object_classes[1];
            add(a, b, *p.auroc);
            add(b, a, *p.auroc);
            seen.insert(a);
            seen.insert(b);
        } else {
            if (rec.object_classes.size() != 1 || !rec.count) continue;
            add(std::to_string(*rec.count), rec.object_classes[0], *p.auroc);
            seen.insert(rec.object_classes[0]);
        }
    }
    if (cells.empty())
        fail(ErrorCode::NoEvaluation, "no evaluated " + std::string(to_string(want)) + " prompts to plot");
    const auto classes = detail::heatmap_classes(seen);
    if (axis == HeatmapAxis::CompositionPairs) return detail::heatmap_csv("class", classes, classes, cells);
    return detail::heatmap_csv("count", {"1", "2", "3", "4", "5", "6"}, classes, cells);
}

// ---------------------------------------------------------------------------
// Simulator output

inline std::string trajectory_csv(const Trajectory& traj) {
    std::string out = csv_row({"step", "proxy_mean", "true_mean", "kl", "entropy"});
    for (const auto& p : traj.points)
        out += csv_row({std::to_string(p.step), format_number(p.proxy_mean), format_number(p.true_mean),
                        format_number(p.kl_to_initial), format_number(p.entropy)});
    return out;
}

} // namespace rewardcal
