// Copyright (C) 2026 The rewardcal Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <algorithm>
#include <array>
#include <filesystem>
#include <map>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "rewardcal/error.hpp"
#include "rewardcal/jsonl.hpp"

namespace rewardcal {

enum class PromptSet { Comprehensive, Counting, Composition };

inline constexpr std::array<PromptSet, 3> kAllPromptSets = {
    PromptSet::Comprehensive, PromptSet::Counting, PromptSet::Composition};

constexpr std::string_view to_string(PromptSet set) {
    switch (set) {
    case PromptSet::Comprehensive: return "comprehensive";
    case PromptSet::Counting: return "counting";
    case PromptSet::Composition: return "composition";
    }
    return "";
}

inline std::optional<PromptSet> parse_prompt_set(std::string_view text) {
    for (auto set : kAllPromptSets)
        if (to_string(set) == text) return set;
    return std::nullopt;
}

enum class Label { Good, Bad, Skip };

constexpr std::string_view to_string(Label label) {
    switch (label) {
    case Label::Good: return "good";
    case Label::Bad: return "bad";
    case Label::Skip: return "skip";
    }
    return "";
}

inline std::optional<Label> parse_label(std::string_view text) {
    if (text == "good") return Label::Good;
    if (text == "bad") return Label::Bad;
    if (text == "skip") return Label::Skip;
    return std::nullopt;
}

struct PromptRecord {
    std::string id;
    std::string text;
    PromptSet set = PromptSet::Comprehensive;
    std::optional<std::string> subcategory;
    std::vector<std::string> object_classes;
    std::optional<int> count;

    bool operator==(const PromptRecord&) const = default;
};

struct AnnotatedImage {
    std::string id;
    std::string prompt_id;
    std::optional<std::string> uri;
    std::array<Label, 3> labels{Label::Skip, Label::Skip, Label::Skip};
    int binary_label = 0;
    int fine_sixths = 0; // fine score in units of 1/6

    double fine_score() const { return fine_sixths / 6.0; }

    bool operator==(const AnnotatedImage&) const = default;
};

/// Immutable after load; safe to share read-only across threads.
struct Dataset {
    std::map<std::string, PromptRecord> prompts;
    std::map<std::string, AnnotatedImage> images;
    std::map<std::string, std::vector<std::string>> index; // prompt id -> image ids, file order

    bool operator==(const Dataset&) const = default;

    const std::vector<std::string>& images_of(const std::string& prompt_id) const {
        static const std::vector<std::string> none;
        auto it = index.find(prompt_id);
        return it == index.end() ? none : it->second;
    }
};

// ---------------------------------------------------------------------------
// Label consolidation

/// 1 iff at least two of the three labels are good; skip never counts as good.
inline int aggregate_binary(std::span<const Label> labels) {
    if (labels.size() != 3)
        fail(ErrorCode::ArityError, "expected 3 labels, got " + std::to_string(labels.size()));
    auto good = std::count(labels.begin(), labels.end(), Label::Good);
    return good >= 2 ? 1 : 0;
}

/// Mean of good=1, bad=0, skip=1/2, returned in units of 1/6 so it stays exact.
inline int aggregate_fine_sixths(std::span<const Label> labels) {
    if (labels.size() != 3)
        fail(ErrorCode::ArityError, "expected 3 labels, got " + std::to_string(labels.size()));
    int halves = 0;
    for (Label l : labels) halves += l == Label::Good ? 2 : (l == Label::Skip ? 1 : 0);
    return halves; // (halves / 2) / 3 == halves / 6
}

inline double aggregate_fine(std::span<const Label> labels) {
    return aggregate_fine_sixths(labels) / 6.0;
}

// ---------------------------------------------------------------------------
// Loading

struct LoadOptions {
    bool strict_benchmark = false; // require exactly 50 images per prompt
};

inline constexpr std::size_t kBenchmarkImagesPerPrompt = 50;

namespace detail {

inline void check_prompt_invariants(const PromptRecord& p, std::vector<std::string>& problems) {
    if (p.set == PromptSet::Counting) {
        if (p.object_classes.size() != 1)
            problems.push_back("counting prompt needs exactly 1 object class");
        if (!p.count || *p.count < 1 || *p.count > 6)
            problems.push_back("counting prompt needs a count in [1,6]");
    } else if (p.set == PromptSet::Composition) {
        if (p.object_classes.size() != 2 || p.object_classes[0] == p.object_classes[1])
            problems.push_back("composition prompt needs exactly 2 distinct object classes");
        if (p.count) problems.push_back("composition prompt must not carry a count");
    }
    if (p.object_classes.size() > 2) problems.push_back("at most 2 object classes allowed");
}

inline std::optional<PromptRecord> parse_prompt(const json& rec, std::vector<std::string>& problems) {
    PromptRecord p;
    std::string set_name;
    if (!read_string(rec, "id", p.id) || p.id.empty()) problems.push_back("missing string field 'id'");
    if (!read_string(rec, "text", p.text)) problems.push_back("missing string field 'text'");
    if (!read_string(rec, "set", set_name)) {
        problems.push_back("missing string field 'set'");
    } else if (auto set = parse_prompt_set(set_name)) {
        p.set = *set;
    } else {
        problems.push_back("unknown set '" + set_name + "'");
    }
    if (auto it = rec.find("subcategory"); it != rec.end() && !it->is_null()) {
        if (it->is_string()) p.subcategory = it->get<std::string>();
        else problems.push_back("'subcategory' must be a string or null");
    }
    if (auto it = rec.find("object_classes"); it != rec.end() && !it->is_null()) {
        if (!it->is_array()) {
            problems.push_back("'object_classes' must be an array");
        } else {
            for (const auto& c : *it) {
                if (c.is_string()) p.object_classes.push_back(c.get<std::string>());
                else problems.push_back("'object_classes' entries must be strings");
            }
        }
    }
    if (auto it = rec.find("count"); it != rec.end() && !it->is_null()) {
        if (it->is_number_integer()) p.count = it->get<int>();
        else problems.push_back("'count' must be an integer or null");
    }
    if (!problems.empty()) return std::nullopt;
    check_prompt_invariants(p, problems);
    if (!problems.empty()) return std::nullopt;
    return p;
}

} // namespace detail

/// Loads and cross-references the three benchmark files. All problems found
/// are collected and raised together as an IngestError.
inline Dataset load_benchmark(const std::filesystem::path& prompt_path,
                              const std::filesystem::path& image_path,
                              const std::filesystem::path& label_path,
                              const LoadOptions& options = {}) {
    Dataset ds;
    std::vector<Diagnostic> diags;
    const std::string pfile = prompt_path.string();
    const std::string ifile = image_path.string();
    const std::string lfile = label_path.string();

    for_each_jsonl(prompt_path, diags, [&](std::size_t line, const json& rec) {
        std::vector<std::string> problems;
        auto p = detail::parse_prompt(rec, problems);
        if (!p) {
            for (auto& m : problems) diags.push_back({ErrorCode::MalformedRecord, pfile, line, m});
            return;
        }
        if (ds.prompts.contains(p->id)) {
            diags.push_back({ErrorCode::DuplicateId, pfile, line, "duplicate prompt id '" + p->id + "'"});
            return;
        }
        ds.index[p->id];
        std::string id = p->id;
        ds.prompts.emplace(std::move(id), std::move(*p));
    });
    if (ds.prompts.empty() && diags.empty())
        diags.push_back({ErrorCode::MalformedRecord, pfile, 0, "no prompts"});

    for_each_jsonl(image_path, diags, [&](std::size_t line, const json& rec) {
        AnnotatedImage img;
        if (!read_string(rec, "id", img.id) || img.id.empty() || !read_string(rec, "prompt_id", img.prompt_id)) {
            diags.push_back({ErrorCode::MalformedRecord, ifile, line, "image needs string 'id' and 'prompt_id'"});
            return;
        }
        if (auto it = rec.find("uri"); it != rec.end() && it->is_string()) img.uri = it->get<std::string>();
        if (!ds.prompts.contains(img.prompt_id)) {
            diags.push_back({ErrorCode::MissingReference, ifile, line,
                             "image '" + img.id + "' references unknown prompt '" + img.prompt_id + "'"});
            return;
        }
        if (ds.images.contains(img.id)) {
            diags.push_back({ErrorCode::DuplicateId, ifile, line, "duplicate image id '" + img.id + "'"});
            return;
        }
        ds.index[img.prompt_id].push_back(img.id);
        std::string id = img.id;
        ds.images.emplace(std::move(id), std::move(img));
    });

    std::set<std::string> labelled;
    for_each_jsonl(label_path, diags, [&](std::size_t line, const json& rec) {
        std::string image_id;
        if (!read_string(rec, "image_id", image_id)) {
            diags.push_back({ErrorCode::MalformedRecord, lfile, line, "missing string field 'image_id'"});
            return;
        }
        auto lit = rec.find("labels");
        if (lit == rec.end() || !lit->is_array() || lit->size() != 3) {
            diags.push_back({ErrorCode::MalformedRecord, lfile, line,
                             "image '" + image_id + "' must have exactly 3 labels"});
            return;
        }
        std::array<Label, 3> labels{};
        for (std::size_t i = 0; i < 3; ++i) {
            const auto& v = (*lit)[i];
            auto parsed = v.is_string() ? parse_label(v.get<std::string>()) : std::nullopt;
            if (!parsed) {
                diags.push_back({ErrorCode::MalformedRecord, lfile, line,
                                 "unknown label " + v.dump() + " for image '" + image_id + "'"});
                return;
            }
            labels[i] = *parsed;
        }
        auto it = ds.images.find(image_id);
        if (it == ds.images.end()) {
            diags.push_back({ErrorCode::MissingReference, lfile, line, "labels for unknown image '" + image_id + "'"});
            return;
        }
        if (!labelled.insert(image_id).second) {
            diags.push_back({ErrorCode::DuplicateId, lfile, line, "duplicate labels for image '" + image_id + "'"});
            return;
        }
        it->second.labels = labels;
        it->second.binary_label = aggregate_binary(labels);
        it->second.fine_sixths = aggregate_fine_sixths(labels);
    });

    for (const auto& [id, img] : ds.images)
        if (!labelled.contains(id))
            diags.push_back({ErrorCode::MissingReference, lfile, 0, "image '" + id + "' has no label record"});

    if (options.strict_benchmark) {
        for (const auto& [pid, imgs] : ds.index)
            if (imgs.size() != kBenchmarkImagesPerPrompt)
                diags.push_back({ErrorCode::MalformedRecord, ifile, 0,
                                 "prompt '" + pid + "' has " + std::to_string(imgs.size()) + " images, expected " +
                                     std::to_string(kBenchmarkImagesPerPrompt)});
    }

    if (!diags.empty()) throw IngestError(std::move(diags));
    return ds;
}

// ---------------------------------------------------------------------------
// Unanimity exclusion

enum class UnanimityMode {
    Consolidated, // exclude prompts whose consolidated binary labels are all equal
    Raw,          // exclude prompts whose raw annotator labels are all equal
};

inline std::optional<UnanimityMode> parse_unanimity_mode(std::string_view text) {
    if (text == "consolidated") return UnanimityMode::Consolidated;
    if (text == "raw") return UnanimityMode::Raw;
    return std::nullopt;
}

inline bool is_retained(const Dataset& ds, const std::string& prompt_id,
                        UnanimityMode mode = UnanimityMode::Consolidated) {
    const auto& ids = ds.images_of(prompt_id);
    if (ids.empty()) return false;
    if (mode == UnanimityMode::Consolidated) {
        bool pos = false, neg = false;
        for (const auto& id : ids) (ds.images.at(id).binary_label ? pos : neg) = true;
        return pos && neg;
    }
    const Label first = ds.images.at(ids.front()).labels[0];
    for (const auto& id : ids)
        for (Label l : ds.images.at(id).labels)
            if (l != first) return true;
    return false;
}

/// Prompt ids whose labels are not unanimous.
inline std::set<std::string> unanimity_filter(const Dataset& ds,
                                              UnanimityMode mode = UnanimityMode::Consolidated) {
    std::set<std::string> kept;
    for (const auto& [pid, prompt] : ds.prompts)
        if (is_retained(ds, pid, mode)) kept.insert(pid);
    return kept;
}

/// Fraction of images with consolidated label good, optionally restricted to one set.
inline double good_fraction(const Dataset& ds, std::optional<PromptSet> set = std::nullopt) {
    std::size_t good = 0, total = 0;
    for (const auto& [id, img] : ds.images) {
        if (set && ds.prompts.at(img.prompt_id).set != *set) continue;
        good += static_cast<std::size_t>(img.binary_label);
        ++total;
    }
    return total == 0 ? 0.0 : static_cast<double>(good) / static_cast<double>(total);
}

} // namespace rewardcal
