// Copyright (C) 2026 The rewardcal Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

// Scratch directories and a small synthetic benchmark (prompts, images,
// labels, cross scores, contrast sets) written in the on-disk formats.

#include <atomic>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include <unistd.h>

#include "rewardcal/rewardcal.hpp"

namespace fixture {

namespace fs = std::filesystem;
using rewardcal::json;

class TempDir {
public:
    TempDir() {
        static std::atomic<int> counter{0};
        path_ = fs::temp_directory_path() /
                ("rewardcal-test-" + std::to_string(::getpid()) + "-" + std::to_string(counter++));
        fs::remove_all(path_);
        fs::create_directories(path_);
    }
    ~TempDir() {
        std::error_code ec;
        fs::remove_all(path_, ec);
    }
    TempDir(const TempDir&) = delete;
    TempDir& operator=(const TempDir&) = delete;

    const fs::path& path() const { return path_; }
    fs::path operator/(const std::string& name) const { return path_ / name; }

private:
    fs::path path_;
};

inline void write_text(const fs::path& p, const std::string& text) {
    fs::create_directories(p.parent_path());
    std::ofstream out(p, std::ios::binary);
    out << text;
}

inline std::string read_text(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

inline void write_jsonl(const fs::path& p, const std::vector<json>& rows) {
    std::string text;
    for (const auto& r : rows) text += r.dump() + "\n";
    write_text(p, text);
}

struct PromptSpec {
    std::string id;
    std::string text;
    std::string set;
    std::vector<std::string> classes;
    std::optional<int> count;
    // Force every image of the prompt to this label (unanimous prompt).
    std::optional<std::string> all_labels;
};

inline std::vector<PromptSpec> default_prompts() {
    return {
        {"c1", "a realistic photo of three dogs", "counting", {"dog"}, 3, {}},
        {"c2", "a realistic photo of two cats", "counting", {"cat"}, 2, {}},
        {"m1", "a deer and an orange", "composition", {"deer", "orange"}, {}, {}},
        {"m2", "a cat and a dog", "composition", {"cat", "dog"}, {}, {}},
        {"g1", "A black colored car", "comprehensive", {}, {}, {}},
        {"g2", "A sign that says 'Diffusion'.", "comprehensive", {}, {}, "bad"},
    };
}

struct Paths {
    fs::path prompts, images, labels, scores, contrasts, config;
};

/// Writes the benchmark plus a run configuration into `dir`. Images carry a
/// latent quality that drives both their labels and (noisily) their scores;
/// every image is scored by two models against every benchmark prompt and
/// every contrast prompt.
inline Paths write_benchmark(const fs::path& dir, std::uint64_t seed = 7, int images_per_prompt = 30,
                             const std::vector<PromptSpec>& specs = default_prompts()) {
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    std::normal_distribution<double> noise(0.0, 0.6);

    std::vector<json> prompts, images, labels, scores, contrasts;
    std::vector<std::string> all_prompt_ids;
    for (const auto& s : specs) {
        json p{{"id", s.id}, {"text", s.text}, {"set", s.set}, {"object_classes", s.classes}};
        p["subcategory"] = nullptr;
        p["count"] = s.count ? json(*s.count) : json(nullptr);
        prompts.push_back(p);
        all_prompt_ids.push_back(s.id);
    }
    // Contrast sets: rule-based where possible, two free-form ones otherwise.
    std::vector<std::string> contrast_prompt_ids;
    for (const auto& s : specs) {
        rewardcal::PromptRecord rec;
        rec.id = s.id;
        rec.text = s.text;
        rec.set = *rewardcal::parse_prompt_set(s.set);
        rec.object_classes = s.classes;
        rec.count = s.count;
        rewardcal::ContrastSet cs;
        cs.base_prompt_id = s.id;
        if (rec.set == rewardcal::PromptSet::Comprehensive) {
            cs.contrast_prompt_ids = {s.id + "~llm1", s.id + "~llm2"};
        } else {
            cs = rewardcal::synth_rule_based(rec).set;
        }
        for (const auto& c : cs.contrast_prompt_ids) contrast_prompt_ids.push_back(c);
        contrasts.push_back(rewardcal::contrast_set_to_json(cs));
    }

    const std::vector<std::string> models = {"ImageReward", "PickScore"};
    for (const auto& s : specs) {
        for (int i = 0; i < images_per_prompt; ++i) {
            const std::string iid = s.id + "-img" + (i < 10 ? "0" : "") + std::to_string(i);
            const double quality = unit(rng);
            images.push_back({{"id", iid}, {"prompt_id", s.id}, {"uri", nullptr}});
            json lab = json::array();
            for (int a = 0; a < 3; ++a) {
                if (s.all_labels) {
                    lab.push_back(*s.all_labels);
                    continue;
                }
                const double u = unit(rng);
                lab.push_back(u < 0.1 ? "skip" : (unit(rng) < quality ? "good" : "bad"));
            }
            // Keep both classes present in the non-unanimous prompts.
            if (!s.all_labels && i == 0) lab = {"good", "good", "good"};
            if (!s.all_labels && i == 1) lab = {"bad", "bad", "bad"};
            labels.push_back({{"image_id", iid}, {"labels", lab}});

            for (const auto& m : models) {
                const double bias = m == "PickScore" ? 20.0 : 0.0;
                const double scale = m == "PickScore" ? 0.5 : 1.0;
                auto emit = [&](const std::string& pid, double value) {
                    scores.push_back({{"model", m}, {"prompt_id", pid}, {"image_id", iid}, {"score", value}});
                };
                emit(s.id, bias + scale * (2.0 * quality + noise(rng)));
                for (const auto& other : all_prompt_ids)
                    if (other != s.id) emit(other, bias + scale * (0.5 + noise(rng)));
                for (const auto& c : contrast_prompt_ids) emit(c, bias + scale * (1.0 - quality + noise(rng)));
            }
        }
    }

    Paths p{dir / "prompts.jsonl", dir / "images.jsonl",    dir / "labels.jsonl",
            dir / "scores.jsonl",  dir / "contrasts.jsonl", dir / "config.json"};
    write_jsonl(p.prompts, prompts);
    write_jsonl(p.images, images);
    write_jsonl(p.labels, labels);
    write_jsonl(p.scores, scores);
    write_jsonl(p.contrasts, contrasts);
    json cfg{{"prompts", "prompts.jsonl"},
             {"images", "images.jsonl"},
             {"labels", "labels.jsonl"},
             {"scores", "scores.jsonl"},
             {"contrasts", "contrasts.jsonl"},
             {"random_contrasts", {{"m", 3}, {"seed", 11}}},
             {"tune", {{"taus", {0.5, 1.0, 2.0}}, {"lambdas", {0.0, 0.5}}}}};
    write_text(p.config, cfg.dump(2) + "\n");
    return p;
}

/// Runs the CLI in-process and captures both streams.
struct CliResult {
    int code = 0;
    std::string out;
    std::string err;
};

template <class RunFn>
CliResult run(RunFn&& fn, std::vector<std::string> args) {
    args.insert(args.begin(), "rewardcal");
    std::vector<const char*> argv;
    for (const auto& a : args) argv.push_back(a.c_str());
    std::ostringstream out, err;
    CliResult r;
    r.code = fn(static_cast<int>(argv.size()), argv.data(), out, err);
    r.out = out.str();
    r.err = err.str();
    return r;
}

} // namespace fixture
