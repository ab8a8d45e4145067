// Copyright (C) 2026 The rewardcal Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <map>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "rewardcal/error.hpp"

namespace rewardcal {

/// Index of the highest score; the lowest index wins ties.
inline std::size_t best_of_n(std::span<const double> scores) {
    if (scores.empty()) fail(ErrorCode::EmptyInput, "best_of_n needs at least one score");
    std::size_t best = 0;
    for (std::size_t i = 0; i < scores.size(); ++i) {
        if (!std::isfinite(scores[i])) fail(ErrorCode::NonFiniteInput, "score is not finite");
        if (scores[i] > scores[best]) best = i;
    }
    return best;
}

/// Indices of the k largest scores, best first; lower index first on ties.
inline std::vector<std::size_t> top_k(std::span<const double> scores, std::size_t k) {
    if (k == 0 || k > scores.size())
        fail(ErrorCode::KOutOfRange, "k=" + std::to_string(k) + " outside [1, " + std::to_string(scores.size()) + "]");
    for (double s : scores)
        if (!std::isfinite(s)) fail(ErrorCode::NonFiniteInput, "score is not finite");
    std::vector<std::size_t> idx(scores.size());
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    auto by_score = [&](std::size_t a, std::size_t b) {
        return scores[a] != scores[b] ? scores[a] > scores[b] : a < b;
    };
    std::partial_sort(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(k), idx.end(), by_score);
    idx.resize(k);
    return idx;
}

struct CheckpointStats {
    std::size_t checkpoint_index = 0;
    std::size_t win_count = 0;
};

/// The earliest checkpoint whose win count reaches the maximum.
inline std::size_t select_checkpoint(std::span<const CheckpointStats> stats) {
    if (stats.empty()) fail(ErrorCode::EmptyInput, "no checkpoints");
    for (std::size_t i = 1; i < stats.size(); ++i)
        if (stats[i].checkpoint_index <= stats[i - 1].checkpoint_index)
            fail(ErrorCode::MalformedRecord, "checkpoint indices must be strictly increasing");
    const CheckpointStats* best = &stats.front();
    for (const auto& s : stats)
        if (s.win_count > best->win_count) best = &s;
    return best->checkpoint_index;
}

// ---------------------------------------------------------------------------
// Win counting against the base model's images

/// One scored image in a checkpoint comparison. An empty checkpoint marks
/// an image from the base (un-fine-tuned) model.
struct CheckpointImage {
    std::string prompt_id;
    std::optional<long long> checkpoint;
    std::optional<long long> seed;
    double score = 0.0;
};

enum class WinPopulation {
    Pooled,    // compare against the median of all baseline images
    PerPrompt, // compare against the median of the same prompt's baseline images
};

namespace detail {

inline double median(std::vector<double> v) {
    std::sort(v.begin(), v.end());
    const std::size_t n = v.size();
    return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

} // namespace detail

/// Win counts per checkpoint, in ascending checkpoint order.
///
/// When every image carries a seed and each checkpoint image has a baseline
/// image with the same (prompt, seed), wins are seed-matched pairwise
/// comparisons. Otherwise a win is a checkpoint image scoring above the
/// baseline median (pooled or per prompt).
inline std::vector<CheckpointStats> count_wins(std::span<const CheckpointImage> images,
                                               WinPopulation population = WinPopulation::Pooled) {
    std::map<std::pair<std::string, long long>, double> baseline_by_seed;
    std::map<std::string, std::vector<double>> baseline_by_prompt;
    std::vector<double> baseline_all;
    bool all_seeded = true;
    for (const auto& img : images) {
        all_seeded = all_seeded && img.seed.has_value();
        if (img.checkpoint) continue;
        baseline_all.push_back(img.score);
        baseline_by_prompt[img.prompt_id].push_back(img.score);
        if (img.seed) baseline_by_seed[{img.prompt_id, *img.seed}] = img.score;
    }
    if (baseline_all.empty()) fail(ErrorCode::EmptyInput, "no baseline images");

    bool paired = all_seeded;
    for (const auto& img : images)
        if (paired && img.checkpoint && !baseline_by_seed.contains({img.prompt_id, *img.seed})) paired = false;

    std::map<std::string, double> prompt_median;
    for (const auto& [pid, v] : baseline_by_prompt) prompt_median[pid] = detail::median(v);
    const double pooled_median = detail::median(baseline_all);

    std::map<long long, std::size_t> wins;
    for (const auto& img : images) {
        if (!img.checkpoint) continue;
        auto& w = wins[*img.checkpoint];
        double reference = pooled_median;
        if (paired) {
            reference = baseline_by_seed.at({img.prompt_id, *img.seed});
        } else if (population == WinPopulation::PerPrompt) {
            auto it = prompt_median.find(img.prompt_id);
            if (it == prompt_median.end())
                fail(ErrorCode::MissingReference, "no baseline images for prompt '" + img.prompt_id + "'");
            reference = it->second;
        }
        if (img.score > reference) ++w;
    }
    std::vector<CheckpointStats> out;
    for (const auto& [ckpt, w] : wins) {
        if (ckpt < 0) fail(ErrorCode::MalformedRecord, "checkpoint index must be non-negative");
        out.push_back({static_cast<std::size_t>(ckpt), w});
    }
    if (out.empty()) fail(ErrorCode::EmptyInput, "no checkpoint images");
    return out;
}

} // namespace rewardcal
