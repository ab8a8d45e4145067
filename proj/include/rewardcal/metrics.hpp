// Copyright (C) 2026 The rewardcal Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

// Per-prompt alignment metrics (AUROC, AUPRC, AP@k, Spearman, Kendall tau-b)
// and the per-set aggregation used by the evaluation reports.
//
// All metrics are rank statistics of the reward: any strictly increasing
// transform of the scores leaves them unchanged.

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <exception>
#include <map>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <thread>
#include <utility>
#include <vector>

#include "rewardcal/datamodel.hpp"
#include "rewardcal/error.hpp"

namespace rewardcal {

namespace detail {

inline void check_parallel(std::size_t a, std::size_t b) {
    if (a != b)
        fail(ErrorCode::LengthMismatch, "lengths differ: " + std::to_string(a) + " vs " + std::to_string(b));
}

inline void check_finite(std::span<const double> xs) {
    for (double x : xs)
        if (!std::isfinite(x)) fail(ErrorCode::NonFiniteInput, "non-finite score");
}

inline std::pair<std::size_t, std::size_t> count_classes(std::span<const int> labels) {
    std::size_t pos = 0;
    for (int z : labels) {
        if (z != 0 && z != 1) fail(ErrorCode::MalformedRecord, "labels must be 0 or 1");
        pos += static_cast<std::size_t>(z);
    }
    return {pos, labels.size() - pos};
}

inline std::pair<std::size_t, std::size_t> binary_preconditions(std::span<const double> scores,
                                                                std::span<const int> labels) {
    check_parallel(scores.size(), labels.size());
    check_finite(scores);
    auto [pos, neg] = count_classes(labels);
    if (pos == 0 || neg == 0) fail(ErrorCode::OneClassOnly, "both classes must be present");
    return {pos, neg};
}

/// Indices ordered by descending score; equal scores by ascending tie key.
inline std::vector<std::size_t> descending_order(std::span<const double> scores,
                                                 std::span<const std::string> tie_keys = {}) {
    std::vector<std::size_t> order(scores.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        if (scores[a] != scores[b]) return scores[a] > scores[b];
        if (!tie_keys.empty()) return tie_keys[a] < tie_keys[b];
        return a < b;
    });
    return order;
}

} // namespace detail

/// 1-based ranks in ascending order; tied values share their mean rank.
inline std::vector<double> average_ranks(std::span<const double> values) {
    const std::size_t n = values.size();
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return values[a] < values[b]; });
    std::vector<double> ranks(n);
    for (std::size_t i = 0; i < n;) {
        std::size_t j = i;
        while (j + 1 < n && values[order[j + 1]] == values[order[i]]) ++j;
        const double mean_rank = 0.5 * static_cast<double>(i + j) + 1.0;
        for (std::size_t t = i; t <= j; ++t) ranks[order[t]] = mean_rank;
        i = j + 1;
    }
    return ranks;
}

/// Mann-Whitney form: P(score_pos > score_neg) + 0.5 P(tie), via rank sums.
inline double auroc(std::span<const double> scores, std::span<const int> labels) {
    auto [pos, neg] = detail::binary_preconditions(scores, labels);
    auto ranks = average_ranks(scores);
    double pos_rank_sum = 0.0;
    for (std::size_t i = 0; i < scores.size(); ++i)
        if (labels[i]) pos_rank_sum += ranks[i];
    const double p = static_cast<double>(pos), q = static_cast<double>(neg);
    return (pos_rank_sum - p * (p + 1.0) / 2.0) / (p * q);
}

/// Step-function area under the precision-recall curve. Tied scores enter
/// the sweep as one block, so no ordering among them is implied.
inline double auprc(std::span<const double> scores, std::span<const int> labels) {
    auto [pos, neg] = detail::binary_preconditions(scores, labels);
    (void)neg;
    auto order = detail::descending_order(scores);
    std::size_t tp = 0, fp = 0;
    double area = 0.0, prev_recall = 0.0;
    for (std::size_t i = 0; i < order.size();) {
        std::size_t j = i;
        while (j < order.size() && scores[order[j]] == scores[order[i]]) {
            (labels[order[j]] ? tp : fp) += 1;
            ++j;
        }
        const double recall = static_cast<double>(tp) / static_cast<double>(pos);
        const double precision = static_cast<double>(tp) / static_cast<double>(tp + fp);
        area += (recall - prev_recall) * precision;
        prev_recall = recall;
        i = j;
    }
    return area;
}

/// Average precision over the top k, normalized by min(k, #positives).
/// Ties in score are ordered by ascending `tie_keys` (image ids), or by index
/// when no keys are given.
inline double ap_at_k(std::span<const double> scores, std::span<const int> labels, std::size_t k,
                      std::span<const std::string> tie_keys = {}) {
    auto [pos, neg] = detail::binary_preconditions(scores, labels);
    (void)neg;
    if (k == 0 || k > scores.size())
        fail(ErrorCode::KOutOfRange, "k=" + std::to_string(k) + " outside [1, " + std::to_string(scores.size()) + "]");
    if (!tie_keys.empty()) detail::check_parallel(scores.size(), tie_keys.size());
    auto order = detail::descending_order(scores, tie_keys);
    double sum = 0.0;
    std::size_t hits = 0;
    for (std::size_t i = 0; i < k; ++i) {
        if (labels[order[i]]) {
            ++hits;
            sum += static_cast<double>(hits) / static_cast<double>(i + 1);
        }
    }
    return sum / static_cast<double>(std::min(k, pos));
}

namespace detail {

inline double pearson(std::span<const double> x, std::span<const double> y) {
    const double n = static_cast<double>(x.size());
    const double mx = std::accumulate(x.begin(), x.end(), 0.0) / n;
    const double my = std::accumulate(y.begin(), y.end(), 0.0) / n;
    double sxy = 0.0, sxx = 0.0, syy = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        sxy += (x[i] - mx) * (y[i] - my);
        sxx += (x[i] - mx) * (x[i] - mx);
        syy += (y[i] - my) * (y[i] - my);
    }
    return sxy / std::sqrt(sxx * syy);
}

inline void correlation_preconditions(std::span<const double> scores, std::span<const double> targets) {
    check_parallel(scores.size(), targets.size());
    if (scores.size() < 2) fail(ErrorCode::DegenerateInput, "need at least 2 observations");
    check_finite(scores);
    check_finite(targets);
    auto constant = [](std::span<const double> v) {
        return std::all_of(v.begin(), v.end(), [&](double x) { return x == v.front(); });
    };
    if (constant(scores)) fail(ErrorCode::DegenerateInput, "scores have zero variance");
    if (constant(targets)) fail(ErrorCode::DegenerateInput, "targets have zero variance");
}

// Merge sort on `v` that returns the number of inversions (swaps).
inline std::uint64_t count_inversions(std::vector<double>& v, std::vector<double>& buf, std::size_t lo,
                                      std::size_t hi) {
    if (hi - lo < 2) return 0;
    const std::size_t mid = lo + (hi - lo) / 2;
    std::uint64_t swaps = count_inversions(v, buf, lo, mid) + count_inversions(v, buf, mid, hi);
    std::size_t i = lo, j = mid, out = lo;
    while (i < mid && j < hi) {
        if (v[j] < v[i]) {
            swaps += mid - i;
            buf[out++] = v[j++];
        } else {
            buf[out++] = v[i++];
        }
    }
    while (i < mid) buf[out++] = v[i++];
    while (j < hi) buf[out++] = v[j++];
    std::copy(buf.begin() + static_cast<std::ptrdiff_t>(lo), buf.begin() + static_cast<std::ptrdiff_t>(hi),
              v.begin() + static_cast<std::ptrdiff_t>(lo));
    return swaps;
}

inline std::uint64_t tied_pairs(std::span<const double> sorted) {
    std::uint64_t total = 0;
    for (std::size_t i = 0; i < sorted.size();) {
        std::size_t j = i;
        while (j < sorted.size() && sorted[j] == sorted[i]) ++j;
        const std::uint64_t t = j - i;
        total += t * (t - 1) / 2;
        i = j;
    }
    return total;
}

} // namespace detail

/// Pearson correlation of average ranks.
inline double spearman(std::span<const double> scores, std::span<const double> targets) {
    detail::correlation_preconditions(scores, targets);
    auto rx = average_ranks(scores);
    auto ry = average_ranks(targets);
    return std::clamp(detail::pearson(rx, ry), -1.0, 1.0);
}

/// Kendall tau-b using Knight's O(n log n) algorithm.
inline double kendall(std::span<const double> scores, std::span<const double> targets) {
    detail::correlation_preconditions(scores, targets);
    const std::size_t n = scores.size();
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        if (scores[a] != scores[b]) return scores[a] < scores[b];
        return targets[a] < targets[b];
    });

    std::uint64_t ties_x = 0, ties_xy = 0;
    for (std::size_t i = 0; i < n;) {
        std::size_t j = i;
        while (j < n && scores[order[j]] == scores[order[i]]) ++j;
        const std::uint64_t t = j - i;
        ties_x += t * (t - 1) / 2;
        for (std::size_t a = i; a < j;) {
            std::size_t b = a;
            while (b < j && targets[order[b]] == targets[order[a]]) ++b;
            const std::uint64_t u = b - a;
            ties_xy += u * (u - 1) / 2;
            a = b;
        }
        i = j;
    }

    std::vector<double> ys(n), buf(n);
    for (std::size_t i = 0; i < n; ++i) ys[i] = targets[order[i]];
    const std::uint64_t swaps = detail::count_inversions(ys, buf, 0, n);
    const std::uint64_t ties_y = detail::tied_pairs(ys);

    const double n0 = static_cast<double>(n) * static_cast<double>(n - 1) / 2.0;
    const double numer = n0 - static_cast<double>(ties_x) - static_cast<double>(ties_y) +
                         static_cast<double>(ties_xy) - 2.0 * static_cast<double>(swaps);
    const double denom = std::sqrt((n0 - static_cast<double>(ties_x)) * (n0 - static_cast<double>(ties_y)));
    return std::clamp(numer / denom, -1.0, 1.0);
}

// ---------------------------------------------------------------------------
// Dataset-level evaluation

using CellKey = std::pair<std::string, std::string>; // (prompt id, image id)
using RewardMap = std::map<CellKey, double>;

inline const std::vector<std::size_t> kDefaultKValues = {5, 10, 25};

struct PromptEvaluation {
    std::string prompt_id;
    PromptSet set = PromptSet::Comprehensive;
    std::size_t n_pos = 0;
    std::size_t n_neg = 0;
    // Classification metrics are empty only under raw-label unanimity mode,
    // where a retained prompt may still have a single consolidated class.
    std::optional<double> auroc;
    std::optional<double> auprc;
    std::map<std::size_t, double> ap_at;
    // Empty when the fine targets or the rewards have zero variance.
    std::optional<double> spearman;
    std::optional<double> kendall;
};

/// Unweighted means over the retained prompts of one set (or of all sets).
struct SetReport {
    std::optional<PromptSet> set; // empty = all sets pooled
    std::size_t retained_count = 0;
    std::size_t excluded_count = 0;
    std::size_t classification_skipped = 0;
    std::size_t correlation_skipped = 0;
    std::optional<double> auroc;
    std::optional<double> auprc;
    std::map<std::size_t, std::optional<double>> ap_at;
    std::optional<double> spearman;
    std::optional<double> kendall;
};

struct Evaluation {
    std::vector<PromptEvaluation> prompts; // retained prompts, ascending id
    std::vector<std::string> excluded;     // ascending id
    std::vector<SetReport> sets;           // one per set present, enum order
    SetReport overall;
};

struct EvalOptions {
    std::vector<std::size_t> k_values = kDefaultKValues;
    UnanimityMode unanimity = UnanimityMode::Consolidated;
    std::optional<PromptSet> only_set;
    unsigned threads = 1;
};

/// Metrics for one prompt's own images.
inline PromptEvaluation evaluate_prompt(const Dataset& ds, const std::string& prompt_id, const RewardMap& reward,
                                        std::span<const std::size_t> k_values) {
    const auto& ids = ds.images_of(prompt_id);
    std::vector<double> scores, fine;
    std::vector<int> labels;
    scores.reserve(ids.size());
    for (const auto& image_id : ids) {
        auto it = reward.find({prompt_id, image_id});
        if (it == reward.end())
            fail(ErrorCode::MissingReward, "no reward for (" + prompt_id + ", " + image_id + ")");
        const auto& img = ds.images.at(image_id);
        scores.push_back(it->second);
        labels.push_back(img.binary_label);
        fine.push_back(img.fine_score());
    }
    detail::check_finite(scores);

    PromptEvaluation ev;
    ev.prompt_id = prompt_id;
    ev.set = ds.prompts.at(prompt_id).set;
    auto [pos, neg] = detail::count_classes(labels);
    ev.n_pos = pos;
    ev.n_neg = neg;
    if (pos > 0 && neg > 0) {
        ev.auroc = auroc(scores, labels);
        ev.auprc = auprc(scores, labels);
        for (std::size_t k : k_values) ev.ap_at[k] = ap_at_k(scores, labels, k, ids);
    }
    auto varies = [](const std::vector<double>& v) {
        return std::any_of(v.begin(), v.end(), [&](double x) { return x != v.front(); });
    };
    if (scores.size() >= 2 && varies(scores) && varies(fine)) {
        ev.spearman = spearman(scores, fine);
        ev.kendall = kendall(scores, fine);
    }
    return ev;
}

namespace detail {

// Fixed (ascending prompt id) summation order keeps the means bit-stable.
inline SetReport summarize(std::optional<PromptSet> set, const std::vector<const PromptEvaluation*>& evs,
                           std::size_t excluded, std::span<const std::size_t> k_values) {
    SetReport r;
    r.set = set;
    r.retained_count = evs.size();
    r.excluded_count = excluded;
    auto mean_of = [&](auto getter) -> std::optional<double> {
        double sum = 0.0;
        std::size_t n = 0;
        for (const auto* ev : evs) {
            if (auto v = getter(*ev)) {
                sum += *v;
                ++n;
            }
        }
        if (n == 0) return std::nullopt;
        return sum / static_cast<double>(n);
    };
    r.auroc = mean_of([](const PromptEvaluation& e) { return e.auroc; });
    r.auprc = mean_of([](const PromptEvaluation& e) { return e.auprc; });
    for (std::size_t k : k_values)
        r.ap_at[k] = mean_of([k](const PromptEvaluation& e) -> std::optional<double> {
            auto it = e.ap_at.find(k);
            if (it == e.ap_at.end()) return std::nullopt;
            return it->second;
        });
    r.spearman = mean_of([](const PromptEvaluation& e) { return e.spearman; });
    r.kendall = mean_of([](const PromptEvaluation& e) { return e.kendall; });
    for (const auto* ev : evs) {
        if (!ev->auroc) ++r.classification_skipped;
        if (!ev->spearman) ++r.correlation_skipped;
    }
    return r;
}

} // namespace detail

/// Evaluates every retained prompt and aggregates per set. Per-prompt work
/// may run on several threads; the result does not depend on the count.
inline Evaluation evaluate(const Dataset& ds, const RewardMap& reward, const EvalOptions& opts = {}) {
    std::vector<std::size_t> k_values = opts.k_values;
    std::sort(k_values.begin(), k_values.end());

    std::vector<std::string> retained;
    Evaluation out;
    std::map<PromptSet, std::size_t> excluded_per_set;
    for (const auto& [pid, prompt] : ds.prompts) {
        if (opts.only_set && prompt.set != *opts.only_set) continue;
        if (is_retained(ds, pid, opts.unanimity)) {
            retained.push_back(pid);
        } else {
            out.excluded.push_back(pid);
            ++excluded_per_set[prompt.set];
        }
    }

    out.prompts.resize(retained.size());
    std::vector<std::exception_ptr> errors(retained.size());
    std::atomic<std::size_t> next{0};
    auto worker = [&] {
        for (std::size_t i = next++; i < retained.size(); i = next++) {
            try {
                out.prompts[i] = evaluate_prompt(ds, retained[i], reward, k_values);
            } catch (...) {
                errors[i] = std::current_exception();
            }
        }
    };
    const unsigned threads = std::max(1u, std::min<unsigned>(opts.threads, static_cast<unsigned>(retained.size())));
    if (threads <= 1) {
        worker();
    } else {
        std::vector<std::jthread> pool;
        for (unsigned t = 0; t < threads; ++t) pool.emplace_back(worker);
    }
    for (auto& e : errors)
        if (e) std::rethrow_exception(e);

    std::vector<const PromptEvaluation*> all;
    std::size_t total_excluded = 0;
    for (auto set : kAllPromptSets) {
        std::vector<const PromptEvaluation*> evs;
        for (const auto& ev : out.prompts)
            if (ev.set == set) evs.push_back(&ev);
        const std::size_t excl = excluded_per_set[set];
        if (evs.empty() && excl == 0) continue;
        out.sets.push_back(detail::summarize(set, evs, excl, k_values));
        all.insert(all.end(), evs.begin(), evs.end());
        total_excluded += excl;
    }
    std::sort(all.begin(), all.end(), [](auto* a, auto* b) { return a->prompt_id < b->prompt_id; });
    out.overall = detail::summarize(std::nullopt, all, total_excluded, k_values);
    return out;
}

/// Mean over retained prompts of the mean of AP@k across `k_values`.
inline double mean_ap_objective(const Evaluation& ev, std::span<const std::size_t> k_values) {
    double sum = 0.0;
    std::size_t n = 0;
    for (const auto& p : ev.prompts) {
        if (p.ap_at.empty()) continue;
        double s = 0.0;
        for (std::size_t k : k_values) s += p.ap_at.at(k);
        sum += s / static_cast<double>(k_values.size());
        ++n;
    }
    if (n == 0) fail(ErrorCode::NoRetainedPrompts, "no prompt with both classes");
    return sum / static_cast<double>(n);
}

} // namespace rewardcal
