// Copyright (C) 2026 The rewardcal Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

// A small reward-overoptimization laboratory. A categorical "generator" over
// N discrete outputs is fine-tuned against a proxy reward either by
// reward-weighted regression on top-k selected samples or by a score-function
// policy gradient with a per-sample KL penalty. The true reward is tracked
// alongside so proxy/true divergence can be observed.
//
// Gradients are exact for the categorical closed form; the optimizer is
// plain gradient ascent on the logits. Explicit steps on a KL term of
// weight w are stable roughly while step_size * w * max_j p_j < 1.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numeric>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "rewardcal/error.hpp"
#include "rewardcal/metrics.hpp"

namespace rewardcal {

using Vec = std::vector<double>;

// ---------------------------------------------------------------------------
// Categorical policy helpers

inline Vec softmax(std::span<const double> logits) {
    const double top = *std::max_element(logits.begin(), logits.end());
    Vec p(logits.size());
    double z = 0.0;
    for (std::size_t i = 0; i < logits.size(); ++i) z += (p[i] = std::exp(logits[i] - top));
    for (double& v : p) v /= z;
    return p;
}

inline Vec log_softmax(std::span<const double> logits) {
    const double top = *std::max_element(logits.begin(), logits.end());
    double z = 0.0;
    for (double l : logits) z += std::exp(l - top);
    const double lz = top + std::log(z);
    Vec out(logits.size());
    for (std::size_t i = 0; i < logits.size(); ++i) out[i] = logits[i] - lz;
    return out;
}

/// KL(softmax(logits) || softmax(logits0)).
inline double kl_divergence(std::span<const double> logits, std::span<const double> logits0) {
    auto lp = log_softmax(logits);
    auto lq = log_softmax(logits0);
    double kl = 0.0;
    for (std::size_t i = 0; i < lp.size(); ++i) kl += std::exp(lp[i]) * (lp[i] - lq[i]);
    return std::max(0.0, kl);
}

inline double entropy(std::span<const double> logits) {
    auto lp = log_softmax(logits);
    double h = 0.0;
    for (double l : lp) h -= std::exp(l) * l;
    return h;
}

inline double expectation(std::span<const double> probs, std::span<const double> values) {
    double s = 0.0;
    for (std::size_t i = 0; i < probs.size(); ++i) s += probs[i] * values[i];
    return s;
}

namespace detail {

// d KL(p||p0) / d logits_j = p_j (log p_j - log p0_j - KL)
inline Vec kl_gradient(std::span<const double> logits, std::span<const double> logits0) {
    auto lp = log_softmax(logits);
    auto lq = log_softmax(logits0);
    double kl = 0.0;
    for (std::size_t i = 0; i < lp.size(); ++i) kl += std::exp(lp[i]) * (lp[i] - lq[i]);
    Vec g(lp.size());
    for (std::size_t j = 0; j < lp.size(); ++j) g[j] = std::exp(lp[j]) * (lp[j] - lq[j] - kl);
    return g;
}

} // namespace detail

// ---------------------------------------------------------------------------
// Objectives and their exact gradients

/// Reward-weighted log-likelihood of the kept samples with a KL penalty:
///
///     (1/K) sum_k w_k log p(y_k) - beta KL(p || p0)
inline double rwr_objective(std::span<const double> logits, std::span<const double> logits0,
                            std::span<const std::size_t> kept, std::span<const double> weights, double beta) {
    auto lp = log_softmax(logits);
    double s = 0.0;
    for (std::size_t k = 0; k < kept.size(); ++k) s += weights[k] * lp[kept[k]];
    if (!kept.empty()) s /= static_cast<double>(kept.size());
    return s - beta * kl_divergence(logits, logits0);
}

inline Vec rwr_gradient(std::span<const double> logits, std::span<const double> logits0,
                        std::span<const std::size_t> kept, std::span<const double> weights, double beta) {
    auto p = softmax(logits);
    Vec g(p.size(), 0.0);
    if (!kept.empty()) {
        const double inv_k = 1.0 / static_cast<double>(kept.size());
        double wsum = 0.0;
        for (std::size_t k = 0; k < kept.size(); ++k) {
            g[kept[k]] += weights[k] * inv_k;
            wsum += weights[k] * inv_k;
        }
        for (std::size_t j = 0; j < p.size(); ++j) g[j] -= wsum * p[j];
    }
    if (beta != 0.0) {
        auto gk = detail::kl_gradient(logits, logits0);
        for (std::size_t j = 0; j < g.size(); ++j) g[j] -= beta * gk[j];
    }
    return g;
}

/// Expected reward with a KL penalty: E_p[r] - w KL(p || p0).
inline double pg_objective(std::span<const double> logits, std::span<const double> logits0,
                           std::span<const double> reward, double reg_weight) {
    auto p = softmax(logits);
    return expectation(p, reward) - reg_weight * kl_divergence(logits, logits0);
}

inline Vec pg_exact_gradient(std::span<const double> logits, std::span<const double> logits0,
                             std::span<const double> reward, double reg_weight) {
    auto p = softmax(logits);
    const double mean_r = expectation(p, reward);
    Vec g(p.size());
    for (std::size_t j = 0; j < p.size(); ++j) g[j] = p[j] * (reward[j] - mean_r);
    if (reg_weight != 0.0) {
        auto gk = detail::kl_gradient(logits, logits0);
        for (std::size_t j = 0; j < g.size(); ++j) g[j] -= reg_weight * gk[j];
    }
    return g;
}

/// Score-function estimate of `pg_exact_gradient` from a batch of samples.
/// Each sample's return is r(y) - w log(p(y)/p0(y)); the baseline for a
/// sample is the mean return of the other samples in the batch, which keeps
/// the estimate unbiased (a batch of one uses no baseline).
inline Vec pg_gradient_estimate(std::span<const double> logits, std::span<const double> logits0,
                                std::span<const double> reward, double reg_weight,
                                std::span<const std::size_t> samples) {
    auto p = softmax(logits);
    auto lp = log_softmax(logits);
    auto lq = log_softmax(logits0);
    const std::size_t b = samples.size();
    Vec ret(b);
    double total = 0.0;
    for (std::size_t i = 0; i < b; ++i) {
        const std::size_t y = samples[i];
        ret[i] = reward[y] - reg_weight * (lp[y] - lq[y]);
        total += ret[i];
    }
    Vec g(p.size(), 0.0);
    for (std::size_t i = 0; i < b; ++i) {
        const double baseline = b > 1 ? (total - ret[i]) / static_cast<double>(b - 1) : 0.0;
        const double adv = (ret[i] - baseline) / static_cast<double>(b);
        // grad log p(y) = e_y - p
        g[samples[i]] += adv;
        for (std::size_t j = 0; j < p.size(); ++j) g[j] -= adv * p[j];
    }
    return g;
}

// ---------------------------------------------------------------------------
// World construction

struct ToyWorld {
    std::size_t universe_size = 0;
    Vec true_reward;
    Vec proxy_reward;
    double misalignment = 1.0;        // requested Spearman(proxy, true)
    double achieved_spearman = 1.0;   // measured on the constructed rewards
    Vec initial_logits;
    std::vector<std::size_t> exploits; // outputs whose proxy is inflated, ascending
};

struct WorldOptions {
    // Fraction of outputs whose proxy reward is pushed above every other
    // output regardless of their true reward.
    double exploit_fraction = 0.1;
    // Initial logit of exploit outputs (others start at 0): they are less
    // likely than ordinary outputs under the initial model.
    double exploit_logit = -1.0;
    // Draw exploit outputs from those with below-median true reward, i.e.
    // outputs the proxy overrates because they are flawed.
    bool exploits_from_lower_half = true;
    double tolerance = 0.05;
    int max_attempts = 64;
};

namespace detail {

inline Vec mixture_proxy(std::span<const double> z, std::span<const double> noise, double rho,
                         std::span<const std::size_t> exploits, std::span<const double> exploit_bonus) {
    const double s = std::sqrt(std::max(0.0, 1.0 - rho * rho));
    Vec proxy(z.size());
    double top = -std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < z.size(); ++i) {
        proxy[i] = rho * z[i] + s * noise[i];
        top = std::max(top, proxy[i]);
    }
    for (std::size_t e = 0; e < exploits.size(); ++e) proxy[exploits[e]] = top + 0.5 + exploit_bonus[e];
    return proxy;
}

} // namespace detail

/// Seeded world whose proxy has Spearman correlation with the true reward
/// within `opts.tolerance` of `misalignment` whenever that is attainable.
///
/// The proxy is a rank-controlled mixture: most outputs get a Gaussian-copula
/// mix rho*true + sqrt(1-rho^2)*noise, with rho found by bisection on the
/// measured Spearman; a small exploit set is ranked above all of them. If
/// the target cannot be met with exploits present, the exploit set is
/// dropped. misalignment = +/-1 copies (or negates) the true reward.
inline ToyWorld make_toy_world(std::size_t n, double misalignment, std::uint64_t seed, const WorldOptions& opts = {}) {
    if (n < 2) fail(ErrorCode::BadMisalignment, "universe needs at least 2 outputs");
    if (!std::isfinite(misalignment) || std::abs(misalignment) > 1.0)
        fail(ErrorCode::BadMisalignment, "misalignment must lie in [-1, 1]");
    if (opts.exploit_fraction < 0.0 || opts.exploit_fraction >= 1.0)
        fail(ErrorCode::BadHyperparameter, "exploit_fraction must lie in [0, 1)");

    std::mt19937_64 rng(seed);
    std::normal_distribution<double> normal(0.0, 1.0);
    ToyWorld w;
    w.universe_size = n;
    w.misalignment = misalignment;
    w.true_reward.resize(n);
    for (double& t : w.true_reward) t = normal(rng);
    w.initial_logits.assign(n, 0.0);

    if (misalignment == 1.0 || misalignment == -1.0) {
        w.proxy_reward = w.true_reward;
        if (misalignment < 0)
            for (double& v : w.proxy_reward) v = -v;
        w.achieved_spearman = spearman(w.proxy_reward, w.true_reward);
        return w;
    }

    auto attempt = [&](std::size_t n_exploit, std::mt19937_64& g) {
        Vec noise(n);
        for (double& v : noise) v = normal(g);
        std::vector<std::size_t> all(n);
        std::iota(all.begin(), all.end(), std::size_t{0});
        if (opts.exploits_from_lower_half) {
            std::sort(all.begin(), all.end(),
                      [&](std::size_t a, std::size_t b) { return w.true_reward[a] < w.true_reward[b]; });
            all.resize(n / 2);
            std::sort(all.begin(), all.end());
        }
        std::vector<std::size_t> exploits;
        std::sample(all.begin(), all.end(), std::back_inserter(exploits), n_exploit, g);
        Vec bonus(exploits.size());
        for (double& b : bonus) b = 0.5 * std::abs(normal(g));

        auto measure = [&](double rho) {
            auto proxy = detail::mixture_proxy(w.true_reward, noise, rho, exploits, bonus);
            const bool flat = std::all_of(proxy.begin(), proxy.end(), [&](double v) { return v == proxy.front(); });
            return flat ? 0.0 : spearman(proxy, w.true_reward);
        };
        double lo = -1.0, hi = 1.0;
        for (int it = 0; it < 60; ++it) {
            const double mid = 0.5 * (lo + hi);
            (measure(mid) < misalignment ? lo : hi) = mid;
        }
        double best_rho = lo;
        double best_err = std::abs(measure(lo) - misalignment);
        if (std::abs(measure(hi) - misalignment) < best_err) {
            best_rho = hi;
            best_err = std::abs(measure(hi) - misalignment);
        }
        struct Result {
            double err;
            Vec proxy;
            std::vector<std::size_t> exploits;
        };
        return Result{best_err, detail::mixture_proxy(w.true_reward, noise, best_rho, exploits, bonus), exploits};
    };

    const auto n_exploit = static_cast<std::size_t>(std::floor(opts.exploit_fraction * static_cast<double>(n)));
    std::optional<decltype(attempt(0, rng))> best;
    for (std::size_t exploit_count : {n_exploit, std::size_t{0}}) {
        for (int a = 0; a < opts.max_attempts; ++a) {
            auto r = attempt(exploit_count, rng);
            if (!best || r.err < best->err) best = std::move(r);
            if (best->err <= opts.tolerance) break;
        }
        if (best->err <= opts.tolerance || exploit_count == 0) break;
    }
    w.proxy_reward = std::move(best->proxy);
    w.exploits = std::move(best->exploits);
    std::sort(w.exploits.begin(), w.exploits.end());
    for (std::size_t e : w.exploits) w.initial_logits[e] = opts.exploit_logit;
    w.achieved_spearman = spearman(w.proxy_reward, w.true_reward);
    return w;
}

/// A copy of `w` whose proxy equals its true reward.
inline ToyWorld with_true_proxy(ToyWorld w) {
    w.proxy_reward = w.true_reward;
    w.misalignment = 1.0;
    w.achieved_spearman = 1.0;
    return w;
}

/// Proxy rescaled to [0, 1] (min-max over the universe); used as the
/// non-negative sample weight / return. Order-preserving.
inline Vec normalized_proxy(const ToyWorld& w) {
    const auto [lo, hi] = std::minmax_element(w.proxy_reward.begin(), w.proxy_reward.end());
    const double span = *hi - *lo;
    Vec r(w.proxy_reward.size());
    for (std::size_t i = 0; i < r.size(); ++i) r[i] = span > 0 ? (w.proxy_reward[i] - *lo) / span : 0.0;
    return r;
}

// ---------------------------------------------------------------------------
// Training runs

struct TrajectoryPoint {
    std::size_t step = 0;
    double proxy_mean = 0.0;
    double true_mean = 0.0;
    double kl_to_initial = 0.0;
    double entropy = 0.0;
};

struct Trajectory {
    std::vector<TrajectoryPoint> points;
    Vec final_logits;
};

namespace detail {

inline TrajectoryPoint snapshot(const ToyWorld& w, std::span<const double> logits, std::size_t step) {
    auto p = softmax(logits);
    return {step, expectation(p, w.proxy_reward), expectation(p, w.true_reward),
            kl_divergence(logits, w.initial_logits), entropy(logits)};
}

inline void check_world(const ToyWorld& w) {
    if (w.universe_size < 2 || w.true_reward.size() != w.universe_size || w.proxy_reward.size() != w.universe_size ||
        w.initial_logits.size() != w.universe_size)
        fail(ErrorCode::BadHyperparameter, "inconsistent toy world");
}

inline void check_step(double step_size) {
    if (!(step_size >= 0.0) || !std::isfinite(step_size))
        fail(ErrorCode::BadHyperparameter, "step_size must be a finite non-negative number");
}

inline std::vector<std::size_t> draw(std::span<const double> logits, std::size_t count, std::mt19937_64& rng) {
    auto p = softmax(logits);
    std::discrete_distribution<std::size_t> dist(p.begin(), p.end());
    std::vector<std::size_t> out(count);
    for (auto& y : out) y = dist(rng);
    return out;
}

} // namespace detail

struct RwrOptions {
    double beta = 0.0;
    std::size_t samples_per_round = 100;
    std::size_t keep_top = 10;
    std::size_t rounds = 300;
    double step_size = 0.5;
    std::uint64_t seed = 0;
};

/// Each round samples from the current policy, keeps the `keep_top` samples
/// with the highest proxy reward, and takes one exact gradient step on the
/// reward-weighted likelihood of those samples minus beta * KL.
inline Trajectory run_rwr(const ToyWorld& world, const RwrOptions& opts) {
    detail::check_world(world);
    detail::check_step(opts.step_size);
    if (opts.keep_top == 0 || opts.keep_top > opts.samples_per_round)
        fail(ErrorCode::BadHyperparameter, "keep_top must lie in [1, samples_per_round]");
    if (!(opts.beta >= 0.0)) fail(ErrorCode::BadHyperparameter, "beta must be non-negative");

    std::mt19937_64 rng(opts.seed);
    const auto weight = normalized_proxy(world);
    Vec logits = world.initial_logits;
    Trajectory traj;
    traj.points.push_back(detail::snapshot(world, logits, 0));
    for (std::size_t round = 1; round <= opts.rounds; ++round) {
        auto samples = detail::draw(logits, opts.samples_per_round, rng);
        std::stable_sort(samples.begin(), samples.end(), [&](std::size_t a, std::size_t b) {
            return world.proxy_reward[a] != world.proxy_reward[b] ? world.proxy_reward[a] > world.proxy_reward[b]
                                                                  : a < b;
        });
        samples.resize(opts.keep_top);
        Vec w(samples.size());
        for (std::size_t k = 0; k < samples.size(); ++k) w[k] = weight[samples[k]];
        auto g = rwr_gradient(logits, world.initial_logits, samples, w, opts.beta);
        for (std::size_t j = 0; j < logits.size(); ++j) logits[j] += opts.step_size * g[j];
        traj.points.push_back(detail::snapshot(world, logits, round));
    }
    traj.final_logits = std::move(logits);
    return traj;
}

struct PgOptions {
    double reg_weight = 0.0;
    std::size_t batch = 16;
    std::size_t steps = 500;
    double step_size = 0.5;
    std::uint64_t seed = 0;
};

/// Score-function policy gradient on E[r(y) - w log(p(y)/p0(y))].
inline Trajectory run_pg(const ToyWorld& world, const PgOptions& opts) {
    detail::check_world(world);
    detail::check_step(opts.step_size);
    if (opts.batch == 0) fail(ErrorCode::BadHyperparameter, "batch must be >= 1");
    if (!(opts.reg_weight >= 0.0)) fail(ErrorCode::BadHyperparameter, "reg_weight must be non-negative");

    std::mt19937_64 rng(opts.seed);
    const auto reward = normalized_proxy(world);
    Vec logits = world.initial_logits;
    Trajectory traj;
    traj.points.push_back(detail::snapshot(world, logits, 0));
    for (std::size_t step = 1; step <= opts.steps; ++step) {
        auto samples = detail::draw(logits, opts.batch, rng);
        auto g = pg_gradient_estimate(logits, world.initial_logits, reward, opts.reg_weight, samples);
        for (std::size_t j = 0; j < logits.size(); ++j) logits[j] += opts.step_size * g[j];
        traj.points.push_back(detail::snapshot(world, logits, step));
    }
    traj.final_logits = std::move(logits);
    return traj;
}

// ---------------------------------------------------------------------------
// Overoptimization detection

struct OveroptReport {
    std::size_t peak_step = 0;
    bool declined = false;
    double true_drop = 0.0;
};

/// Trailing means over `window` points. Flags a decline when the final
/// windowed true mean sits more than `margin` below its peak while the
/// windowed proxy mean has not fallen since that peak.
inline OveroptReport detect_overopt(const Trajectory& traj, std::size_t window, double margin = 0.05) {
    const auto& pts = traj.points;
    if (window == 0 || pts.size() <= window)
        fail(ErrorCode::TooShort, "trajectory of " + std::to_string(pts.size()) + " points needs more than window=" +
                                      std::to_string(window));
    const std::size_t count = pts.size() - window + 1;
    Vec true_w(count), proxy_w(count);
    for (std::size_t i = 0; i < count; ++i) {
        double t = 0.0, p = 0.0;
        for (std::size_t j = i; j < i + window; ++j) {
            t += pts[j].true_mean;
            p += pts[j].proxy_mean;
        }
        true_w[i] = t / static_cast<double>(window);
        proxy_w[i] = p / static_cast<double>(window);
    }
    const auto peak = static_cast<std::size_t>(std::max_element(true_w.begin(), true_w.end()) - true_w.begin());
    OveroptReport r;
    r.peak_step = pts[peak + window - 1].step;
    r.true_drop = true_w[peak] - true_w.back();
    const bool proxy_held = proxy_w.back() >= proxy_w[peak];
    r.declined = r.true_drop > margin && proxy_held;
    return r;
}

// ---------------------------------------------------------------------------
// Seed sweeps

struct SweepOptions {
    std::size_t universe_size = 50;
    double misalignment = 0.3;
    std::size_t seeds = 50;
    std::uint64_t first_seed = 0;
    WorldOptions world;
    RwrOptions rwr;           // rwr.seed is replaced per run
    std::size_t window = 10;
    double margin = 0.05;
};

struct SweepRow {
    std::uint64_t seed = 0;
    double achieved_spearman = 0.0;
    OveroptReport report;
};

/// One RWR run per world seed s (training seed 1000 + s), each scored by
/// detect_overopt.
inline std::vector<SweepRow> overopt_sweep(const SweepOptions& opts) {
    std::vector<SweepRow> rows;
    rows.reserve(opts.seeds);
    for (std::uint64_t s = opts.first_seed; s < opts.first_seed + opts.seeds; ++s) {
        auto world = make_toy_world(opts.universe_size, opts.misalignment, s, opts.world);
        RwrOptions run = opts.rwr;
        run.seed = 1000 + s;
        rows.push_back({s, world.achieved_spearman, detect_overopt(run_rwr(world, run), opts.window, opts.margin)});
    }
    return rows;
}

inline double decline_rate(std::span<const SweepRow> rows) {
    if (rows.empty()) return 0.0;
    std::size_t n = 0;
    for (const auto& r : rows) n += r.report.declined ? 1 : 0;
    return static_cast<double>(n) / static_cast<double>(rows.size());
}

} // namespace rewardcal
