// Copyright (C) 2026 The rewardcal Authors
// SPDX-License-Identifier: Apache-2.0

#include <cmath>
#include <numeric>
#include <random>

#include <gtest/gtest.h>

#include "oracles.hpp"
#include "rewardcal/overoptsim.hpp"

using namespace rewardcal;

namespace {

// Relative L2 error between an analytic gradient and central differences.
template <class F>
double fd_relative_error(F&& f, std::vector<double> x, const std::vector<double>& analytic) {
    const double h = 1e-5;
    double num = 0.0, den = 0.0;
    for (std::size_t j = 0; j < x.size(); ++j) {
        const double x0 = x[j];
        x[j] = x0 + h;
        const double up = f(x);
        x[j] = x0 - h;
        const double down = f(x);
        x[j] = x0;
        const double fd = (up - down) / (2.0 * h);
        num += (fd - analytic[j]) * (fd - analytic[j]);
        den += analytic[j] * analytic[j];
    }
    return std::sqrt(num) / std::max(std::sqrt(den), 1e-12);
}

Trajectory synthetic(const std::vector<double>& proxy, const std::vector<double>& truth) {
    Trajectory t;
    for (std::size_t i = 0; i < proxy.size(); ++i) t.points.push_back({i, proxy[i], truth[i], 0.0, 0.0});
    return t;
}

} // namespace

TEST(Simulator, SoftmaxBasics) {
    std::mt19937_64 rng(1);
    std::normal_distribution<double> normal(0.0, 50.0);
    for (int rep = 0; rep < 200; ++rep) {
        std::vector<double> z(2 + rep % 30);
        for (auto& v : z) v = normal(rng);
        auto p = softmax(z);
        EXPECT_NEAR(std::accumulate(p.begin(), p.end(), 0.0), 1.0, 1e-12);
        EXPECT_NEAR(kl_divergence(z, z), 0.0, 1e-12);
        EXPECT_GE(entropy(z), -1e-12);
        EXPECT_LE(entropy(z), std::log(static_cast<double>(z.size())) + 1e-12);
    }
}

TEST(Simulator, GradientsMatchFiniteDifferences) {
    std::mt19937_64 rng(11);
    std::normal_distribution<double> normal;
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    for (int rep = 0; rep < 100; ++rep) {
        const std::size_t n = 2 + rep % 29;
        std::vector<double> z(n), z0(n), reward(n);
        for (std::size_t j = 0; j < n; ++j) {
            z[j] = normal(rng);
            z0[j] = normal(rng);
            reward[j] = unit(rng);
        }
        const double beta = rep % 3 == 0 ? 0.0 : unit(rng) * 2.0;
        std::uniform_int_distribution<std::size_t> pick(0, n - 1);
        std::vector<std::size_t> kept(1 + rep % 10);
        std::vector<double> w(kept.size());
        for (std::size_t k = 0; k < kept.size(); ++k) {
            kept[k] = pick(rng);
            w[k] = unit(rng);
        }
        const auto g_rwr = rwr_gradient(z, z0, kept, w, beta);
        const double e_rwr =
            fd_relative_error([&](const std::vector<double>& x) { return rwr_objective(x, z0, kept, w, beta); }, z, g_rwr);
        EXPECT_LT(e_rwr, 1e-6) << "rwr n=" << n;
        const auto g_pg = pg_exact_gradient(z, z0, reward, beta);
        const double e_pg =
            fd_relative_error([&](const std::vector<double>& x) { return pg_objective(x, z0, reward, beta); }, z, g_pg);
        EXPECT_LT(e_pg, 1e-6) << "pg n=" << n;
    }
}

TEST(Simulator, PolicyGradientEstimateIsUnbiased) {
    const std::vector<double> z = {0.3, -0.5, 1.2, 0.0, -1.0};
    const std::vector<double> z0 = {0.0, 0.0, 0.5, -0.5, 0.2};
    const std::vector<double> reward = {0.1, 0.9, 0.4, 0.7, 0.0};
    const double reg = 0.3;
    const auto exact = pg_exact_gradient(z, z0, reward, reg);
    const auto p = softmax(z);
    std::mt19937_64 rng(17);
    std::discrete_distribution<std::size_t> dist(p.begin(), p.end());
    const std::size_t reps = 100000;
    std::vector<double> mean(5, 0.0), sq(5, 0.0);
    std::vector<std::size_t> batch(4);
    for (std::size_t r = 0; r < reps; ++r) {
        for (auto& y : batch) y = dist(rng);
        auto g = pg_gradient_estimate(z, z0, reward, reg, batch);
        for (std::size_t j = 0; j < 5; ++j) {
            mean[j] += g[j];
            sq[j] += g[j] * g[j];
        }
    }
    for (std::size_t j = 0; j < 5; ++j) {
        const double m = mean[j] / reps;
        const double var = sq[j] / reps - m * m;
        const double se = std::sqrt(var / reps);
        EXPECT_LE(std::abs(m - exact[j]), 3.0 * se) << "coordinate " << j;
    }
}

TEST(Simulator, ToyWorldHitsRequestedCorrelation) {
    for (double rho : {0.3, 0.6, 0.9}) {
        for (std::uint64_t seed = 0; seed < 10; ++seed) {
            auto w = make_toy_world(50, rho, seed);
            EXPECT_NEAR(oracle::spearman(w.proxy_reward, w.true_reward), w.achieved_spearman, 1e-12);
            EXPECT_NEAR(w.achieved_spearman, rho, 0.05);
            auto p = softmax(w.initial_logits);
            EXPECT_NEAR(std::accumulate(p.begin(), p.end(), 0.0), 1.0, 1e-12);
        }
    }
    auto t = with_true_proxy(make_toy_world(50, 0.3, 1));
    EXPECT_EQ(t.proxy_reward, t.true_reward);
    EXPECT_THROW(make_toy_world(1, 0.3, 0), Error);
}

TEST(Simulator, ZeroStepGivesFlatTrajectory) {
    auto w = make_toy_world(30, 0.3, 2);
    RwrOptions o;
    o.rounds = 20;
    o.step_size = 0.0;
    auto t = run_rwr(w, o);
    ASSERT_EQ(t.points.size(), 21u);
    for (const auto& pt : t.points) {
        EXPECT_EQ(pt.proxy_mean, t.points.front().proxy_mean);
        EXPECT_EQ(pt.kl_to_initial, 0.0);
    }
    o.step_size = -0.1;
    EXPECT_THROW(run_rwr(w, o), Error);
}

TEST(Simulator, StrongRegularizationStaysNearInitialPolicy) {
    auto w = make_toy_world(30, 0.3, 3);
    RwrOptions r;
    r.beta = 1e3;
    r.step_size = 1e-4;
    r.rounds = 100;
    EXPECT_LT(run_rwr(w, r).points.back().kl_to_initial, 0.01);
    PgOptions p;
    p.reg_weight = 1e3;
    p.step_size = 1e-4;
    p.steps = 100;
    EXPECT_LT(run_pg(w, p).points.back().kl_to_initial, 0.01);
}

TEST(Simulator, TrueProxyImprovesWithoutDecline) {
    for (std::uint64_t seed = 0; seed < 5; ++seed) {
        auto w = with_true_proxy(make_toy_world(50, 0.3, seed));
        RwrOptions o;
        o.seed = 1000 + seed;
        auto t = run_rwr(w, o);
        EXPECT_GT(t.points.back().true_mean, t.points.front().true_mean);
        EXPECT_FALSE(detect_overopt(t, 10).declined);
    }
}

TEST(DetectOveropt, SyntheticCurves) {
    std::vector<double> up(40), rise_fall(40), flat(40, 0.5);
    for (std::size_t i = 0; i < 40; ++i) {
        up[i] = static_cast<double>(i) / 40.0;
        rise_fall[i] = i < 20 ? static_cast<double>(i) / 20.0 : 2.0 - static_cast<double>(i) / 20.0;
    }
    auto hump = detect_overopt(synthetic(up, rise_fall), 5);
    EXPECT_TRUE(hump.declined);
    EXPECT_GT(hump.true_drop, 0.05);
    EXPECT_FALSE(detect_overopt(synthetic(up, up), 5).declined);
    // The proxy fell too: ordinary divergence, not overoptimization.
    EXPECT_FALSE(detect_overopt(synthetic(rise_fall, rise_fall), 5).declined);
    EXPECT_FALSE(detect_overopt(synthetic(flat, flat), 5).declined);
    EXPECT_THROW(detect_overopt(synthetic(flat, flat), 40), Error);
    EXPECT_THROW(detect_overopt(synthetic(flat, flat), 0), Error);
}

TEST(Sweep, DeterministicAndSeeded) {
    SweepOptions o;
    o.seeds = 3;
    o.rwr.rounds = 50;
    auto a = overopt_sweep(o);
    auto b = overopt_sweep(o);
    ASSERT_EQ(a.size(), 3u);
    for (std::size_t i = 0; i < a.size(); ++i) {
        EXPECT_EQ(a[i].seed, i);
        EXPECT_EQ(a[i].report.declined, b[i].report.declined);
        EXPECT_EQ(a[i].report.true_drop, b[i].report.true_drop);
    }
    const double rate = decline_rate(a);
    EXPECT_GE(rate, 0.0);
    EXPECT_LE(rate, 1.0);
}

TEST(Simulator, ToyWorldCorrelationExtremes) {
    auto exact = make_toy_world(40, 1.0, 9);
    EXPECT_DOUBLE_EQ(oracle::spearman(exact.proxy_reward, exact.true_reward), 1.0);
    double sum = 0.0;
    for (std::uint64_t seed = 0; seed < 100; ++seed) sum += make_toy_world(1000, 0.0, seed).achieved_spearman;
    EXPECT_NEAR(sum / 100.0, 0.0, 0.05);
    try {
        make_toy_world(10, 1.5, 0);
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.code(), ErrorCode::BadMisalignment);
    }
}

TEST(Simulator, TrueProxyConvergesToBestOutput) {
    auto w = with_true_proxy(make_toy_world(20, 0.3, 6));
    const auto best = static_cast<std::size_t>(std::max_element(w.true_reward.begin(), w.true_reward.end()) -
                                               w.true_reward.begin());
    RwrOptions r;
    r.rounds = 2000;
    r.seed = 6;
    auto rwr = run_rwr(w, r);
    EXPECT_GT(softmax(rwr.final_logits)[best], 0.99);

    PgOptions p;
    p.steps = 5000;
    p.seed = 6;
    auto pg = run_pg(w, p);
    const double top = w.true_reward[best];
    EXPECT_LE(std::abs(pg.points.back().true_mean - top), 0.01 * std::abs(top));
}

TEST(Simulator, OptimizingTheTrueRewardNeverHurts) {
    for (double beta : {0.0, 0.1, 1.0}) {
        for (std::uint64_t seed = 0; seed < 5; ++seed) {
            auto w = with_true_proxy(make_toy_world(30, 0.3, seed));
            RwrOptions r;
            r.beta = beta;
            r.rounds = 100;
            r.seed = seed;
            auto t = run_rwr(w, r);
            EXPECT_GE(t.points.back().true_mean, t.points.front().true_mean - 1e-3) << "beta=" << beta;
        }
    }
}

TEST(DetectOveropt, RiseToOneThenFallToPointFour) {
    std::vector<double> proxy, truth;
    for (int i = 0; i <= 10; ++i) {
        truth.push_back(i / 10.0);
        proxy.push_back(i / 20.0);
    }
    for (int i = 1; i <= 6; ++i) {
        truth.push_back(1.0 - i / 10.0);
        proxy.push_back(0.5 + i / 20.0);
    }
    auto r = detect_overopt(synthetic(proxy, truth), 1);
    EXPECT_TRUE(r.declined);
    EXPECT_NEAR(r.true_drop, 0.6, 1e-12);
    EXPECT_EQ(r.peak_step, 10u);
}
