// Copyright (C) 2026 The rewardcal Authors
// SPDX-License-Identifier: Apache-2.0

#include <cmath>
#include <random>

#include <gtest/gtest.h>

#include "fixtures.hpp"
#include "oracles.hpp"
#include "rewardcal/calib.hpp"

using namespace rewardcal;

namespace {

ErrorCode code_of(auto&& fn) {
    try {
        fn();
    } catch (const Error& e) {
        return e.code();
    }
    ADD_FAILURE() << "no error raised";
    return ErrorCode::NoEvaluation;
}

std::vector<double> random_vector(std::mt19937_64& rng, std::size_t n, double scale) {
    std::uniform_real_distribution<double> u(-scale, scale);
    std::vector<double> v(n);
    for (double& x : v) x = u(rng);
    return v;
}

} // namespace

TEST(TextNorm, Examples) {
    const std::vector<double> none;
    EXPECT_EQ(textnorm(5.3, none, 1.0), 1.0);
    for (double c : {-3.0, 0.0, 2.5, 700.0}) {
        const std::vector<double> same = {c, c, c};
        EXPECT_DOUBLE_EQ(textnorm(c, same, 1.0), 0.25);
    }
    const std::vector<double> contrast = {1.0, 0.0};
    EXPECT_NEAR(textnorm(2.0, contrast, 1.0), 0.665240955, 1e-9);
    EXPECT_NEAR(textnorm(2.0, contrast, 1.0), oracle::textnorm(2.0, contrast, 1.0), 1e-15);
}

TEST(TextNorm, PublishedDeerRows) {
    const std::vector<double> contrast = {-0.028, 0.867, 1.454, 1.023};
    // IR column of the deer/orange example, four contrast rows, tau = 1.
    EXPECT_NEAR(textnorm(1.750, contrast, 1.0), 0.355915, 1e-6);
    EXPECT_NEAR(textnorm(1.750, contrast, 1.0), oracle::textnorm(1.750, contrast, 1.0), 1e-15);
}

TEST(TextNorm, Errors) {
    const std::vector<double> c = {1.0};
    const std::vector<double> bad = {NAN};
    EXPECT_EQ(code_of([&] { textnorm(1.0, c, 0.0); }), ErrorCode::NonPositiveTemperature);
    EXPECT_EQ(code_of([&] { textnorm(1.0, c, -1.0); }), ErrorCode::NonPositiveTemperature);
    EXPECT_EQ(code_of([&] { textnorm(INFINITY, c, 1.0); }), ErrorCode::NonFiniteInput);
    EXPECT_EQ(code_of([&] { textnorm(1.0, bad, 1.0); }), ErrorCode::NonFiniteInput);
}

TEST(TextNorm, NoOverflow) {
    const std::vector<double> c = {999.0, 998.0};
    const double v = textnorm(1000.0, c, 1.0);
    EXPECT_TRUE(std::isfinite(v));
    EXPECT_GT(v, 0.0);
    EXPECT_LT(v, 1.0);
}

TEST(TextNorm, Limits) {
    const std::vector<double> c = {0.5, -1.0, 0.2};
    EXPECT_NEAR(textnorm(1.0, c, 1e-6), 1.0, 1e-6);
    EXPECT_NEAR(textnorm(0.0, c, 1e-6), 0.0, 1e-6);
    EXPECT_NEAR(textnorm(1.0, c, 1e6), 0.25, 1e-6);
}

TEST(TextNorm, MatchesHighPrecisionOracle) {
    std::mt19937_64 rng(3);
    std::uniform_real_distribution<double> log_tau(-6.0, 6.0);
    std::uniform_int_distribution<int> m_dist(0, 8);
    for (int i = 0; i < 2000; ++i) {
        const double tau = std::pow(10.0, log_tau(rng));
        auto c = random_vector(rng, static_cast<std::size_t>(m_dist(rng)), 1000.0);
        const double r0 = random_vector(rng, 1, 1000.0)[0];
        EXPECT_NEAR(textnorm(r0, c, tau), oracle::textnorm(r0, c, tau), 1e-12);
    }
}

TEST(TextNorm, InvarianceProperties) {
    std::mt19937_64 rng(5);
    std::uniform_real_distribution<double> shift(-50.0, 50.0), scale(0.1, 10.0), tau_d(0.2, 5.0);
    for (int i = 0; i < 1000; ++i) {
        auto c = random_vector(rng, 1 + i % 6, 5.0);
        const double r0 = random_vector(rng, 1, 5.0)[0];
        const double tau = tau_d(rng);
        const double base = textnorm(r0, c, tau);

        const double s = shift(rng);
        auto cs = c;
        for (double& x : cs) x += s;
        EXPECT_NEAR(textnorm(r0 + s, cs, tau), base, 1e-12);

        const double a = scale(rng);
        auto ca = c;
        for (double& x : ca) x *= a;
        EXPECT_NEAR(textnorm(a * r0, ca, a * tau), base, 1e-12);

        EXPECT_GT(base, 0.0);
        EXPECT_LE(base, 1.0);

        // Strictly increasing in r0, strictly decreasing in every contrast.
        EXPECT_GT(textnorm(r0 + 0.25, c, tau), base);
        for (std::size_t j = 0; j < c.size(); ++j) {
            auto up = c;
            up[j] += 0.25;
            EXPECT_LT(textnorm(r0, up, tau), base);
        }
    }
}

TEST(Ensembles, Examples) {
    const std::vector<double> one = {0.8}, two = {0.8, 0.6}, same = {0.3, 0.3, 0.3};
    EXPECT_DOUBLE_EQ(mean_ensemble(one), 0.8);
    EXPECT_NEAR(mean_ensemble(two), 0.7, 1e-15);
    EXPECT_DOUBLE_EQ(mean_ensemble(same), 0.3);
    EXPECT_NEAR(variance_penalized_ensemble(two, 1.0), 0.69, 1e-15);
    for (double lam : {0.0, 0.5, 10.0}) EXPECT_DOUBLE_EQ(variance_penalized_ensemble(one, lam), 0.8);
    const std::vector<double> empty;
    EXPECT_EQ(code_of([&] { mean_ensemble(empty); }), ErrorCode::EmptyEnsemble);
    EXPECT_EQ(code_of([&] { variance_penalized_ensemble(empty, 1.0); }), ErrorCode::EmptyEnsemble);
    EXPECT_EQ(code_of([&] { variance_penalized_ensemble(two, -0.1); }), ErrorCode::NegativeLambda);
}

TEST(Ensembles, ReductionsAndOrdering) {
    std::mt19937_64 rng(9);
    std::uniform_real_distribution<double> lam_d(0.01, 5.0);
    for (int i = 0; i < 1000; ++i) {
        auto v = random_vector(rng, 1 + i % 7, 1.0);
        EXPECT_EQ(variance_penalized_ensemble(v, 0.0), mean_ensemble(v));
        const double lam = lam_d(rng);
        const double pen = variance_penalized_ensemble(v, lam);
        if (v.size() == 1) {
            EXPECT_EQ(pen, v[0]);
            EXPECT_EQ(mean_ensemble(v), v[0]);
        } else {
            EXPECT_LT(pen, mean_ensemble(v));
        }
    }
}

class CalibrateMatrixTest : public ::testing::Test {
protected:
    ScoreTable scores;
    ContrastSets sets;

    void SetUp() override {
        // The deer/orange image scored against its prompt and four contrasts.
        const std::vector<std::pair<std::string, double>> rows = {
            {"base", 1.750}, {"x1", -0.028}, {"x2", 0.867}, {"x3", 1.454}, {"x4", 1.023}};
        for (const auto& [p, s] : rows) scores.add({"IR", p, "img1", s});
        for (const auto& [p, s] : rows) scores.add({"PS", p, "img1", s * 0.5});
        sets["base"] = {"base", {"x1", "x2", "x3", "x4"}};
    }
};

TEST_F(CalibrateMatrixTest, SingleModelMatchesTextNorm) {
    CalibConfig cfg;
    cfg.models = {"IR"};
    cfg.ensemble_mode = EnsembleMode::Single;
    std::vector<CalibrationCell> cells = {{"base", "img1", std::nullopt}};
    auto m = calibrate_matrix(scores, sets, cfg, cells);
    const double v = m.per_model.at("IR").at({"base", "img1"});
    EXPECT_NEAR(v, 0.355915, 1e-6);
    EXPECT_EQ(m.ensemble.at({"base", "img1"}), v);
}

TEST_F(CalibrateMatrixTest, EnsembleCombinesCalibratedValues) {
    CalibConfig cfg;
    cfg.models = {"IR", "PS"};
    cfg.lambda = 2.0;
    cfg.per_set_overrides[PromptSet::Composition].mode = EnsembleMode::Mean;
    std::vector<CalibrationCell> cells = {{"base", "img1", PromptSet::Counting}};
    auto m = calibrate_matrix(scores, sets, cfg, cells);
    const std::vector<double> both = {m.per_model.at("IR").at({"base", "img1"}), m.per_model.at("PS").at({"base", "img1"})};
    EXPECT_DOUBLE_EQ(m.ensemble.at({"base", "img1"}), variance_penalized_ensemble(both, 2.0));

    cells[0].set = PromptSet::Composition;
    auto mean = calibrate_matrix(scores, sets, cfg, cells);
    EXPECT_DOUBLE_EQ(mean.ensemble.at({"base", "img1"}), mean_ensemble(both));
}

TEST_F(CalibrateMatrixTest, EmptyContrastSetGivesOne) {
    sets["base"].contrast_prompt_ids.clear();
    CalibConfig cfg;
    cfg.models = {"IR"};
    cfg.ensemble_mode = EnsembleMode::Single;
    std::vector<CalibrationCell> cells = {{"base", "img1", std::nullopt}};
    EXPECT_EQ(calibrate_matrix(scores, sets, cfg, cells).per_model.at("IR").at({"base", "img1"}), 1.0);
}

TEST_F(CalibrateMatrixTest, MissingCrossScoreIsReported) {
    sets["base"].contrast_prompt_ids.push_back("x5");
    CalibConfig cfg;
    cfg.models = {"IR", "PS"};
    std::vector<CalibrationCell> cells = {{"base", "img1", std::nullopt}, {"other", "img2", std::nullopt}};
    try {
        calibrate_matrix(scores, sets, cfg, cells);
        FAIL();
    } catch (const IngestError& e) {
        std::vector<std::string> msgs;
        for (const auto& d : e.diagnostics()) msgs.push_back(std::string(rewardcal::to_string(d.code)) + " " + d.message);
        EXPECT_NE(std::find(msgs.begin(), msgs.end(), "MissingCrossScore (IR, x5, img1)"), msgs.end());
        EXPECT_NE(std::find(msgs.begin(), msgs.end(), "MissingCrossScore (PS, x5, img1)"), msgs.end());
        EXPECT_NE(std::find(msgs.begin(), msgs.end(), "MissingContrastSet no contrast set for prompt 'other'"),
                  msgs.end());
    }
}

TEST_F(CalibrateMatrixTest, ValuesInUnitIntervalAndOrderIndependent) {
    std::mt19937_64 rng(1);
    std::normal_distribution<double> n(0.0, 3.0);
    ScoreTable t;
    ContrastSets cs;
    std::vector<CalibrationCell> cells;
    for (int p = 0; p < 5; ++p) {
        const std::string pid = "p" + std::to_string(p);
        cs[pid] = {pid, {"c" + std::to_string(p) + "a", "c" + std::to_string(p) + "b"}};
        for (int i = 0; i < 6; ++i) {
            const std::string iid = pid + "i" + std::to_string(i);
            cells.push_back({pid, iid, PromptSet::Counting});
            for (const auto& m : {"A", "B", "C"}) {
                t.add({m, pid, iid, n(rng)});
                for (const auto& c : cs[pid].contrast_prompt_ids) t.add({m, c, iid, n(rng)});
            }
        }
    }
    CalibConfig cfg;
    cfg.models = {"A", "B", "C"};
    auto forward = calibrate_matrix(t, cs, cfg, cells);
    std::reverse(cells.begin(), cells.end());
    auto backward = calibrate_matrix(t, cs, cfg, cells);
    EXPECT_EQ(forward.ensemble, backward.ensemble);
    for (const auto& [m, vals] : forward.per_model)
        for (const auto& [k, v] : vals) {
            EXPECT_GT(v, 0.0);
            EXPECT_LE(v, 1.0);
        }
    for (const auto& [k, v] : forward.ensemble) EXPECT_LE(v, 1.0);
}

TEST(CalibConfigJson, RoundTripAndValidation) {
    auto c = default_calib_config();
    c.tau = 0.7;
    c.per_set_overrides[PromptSet::Counting].lambda = 1.5;
    EXPECT_EQ(calib_config_from_json(calib_config_to_json(c)), c);
    EXPECT_EQ(default_calib_config().effective(PromptSet::Composition).mode, EnsembleMode::Mean);
    EXPECT_EQ(default_calib_config().effective(PromptSet::Counting).mode, EnsembleMode::VariancePenalized);
    EXPECT_EQ(default_calib_config().tau, 1.0);
    EXPECT_EQ(default_calib_config().lambda, 0.5);
    EXPECT_EQ(code_of([] { calib_config_from_json(json{{"tau", 0.0}}); }), ErrorCode::NonPositiveTemperature);
    EXPECT_EQ(code_of([] { calib_config_from_json(json{{"lambda", -1.0}}); }), ErrorCode::NegativeLambda);
    EXPECT_EQ(code_of([] { calib_config_from_json(json{{"ensemble_mode", "median"}}); }), ErrorCode::ConfigError);
}

TEST(ScoreFile, LoadsAndReportsProblems) {
    fixture::TempDir dir;
    fixture::write_text(dir / "s.jsonl",
                        "{\"model\":\"A\",\"prompt_id\":\"p\",\"image_id\":\"i\",\"score\":1.5}\n"
                        "{\"model\":\"A\",\"prompt_id\":\"p\",\"image_id\":\"i\",\"score\":2.5}\n"
                        "{\"model\":\"A\",\"prompt_id\":\"p\",\"image_id\":\"j\"}\n");
    try {
        load_scores(dir / "s.jsonl");
        FAIL();
    } catch (const IngestError& e) {
        ASSERT_EQ(e.diagnostics().size(), 2u);
        EXPECT_EQ(e.diagnostics()[0].code, ErrorCode::DuplicateId);
        EXPECT_EQ(e.diagnostics()[0].line, 2u);
        EXPECT_EQ(e.diagnostics()[1].line, 3u);
    }
    fixture::write_text(dir / "c.jsonl", "{\"base_prompt_id\":\"p\",\"contrast_prompt_ids\":[\"q\",\"p\"]}\n");
    EXPECT_THROW(load_contrast_sets(dir / "c.jsonl"), IngestError);
}

TEST(Tuning, SingletonAndTieBreak) {
    fixture::TempDir dir;
    auto paths = fixture::write_benchmark(dir.path());
    auto ds = load_benchmark(paths.prompts, paths.images, paths.labels);
    RewardMap fine;
    for (const auto& [iid, img] : ds.images) fine[{img.prompt_id, iid}] = img.fine_score();

    std::vector<GridCandidate> one = {{1.0, 0.0, fine}};
    auto r = tune_params(ds, one);
    EXPECT_EQ(r.tau, 1.0);
    EXPECT_EQ(r.lambda, 0.0);

    std::vector<GridCandidate> tied = {{2.0, 0.0, fine}, {0.5, 1.0, fine}, {0.5, 0.5, fine}};
    r = tune_params(ds, tied);
    EXPECT_EQ(r.tau, 0.5);
    EXPECT_EQ(r.lambda, 0.5);
    EXPECT_EQ(r.objectives[0], r.objectives[1]);

    std::vector<GridCandidate> empty;
    EXPECT_EQ(code_of([&] { tune_params(ds, empty); }), ErrorCode::EmptyGrid);
}

TEST(Tuning, TemperatureInvariantRankingPicksSmallestTau) {
    fixture::TempDir dir;
    auto paths = fixture::write_benchmark(dir.path());
    auto ds = load_benchmark(paths.prompts, paths.images, paths.labels);
    // One model whose base score is the fine score and whose contrast
    // scores are constant: calibrated order equals fine-score order at any tau.
    ScoreTable t;
    ContrastSets cs;
    for (const auto& [pid, ids] : ds.index) {
        cs[pid] = {pid, {pid + "~x"}};
        for (const auto& iid : ids) {
            t.add({"M", pid, iid, ds.images.at(iid).fine_score()});
            t.add({"M", pid + "~x", iid, 0.25});
        }
    }
    CalibConfig base;
    base.models = {"M"};
    base.ensemble_mode = EnsembleMode::Single;
    const std::vector<double> taus = {4.0, 0.3, 1.0}, lambdas = {0.0};
    auto r = tune_grid(ds, t, cs, base, taus, lambdas);
    EXPECT_EQ(r.tau, 0.3);

    // The objective equals the oracle AP@k of the fine-score ranking.
    double expect = 0.0;
    int n = 0;
    for (const auto& pid : unanimity_filter(ds)) {
        std::vector<double> s;
        std::vector<int> y;
        std::vector<std::string> keys;
        for (const auto& iid : ds.images_of(pid)) {
            s.push_back(ds.images.at(iid).fine_score());
            y.push_back(ds.images.at(iid).binary_label);
            keys.push_back(iid);
        }
        double sum = 0.0;
        for (std::size_t k : {5, 10, 25}) sum += oracle::ap_at_k(s, y, k, keys);
        expect += sum / 3.0;
        ++n;
    }
    for (double o : r.objectives) EXPECT_NEAR(o, expect / n, 1e-12);
}
