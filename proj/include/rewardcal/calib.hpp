// Copyright (C) 2026 The rewardcal Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

// Contrastive softmax calibration of raw reward-model scores, the two
// ensemble reductions over calibrated scores, and (tau, lambda) grid tuning.

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <limits>
#include <map>
#include <numeric>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "rewardcal/datamodel.hpp"
#include "rewardcal/error.hpp"
#include "rewardcal/jsonl.hpp"
#include "rewardcal/metrics.hpp"

namespace rewardcal {

// ---------------------------------------------------------------------------
// Core formulas

/// Softmax weight of `r0` among {r0} ∪ contrast at temperature `tau`:
///
///     exp(r0/tau) / (exp(r0/tau) + sum_i exp(r_i/tau))
///
/// Evaluated with the largest argument subtracted first. Returns exactly 1
/// for an empty contrast list. For very large gaps relative to tau the true
/// value can be below the smallest positive double and the result is 0.
inline double textnorm(double r0, std::span<const double> contrast, double tau) {
    if (!(tau > 0.0) || !std::isfinite(tau))
        fail(ErrorCode::NonPositiveTemperature, "tau must be a positive finite number");
    if (!std::isfinite(r0)) fail(ErrorCode::NonFiniteInput, "base reward is not finite");
    for (double r : contrast)
        if (!std::isfinite(r)) fail(ErrorCode::NonFiniteInput, "contrast reward is not finite");
    if (contrast.empty()) return 1.0;

    const double a0 = r0 / tau;
    double top = a0;
    for (double r : contrast) top = std::max(top, r / tau);
    const double num = std::exp(a0 - top);
    double den = num;
    for (double r : contrast) den += std::exp(r / tau - top);
    return num / den;
}

inline double mean_ensemble(std::span<const double> values) {
    if (values.empty()) fail(ErrorCode::EmptyEnsemble, "ensemble needs at least one value");
    return std::accumulate(values.begin(), values.end(), 0.0) / static_cast<double>(values.size());
}

/// mean - lambda * population variance (divides by k).
inline double variance_penalized_ensemble(std::span<const double> values, double lambda) {
    if (values.empty()) fail(ErrorCode::EmptyEnsemble, "ensemble needs at least one value");
    if (!(lambda >= 0.0)) fail(ErrorCode::NegativeLambda, "lambda must be non-negative");
    const double mu = mean_ensemble(values);
    if (lambda == 0.0) return mu;
    double ss = 0.0;
    for (double v : values) ss += (v - mu) * (v - mu);
    return mu - lambda * (ss / static_cast<double>(values.size()));
}

// ---------------------------------------------------------------------------
// Records

struct ScoreRecord {
    std::string model;
    std::string prompt_id;
    std::string image_id;
    double score = 0.0;
};

/// Raw scores keyed by (model, prompt, image).
class ScoreTable {
public:
    /// Returns false if the triple was already present.
    bool add(const ScoreRecord& rec) {
        if (!std::isfinite(rec.score)) fail(ErrorCode::NonFiniteInput, "score must be finite");
        auto [it, inserted] = table_.emplace(key(rec.model, rec.prompt_id, rec.image_id), rec.score);
        if (inserted) {
            models_.insert(rec.model);
            records_.push_back(rec);
        }
        return inserted;
    }

    std::optional<double> find(std::string_view model, std::string_view prompt_id,
                               std::string_view image_id) const {
        auto it = table_.find(key(model, prompt_id, image_id));
        if (it == table_.end()) return std::nullopt;
        return it->second;
    }

    const std::set<std::string>& models() const { return models_; }
    const std::vector<ScoreRecord>& records() const { return records_; }
    std::size_t size() const { return records_.size(); }

    /// (prompt, image) -> raw score for a single model.
    RewardMap raw_rewards(std::string_view model) const {
        RewardMap out;
        for (const auto& r : records_)
            if (r.model == model) out[{r.prompt_id, r.image_id}] = r.score;
        return out;
    }

private:
    static std::string key(std::string_view m, std::string_view p, std::string_view i) {
        std::string k;
        k.reserve(m.size() + p.size() + i.size() + 2);
        k.append(m).push_back('\x1f');
        k.append(p).push_back('\x1f');
        k.append(i);
        return k;
    }

    std::unordered_map<std::string, double> table_;
    std::set<std::string> models_;
    std::vector<ScoreRecord> records_;
};

struct ContrastSet {
    std::string base_prompt_id;
    std::vector<std::string> contrast_prompt_ids;

    bool operator==(const ContrastSet&) const = default;
};

using ContrastSets = std::map<std::string, ContrastSet>; // keyed by base prompt id

/// Base not in its own list, no duplicates.
inline std::optional<std::string> contrast_set_problem(const ContrastSet& cs) {
    std::set<std::string> seen;
    for (const auto& id : cs.contrast_prompt_ids) {
        if (id == cs.base_prompt_id) return "contrast set of '" + cs.base_prompt_id + "' contains its base prompt";
        if (!seen.insert(id).second)
            return "contrast set of '" + cs.base_prompt_id + "' lists '" + id + "' twice";
    }
    return std::nullopt;
}

inline ScoreTable load_scores(const std::filesystem::path& path) {
    ScoreTable table;
    std::vector<Diagnostic> diags;
    const std::string file = path.string();
    for_each_jsonl(path, diags, [&](std::size_t line, const json& rec) {
        ScoreRecord r;
        auto sit = rec.find("score");
        if (!read_string(rec, "model", r.model) || !read_string(rec, "prompt_id", r.prompt_id) ||
            !read_string(rec, "image_id", r.image_id) || sit == rec.end() || !sit->is_number()) {
            diags.push_back({ErrorCode::MalformedRecord, file, line,
                             "score record needs 'model', 'prompt_id', 'image_id' and numeric 'score'"});
            return;
        }
        r.score = sit->get<double>();
        if (!std::isfinite(r.score)) {
            diags.push_back({ErrorCode::NonFiniteInput, file, line, "score is not finite"});
            return;
        }
        if (!table.add(r))
            diags.push_back({ErrorCode::DuplicateId, file, line,
                             "duplicate score for (" + r.model + ", " + r.prompt_id + ", " + r.image_id + ")"});
    });
    if (!diags.empty()) throw IngestError(std::move(diags));
    return table;
}

inline ContrastSets load_contrast_sets(const std::filesystem::path& path) {
    ContrastSets sets;
    std::vector<Diagnostic> diags;
    const std::string file = path.string();
    for_each_jsonl(path, diags, [&](std::size_t line, const json& rec) {
        ContrastSet cs;
        auto lit = rec.find("contrast_prompt_ids");
        if (!read_string(rec, "base_prompt_id", cs.base_prompt_id) || lit == rec.end() || !lit->is_array()) {
            diags.push_back({ErrorCode::MalformedRecord, file, line,
                             "contrast set needs 'base_prompt_id' and array 'contrast_prompt_ids'"});
            return;
        }
        for (const auto& v : *lit) {
            if (!v.is_string()) {
                diags.push_back({ErrorCode::MalformedRecord, file, line, "contrast ids must be strings"});
                return;
            }
            cs.contrast_prompt_ids.push_back(v.get<std::string>());
        }
        if (auto problem = contrast_set_problem(cs)) {
            diags.push_back({ErrorCode::MalformedRecord, file, line, *problem});
            return;
        }
        if (sets.contains(cs.base_prompt_id)) {
            diags.push_back({ErrorCode::DuplicateId, file, line, "duplicate contrast set for '" + cs.base_prompt_id + "'"});
            return;
        }
        std::string base = cs.base_prompt_id;
        sets.emplace(std::move(base), std::move(cs));
    });
    if (!diags.empty()) throw IngestError(std::move(diags));
    return sets;
}

inline json contrast_set_to_json(const ContrastSet& cs) {
    return json{{"base_prompt_id", cs.base_prompt_id}, {"contrast_prompt_ids", cs.contrast_prompt_ids}};
}

// ---------------------------------------------------------------------------
// Configuration

enum class EnsembleMode { Single, Mean, VariancePenalized };

constexpr std::string_view to_string(EnsembleMode mode) {
    switch (mode) {
    case EnsembleMode::Single: return "single";
    case EnsembleMode::Mean: return "mean";
    case EnsembleMode::VariancePenalized: return "variance_penalized";
    }
    return "";
}

inline std::optional<EnsembleMode> parse_ensemble_mode(std::string_view text) {
    if (text == "single") return EnsembleMode::Single;
    if (text == "mean") return EnsembleMode::Mean;
    if (text == "variance_penalized") return EnsembleMode::VariancePenalized;
    return std::nullopt;
}

struct SetOverride {
    std::optional<EnsembleMode> mode;
    std::optional<double> tau;
    std::optional<double> lambda;

    bool operator==(const SetOverride&) const = default;
};

struct CalibConfig {
    double tau = 1.0;
    double lambda = 0.5;
    EnsembleMode ensemble_mode = EnsembleMode::VariancePenalized;
    std::vector<std::string> models; // empty = every model in the score table
    std::map<PromptSet, SetOverride> per_set_overrides;

    bool operator==(const CalibConfig&) const = default;

    struct Effective {
        EnsembleMode mode;
        double tau;
        double lambda;
    };

    Effective effective(std::optional<PromptSet> set) const {
        Effective e{ensemble_mode, tau, lambda};
        if (set) {
            if (auto it = per_set_overrides.find(*set); it != per_set_overrides.end()) {
                if (it->second.mode) e.mode = *it->second.mode;
                if (it->second.tau) e.tau = *it->second.tau;
                if (it->second.lambda) e.lambda = *it->second.lambda;
            }
        }
        return e;
    }

    void validate() const {
        auto check = [](double t, double l, const std::string& where) {
            if (!(t > 0.0) || !std::isfinite(t)) fail(ErrorCode::NonPositiveTemperature, where + "tau must be > 0");
            if (!(l >= 0.0) || !std::isfinite(l)) fail(ErrorCode::NegativeLambda, where + "lambda must be >= 0");
        };
        check(tau, lambda, "");
        for (auto set : kAllPromptSets) {
            auto e = effective(set);
            check(e.tau, e.lambda, std::string(to_string(set)) + ": ");
        }
    }
};

/// Ensemble of ImageReward and PickScore; mean ensemble on the composition
/// set, variance-penalized elsewhere; tau = 1, lambda = 0.5 until tuned.
inline CalibConfig default_calib_config() {
    CalibConfig c;
    c.models = {"ImageReward", "PickScore"};
    c.per_set_overrides[PromptSet::Composition].mode = EnsembleMode::Mean;
    return c;
}

inline CalibConfig calib_config_from_json(const json& j) {
    if (!j.is_object()) fail(ErrorCode::ConfigError, "calibration config must be a JSON object");
    CalibConfig c;
    auto number = [](const json& obj, const char* key, double& out) {
        if (auto it = obj.find(key); it != obj.end()) {
            if (!it->is_number()) fail(ErrorCode::ConfigError, std::string("'") + key + "' must be a number");
            out = it->get<double>();
            return true;
        }
        return false;
    };
    auto mode = [](const json& v) {
        if (!v.is_string()) fail(ErrorCode::ConfigError, "'ensemble_mode' must be a string");
        auto m = parse_ensemble_mode(v.get<std::string>());
        if (!m) fail(ErrorCode::ConfigError, "unknown ensemble_mode '" + v.get<std::string>() + "'");
        return *m;
    };
    number(j, "tau", c.tau);
    number(j, "lambda", c.lambda);
    if (auto it = j.find("ensemble_mode"); it != j.end()) c.ensemble_mode = mode(*it);
    if (auto it = j.find("models"); it != j.end()) {
        if (!it->is_array()) fail(ErrorCode::ConfigError, "'models' must be an array of strings");
        for (const auto& m : *it) {
            if (!m.is_string()) fail(ErrorCode::ConfigError, "'models' must be an array of strings");
            c.models.push_back(m.get<std::string>());
        }
    }
    if (auto it = j.find("per_set_overrides"); it != j.end() && !it->is_null()) {
        if (!it->is_object()) fail(ErrorCode::ConfigError, "'per_set_overrides' must be an object");
        for (const auto& [name, body] : it->items()) {
            auto set = parse_prompt_set(name);
            if (!set) fail(ErrorCode::ConfigError, "unknown set '" + name + "' in per_set_overrides");
            if (!body.is_object()) fail(ErrorCode::ConfigError, "override for '" + name + "' must be an object");
            SetOverride o;
            if (auto m = body.find("ensemble_mode"); m != body.end()) o.mode = mode(*m);
            double v = 0.0;
            if (number(body, "tau", v)) o.tau = v;
            if (number(body, "lambda", v)) o.lambda = v;
            c.per_set_overrides[*set] = o;
        }
    }
    c.validate();
    return c;
}

inline json calib_config_to_json(const CalibConfig& c) {
    json j{{"tau", c.tau}, {"lambda", c.lambda}, {"ensemble_mode", to_string(c.ensemble_mode)}, {"models", c.models}};
    json overrides = json::object();
    for (const auto& [set, o] : c.per_set_overrides) {
        json body = json::object();
        if (o.mode) body["ensemble_mode"] = to_string(*o.mode);
        if (o.tau) body["tau"] = *o.tau;
        if (o.lambda) body["lambda"] = *o.lambda;
        overrides[std::string(to_string(set))] = body;
    }
    j["per_set_overrides"] = overrides;
    return j;
}

// ---------------------------------------------------------------------------
// Batch calibration

struct CalibrationCell {
    std::string prompt_id;
    std::string image_id;
    std::optional<PromptSet> set; // selects per-set overrides
};

struct CalibratedMatrix {
    std::vector<std::string> models;
    std::map<std::string, RewardMap> per_model; // values in (0, 1]
    RewardMap ensemble;                         // values in (-inf, 1]
};

/// Every image of every prompt in `ds`, scored against its own prompt.
inline std::vector<CalibrationCell> dataset_cells(const Dataset& ds) {
    std::vector<CalibrationCell> cells;
    cells.reserve(ds.images.size());
    for (const auto& [pid, ids] : ds.index)
        for (const auto& iid : ids) cells.push_back({pid, iid, ds.prompts.at(pid).set});
    return cells;
}

/// Calibrates each model over the contrast set of each cell's prompt, then
/// combines the calibrated values. Any absent cross score is an error; all
/// of them are reported together.
inline CalibratedMatrix calibrate_matrix(const ScoreTable& scores, const ContrastSets& contrast_sets,
                                         const CalibConfig& config, std::span<const CalibrationCell> cells) {
    config.validate();
    CalibratedMatrix out;
    out.models = config.models.empty() ? std::vector<std::string>(scores.models().begin(), scores.models().end())
                                       : config.models;
    if (out.models.empty()) fail(ErrorCode::EmptyEnsemble, "no models to calibrate");

    std::vector<Diagnostic> missing;
    std::vector<double> contrast;
    std::vector<double> calibrated(out.models.size());
    for (const auto& cell : cells) {
        auto cs = contrast_sets.find(cell.prompt_id);
        if (cs == contrast_sets.end()) {
            missing.push_back({ErrorCode::MissingContrastSet, "", 0, "no contrast set for prompt '" + cell.prompt_id + "'"});
            continue;
        }
        const auto eff = config.effective(cell.set);
        bool complete = true;
        for (std::size_t m = 0; m < out.models.size(); ++m) {
            const auto& model = out.models[m];
            auto r0 = scores.find(model, cell.prompt_id, cell.image_id);
            if (!r0) {
                missing.push_back({ErrorCode::MissingCrossScore, "", 0,
                                   "(" + model + ", " + cell.prompt_id + ", " + cell.image_id + ")"});
                complete = false;
                continue;
            }
            contrast.clear();
            for (const auto& other : cs->second.contrast_prompt_ids) {
                auto r = scores.find(model, other, cell.image_id);
                if (!r) {
                    missing.push_back({ErrorCode::MissingCrossScore, "", 0,
                                       "(" + model + ", " + other + ", " + cell.image_id + ")"});
                    complete = false;
                    continue;
                }
                contrast.push_back(*r);
            }
            if (!complete) continue;
            calibrated[m] = textnorm(*r0, contrast, eff.tau);
            out.per_model[model][{cell.prompt_id, cell.image_id}] = calibrated[m];
        }
        if (!complete) continue;
        double combined = 0.0;
        switch (eff.mode) {
        case EnsembleMode::Single: combined = calibrated.front(); break;
        case EnsembleMode::Mean: combined = mean_ensemble(calibrated); break;
        case EnsembleMode::VariancePenalized: combined = variance_penalized_ensemble(calibrated, eff.lambda); break;
        }
        out.ensemble[{cell.prompt_id, cell.image_id}] = combined;
    }
    if (!missing.empty()) throw IngestError(std::move(missing));
    return out;
}

inline CalibratedMatrix calibrate_matrix(const ScoreTable& scores, const ContrastSets& contrast_sets,
                                         const CalibConfig& config, const Dataset& ds) {
    auto cells = dataset_cells(ds);
    return calibrate_matrix(scores, contrast_sets, config, cells);
}

// ---------------------------------------------------------------------------
// (tau, lambda) tuning

struct GridCandidate {
    double tau = 1.0;
    double lambda = 0.0;
    RewardMap reward; // calibrated ensemble reward at this grid point
};

struct TuneResult {
    double tau = 1.0;
    double lambda = 0.0;
    double objective = 0.0;
    std::vector<double> objectives; // parallel to the candidate list
};

/// Picks the grid point with the largest mean of AP@k over `k_values`,
/// averaged over retained prompts. Ties go to smaller tau, then smaller lambda.
inline TuneResult tune_params(const Dataset& ds, std::span<const GridCandidate> grid,
                              std::span<const std::size_t> k_values = kDefaultKValues,
                              UnanimityMode unanimity = UnanimityMode::Consolidated) {
    if (grid.empty()) fail(ErrorCode::EmptyGrid, "tuning grid is empty");
    if (unanimity_filter(ds, UnanimityMode::Consolidated).empty())
        fail(ErrorCode::NoRetainedPrompts, "every prompt is unanimous");
    EvalOptions opts;
    opts.k_values.assign(k_values.begin(), k_values.end());
    opts.unanimity = unanimity;

    TuneResult best;
    bool have = false;
    for (const auto& cand : grid) {
        const double obj = mean_ap_objective(evaluate(ds, cand.reward, opts), opts.k_values);
        best.objectives.push_back(obj);
        const bool better = !have || obj > best.objective ||
                            (obj == best.objective &&
                             (cand.tau < best.tau || (cand.tau == best.tau && cand.lambda < best.lambda)));
        if (better) {
            best.tau = cand.tau;
            best.lambda = cand.lambda;
            best.objective = obj;
            have = true;
        }
    }
    return best;
}

/// Calibrates at every (tau, lambda) pair and tunes. Per-set tau/lambda
/// overrides are dropped so the grid value applies everywhere; per-set
/// ensemble modes are kept.
inline TuneResult tune_grid(const Dataset& ds, const ScoreTable& scores, const ContrastSets& contrast_sets,
                            const CalibConfig& base, std::span<const double> taus, std::span<const double> lambdas,
                            std::span<const std::size_t> k_values = kDefaultKValues,
                            UnanimityMode unanimity = UnanimityMode::Consolidated) {
    if (taus.empty() || lambdas.empty()) fail(ErrorCode::EmptyGrid, "tuning grid is empty");
    std::vector<GridCandidate> grid;
    for (double t : taus) {
        for (double l : lambdas) {
            CalibConfig c = base;
            c.tau = t;
            c.lambda = l;
            for (auto& [set, o] : c.per_set_overrides) {
                o.tau.reset();
                o.lambda.reset();
            }
            grid.push_back({t, l, calibrate_matrix(scores, contrast_sets, c, ds).ensemble});
        }
    }
    return tune_params(ds, grid, k_values, unanimity);
}

} // namespace rewardcal
