// Copyright (C) 2026 The rewardcal Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

// The rewardcal command line: one subcommand per procedure, a JSON run
// configuration, and CSV/JSONL reports. Every failure exits 1 after
// printing one "error: <Code>: <message>" line per problem, and no report
// file is written unless the whole command succeeded.

#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <iostream>
#include <map>
#include <memory>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "rewardcal/calib.hpp"
#include "rewardcal/datamodel.hpp"
#include "rewardcal/error.hpp"
#include "rewardcal/fewshot.hpp"
#include "rewardcal/jsonl.hpp"
#include "rewardcal/llm_http_client.hpp"
#include "rewardcal/metrics.hpp"
#include "rewardcal/overoptsim.hpp"
#include "rewardcal/promptsynth.hpp"
#include "rewardcal/report.hpp"
#include "rewardcal/selection.hpp"

namespace rewardcal {

namespace fs = std::filesystem;

// ---------------------------------------------------------------------------
// Reward modes

/// raw: one model's raw score. rand: that model calibrated over random
/// contrast prompts. llm: calibrated over the contrast-set file. ensemble:
/// every configured model calibrated over the file, then combined.
enum class RewardMode { Raw, Rand, Llm, Ensemble };

inline constexpr std::array<RewardMode, 4> kAllRewardModes = {RewardMode::Raw, RewardMode::Rand, RewardMode::Llm,
                                                             RewardMode::Ensemble};

constexpr std::string_view to_string(RewardMode m) {
    switch (m) {
    case RewardMode::Raw: return "raw";
    case RewardMode::Rand: return "rand";
    case RewardMode::Llm: return "llm";
    case RewardMode::Ensemble: return "ensemble";
    }
    return "";
}

inline std::optional<RewardMode> parse_reward_mode(std::string_view text) {
    for (auto m : kAllRewardModes)
        if (to_string(m) == text) return m;
    return std::nullopt;
}

// Row labels of the ablation table.
constexpr std::string_view ablation_label(RewardMode m) {
    return m == RewardMode::Ensemble ? "llm+ensemble" : to_string(m);
}

// ---------------------------------------------------------------------------
// Run configuration

struct SimulationConfig {
    std::string method = "rwr"; // rwr | pg
    SweepOptions sweep;         // world, RWR and detection settings
    PgOptions pg;
};

struct RunConfig {
    std::optional<fs::path> prompts;
    std::optional<fs::path> images;
    std::optional<fs::path> labels;
    std::optional<fs::path> scores;
    std::optional<fs::path> contrasts;
    std::optional<fs::path> few_shot;      // defaults to the built-in store
    std::optional<fs::path> llm_responses; // replay file; else the live client
    std::optional<fs::path> checkpoints;

    CalibConfig calibration = default_calib_config();
    std::vector<std::size_t> k_values = kDefaultKValues;
    bool strict_benchmark = false;
    bool per_prompt_output = true;
    UnanimityMode unanimity = UnanimityMode::Consolidated;
    unsigned threads = 1;
    std::string baseline_model; // single-model modes; empty = first calibration model
    std::size_t random_m = 5;
    std::uint64_t seed = 0;
    std::vector<double> tune_taus = {0.05, 0.1, 0.25, 0.5, 1.0, 2.0, 4.0};
    std::vector<double> tune_lambdas = {0.0, 0.25, 0.5, 1.0, 2.0};
    std::optional<std::size_t> max_contrasts;
    LlmParams llm;
    SimulationConfig simulation;

    std::string single_model() const {
        if (!baseline_model.empty()) return baseline_model;
        if (calibration.models.empty()) fail(ErrorCode::ConfigError, "set 'baseline_model' or 'calibration.models'");
        return calibration.models.front();
    }

    bool has_dataset() const { return prompts && images && labels; }
};

namespace detail {

// The message of an Error without its leading "Code: ".
inline std::string message_of(const Error& e) {
    std::string what = e.what();
    const auto prefix = std::string(to_string(e.code())) + ": ";
    return what.starts_with(prefix) ? what.substr(prefix.size()) : what;
}

inline const json* field(const json& obj, const char* key) {
    auto it = obj.find(key);
    return it == obj.end() || it->is_null() ? nullptr : &*it;
}

inline double config_number(const json& v, const std::string& key) {
    if (!v.is_number()) fail(ErrorCode::ConfigError, "'" + key + "' must be a number");
    return v.get<double>();
}

inline std::uint64_t config_count(const json& v, const std::string& key) {
    if (!v.is_number_integer() || v.get<long long>() < 0)
        fail(ErrorCode::ConfigError, "'" + key + "' must be a non-negative integer");
    return v.get<std::uint64_t>();
}

inline bool config_bool(const json& v, const std::string& key) {
    if (!v.is_boolean()) fail(ErrorCode::ConfigError, "'" + key + "' must be true or false");
    return v.get<bool>();
}

inline std::string config_string(const json& v, const std::string& key) {
    if (!v.is_string()) fail(ErrorCode::ConfigError, "'" + key + "' must be a string");
    return v.get<std::string>();
}

inline std::vector<double> config_numbers(const json& v, const std::string& key) {
    if (!v.is_array()) fail(ErrorCode::ConfigError, "'" + key + "' must be an array of numbers");
    std::vector<double> out;
    for (const auto& x : v) out.push_back(config_number(x, key));
    return out;
}

inline json read_json_file(const fs::path& path) {
    auto in = open_input(path);
    json j = json::parse(in, nullptr, false);
    if (j.is_discarded()) fail(ErrorCode::ConfigError, "'" + path.string() + "' is not valid JSON");
    return j;
}

inline void reject_unknown_keys(const json& obj, std::initializer_list<std::string_view> known, const std::string& where) {
    for (const auto& [key, value] : obj.items())
        if (std::find(known.begin(), known.end(), key) == known.end())
            fail(ErrorCode::ConfigError, "unknown key '" + key + "'" + (where.empty() ? "" : " in " + where));
}

inline void read_simulation(const json& j, SimulationConfig& sim) {
    if (!j.is_object()) fail(ErrorCode::ConfigError, "'simulation' must be an object");
    reject_unknown_keys(j,
                        {"method", "universe_size", "misalignment", "seeds", "first_seed", "exploit_fraction",
                         "exploit_logit", "beta", "samples_per_round", "keep_top", "rounds", "step_size", "window",
                         "margin", "reg_weight", "batch", "steps"},
                        "simulation");
    auto& sw = sim.sweep;
    if (auto* v = field(j, "method")) {
        sim.method = config_string(*v, "simulation.method");
        if (sim.method != "rwr" && sim.method != "pg")
            fail(ErrorCode::ConfigError, "simulation.method must be 'rwr' or 'pg'");
    }
    if (auto* v = field(j, "universe_size")) sw.universe_size = config_count(*v, "simulation.universe_size");
    if (auto* v = field(j, "misalignment")) sw.misalignment = config_number(*v, "simulation.misalignment");
    if (auto* v = field(j, "seeds")) sw.seeds = config_count(*v, "simulation.seeds");
    if (auto* v = field(j, "first_seed")) sw.first_seed = config_count(*v, "simulation.first_seed");
    if (auto* v = field(j, "exploit_fraction")) sw.world.exploit_fraction = config_number(*v, "simulation.exploit_fraction");
    if (auto* v = field(j, "exploit_logit")) sw.world.exploit_logit = config_number(*v, "simulation.exploit_logit");
    if (auto* v = field(j, "beta")) sw.rwr.beta = config_number(*v, "simulation.beta");
    if (auto* v = field(j, "samples_per_round")) sw.rwr.samples_per_round = config_count(*v, "simulation.samples_per_round");
    if (auto* v = field(j, "keep_top")) sw.rwr.keep_top = config_count(*v, "simulation.keep_top");
    if (auto* v = field(j, "rounds")) sw.rwr.rounds = config_count(*v, "simulation.rounds");
    if (auto* v = field(j, "step_size")) {
        sw.rwr.step_size = config_number(*v, "simulation.step_size");
        sim.pg.step_size = sw.rwr.step_size;
    }
    if (auto* v = field(j, "window")) sw.window = config_count(*v, "simulation.window");
    if (auto* v = field(j, "margin")) sw.margin = config_number(*v, "simulation.margin");
    if (auto* v = field(j, "reg_weight")) sim.pg.reg_weight = config_number(*v, "simulation.reg_weight");
    if (auto* v = field(j, "batch")) sim.pg.batch = config_count(*v, "simulation.batch");
    if (auto* v = field(j, "steps")) sim.pg.steps = config_count(*v, "simulation.steps");
}

} // namespace detail

/// Parses a run configuration. Relative paths resolve against `base_dir`.
inline RunConfig run_config_from_json(const json& j, const fs::path& base_dir = {}) {
    using namespace detail;
    if (!j.is_object()) fail(ErrorCode::ConfigError, "run configuration must be a JSON object");
    reject_unknown_keys(j,
                        {"prompts", "images", "labels", "scores", "contrasts", "few_shot", "llm_responses",
                         "checkpoints", "calibration", "k_values", "strict_benchmark", "per_prompt_output",
                         "unanimity_mode", "threads", "baseline_model", "random_contrasts", "tune", "max_contrasts",
                         "llm", "simulation"},
                        "");
    RunConfig c;
    auto path = [&](const char* key, std::optional<fs::path>& out) {
        if (auto* v = field(j, key)) {
            fs::path p = config_string(*v, key);
            out = p.is_relative() && !base_dir.empty() ? base_dir / p : p;
        }
    };
    path("prompts", c.prompts);
    path("images", c.images);
    path("labels", c.labels);
    path("scores", c.scores);
    path("contrasts", c.contrasts);
    path("few_shot", c.few_shot);
    path("llm_responses", c.llm_responses);
    path("checkpoints", c.checkpoints);

    std::set<fs::path> seen;
    for (const auto* p : {&c.prompts, &c.images, &c.labels, &c.scores, &c.contrasts, &c.few_shot, &c.llm_responses,
                          &c.checkpoints})
        if (*p && !seen.insert(p->value().lexically_normal()).second)
            fail(ErrorCode::ConfigError, "path '" + p->value().string() + "' is used for two inputs");

    if (auto* v = field(j, "calibration")) {
        if (v->is_string()) {
            fs::path p = v->get<std::string>();
            if (p.is_relative() && !base_dir.empty()) p = base_dir / p;
            c.calibration = calib_config_from_json(read_json_file(p));
        } else {
            c.calibration = calib_config_from_json(*v);
        }
        if (c.calibration.models.empty()) c.calibration.models = default_calib_config().models;
    }
    if (auto* v = field(j, "k_values")) {
        if (!v->is_array() || v->empty()) fail(ErrorCode::ConfigError, "'k_values' must be a non-empty array");
        c.k_values.clear();
        for (const auto& k : *v) {
            auto n = config_count(k, "k_values");
            if (n == 0) fail(ErrorCode::ConfigError, "'k_values' entries must be >= 1");
            if (!c.k_values.empty() && n <= c.k_values.back())
                fail(ErrorCode::ConfigError, "'k_values' must be strictly ascending");
            c.k_values.push_back(n);
        }
    }
    if (auto* v = field(j, "strict_benchmark")) c.strict_benchmark = config_bool(*v, "strict_benchmark");
    if (auto* v = field(j, "per_prompt_output")) c.per_prompt_output = config_bool(*v, "per_prompt_output");
    if (auto* v = field(j, "unanimity_mode")) {
        auto m = parse_unanimity_mode(config_string(*v, "unanimity_mode"));
        if (!m) fail(ErrorCode::ConfigError, "unanimity_mode must be 'consolidated' or 'raw'");
        c.unanimity = *m;
    }
    if (auto* v = field(j, "threads")) {
        c.threads = static_cast<unsigned>(config_count(*v, "threads"));
        if (c.threads == 0) fail(ErrorCode::ConfigError, "'threads' must be >= 1");
    }
    if (auto* v = field(j, "baseline_model")) c.baseline_model = config_string(*v, "baseline_model");
    if (auto* v = field(j, "random_contrasts")) {
        if (!v->is_object()) fail(ErrorCode::ConfigError, "'random_contrasts' must be an object");
        reject_unknown_keys(*v, {"m", "seed"}, "random_contrasts");
        if (auto* m = field(*v, "m")) c.random_m = config_count(*m, "random_contrasts.m");
        if (auto* s = field(*v, "seed")) c.seed = config_count(*s, "random_contrasts.seed");
    }
    if (auto* v = field(j, "tune")) {
        if (!v->is_object()) fail(ErrorCode::ConfigError, "'tune' must be an object");
        reject_unknown_keys(*v, {"taus", "lambdas"}, "tune");
        if (auto* t = field(*v, "taus")) c.tune_taus = config_numbers(*t, "tune.taus");
        if (auto* l = field(*v, "lambdas")) c.tune_lambdas = config_numbers(*l, "tune.lambdas");
    }
    if (auto* v = field(j, "max_contrasts")) c.max_contrasts = config_count(*v, "max_contrasts");
    if (auto* v = field(j, "llm")) {
        if (!v->is_object()) fail(ErrorCode::ConfigError, "'llm' must be an object");
        reject_unknown_keys(*v, {"model", "temperature", "frequency_penalty"}, "llm");
        if (auto* m = field(*v, "model")) c.llm.model_name = config_string(*m, "llm.model");
        if (auto* t = field(*v, "temperature")) c.llm.temperature = config_number(*t, "llm.temperature");
        if (auto* f = field(*v, "frequency_penalty")) c.llm.frequency_penalty = config_number(*f, "llm.frequency_penalty");
    }
    if (auto* v = field(j, "simulation")) read_simulation(*v, c.simulation);
    return c;
}

inline RunConfig load_run_config(const fs::path& path) {
    return run_config_from_json(detail::read_json_file(path), path.parent_path());
}

// ---------------------------------------------------------------------------
// Input loading and reward construction

namespace detail {

inline const fs::path& require_path(const std::optional<fs::path>& p, const char* key) {
    if (!p) fail(ErrorCode::ConfigError, std::string("configuration needs '") + key + "'");
    return *p;
}

inline Dataset load_dataset(const RunConfig& cfg) {
    return load_benchmark(require_path(cfg.prompts, "prompts"), require_path(cfg.images, "images"),
                          require_path(cfg.labels, "labels"), LoadOptions{cfg.strict_benchmark});
}

inline Dataset subset(const Dataset& ds, std::optional<PromptSet> set) {
    if (!set) return ds;
    Dataset out;
    for (const auto& [pid, p] : ds.prompts) {
        if (p.set != *set) continue;
        out.prompts.emplace(pid, p);
        if (auto it = ds.index.find(pid); it != ds.index.end()) {
            out.index.emplace(pid, it->second);
            for (const auto& iid : it->second) out.images.emplace(iid, ds.images.at(iid));
        }
    }
    return out;
}

// Random contrast sets for every prompt; prompt i (ascending id) uses seed + i,
// so a prompt's set does not depend on which others are evaluated.
inline ContrastSets random_contrast_sets(const Dataset& ds, std::size_t m, std::uint64_t seed) {
    ContrastSets out;
    std::uint64_t i = 0;
    for (const auto& [pid, p] : ds.prompts) out[pid] = synth_random_contrasts(ds, pid, m, seed + i++);
    return out;
}

inline CalibConfig single_model_config(const RunConfig& cfg) {
    CalibConfig c = cfg.calibration;
    c.models = {cfg.single_model()};
    c.ensemble_mode = EnsembleMode::Single;
    for (auto& [set, o] : c.per_set_overrides) o.mode.reset();
    return c;
}

} // namespace detail

/// Everything a reward mode may need, loaded once.
struct RewardInputs {
    const RunConfig* config = nullptr;
    const Dataset* dataset = nullptr; // required for rand
    const ScoreTable* scores = nullptr;
    const ContrastSets* contrasts = nullptr; // required for llm and ensemble
};

inline RewardMap build_reward(const RewardInputs& in, RewardMode mode, std::span<const CalibrationCell> cells) {
    const RunConfig& cfg = *in.config;
    if (mode == RewardMode::Raw) {
        const auto model = cfg.single_model();
        RewardMap out;
        std::vector<Diagnostic> missing;
        for (const auto& cell : cells) {
            auto r = in.scores->find(model, cell.prompt_id, cell.image_id);
            if (!r)
                missing.push_back({ErrorCode::MissingReward, "", 0,
                                   "no " + model + " score for (" + cell.prompt_id + ", " + cell.image_id + ")"});
            else
                out[{cell.prompt_id, cell.image_id}] = *r;
        }
        if (!missing.empty()) throw IngestError(std::move(missing));
        return out;
    }
    if (mode == RewardMode::Rand) {
        if (!in.dataset) fail(ErrorCode::ConfigError, "random contrasts need the prompts/images/labels files");
        auto sets = detail::random_contrast_sets(*in.dataset, cfg.random_m, cfg.seed);
        return calibrate_matrix(*in.scores, sets, detail::single_model_config(cfg), cells).ensemble;
    }
    if (!in.contrasts) fail(ErrorCode::ConfigError, "configuration needs 'contrasts' for mode " + std::string(to_string(mode)));
    const CalibConfig c = mode == RewardMode::Llm ? detail::single_model_config(cfg) : cfg.calibration;
    return calibrate_matrix(*in.scores, *in.contrasts, c, cells).ensemble;
}

namespace detail {

inline std::vector<CalibrationCell> cells_of(const Dataset& ds, std::optional<PromptSet> only) {
    auto cells = dataset_cells(ds);
    if (only) std::erase_if(cells, [&](const CalibrationCell& c) { return c.set != only; });
    return cells;
}

struct Loaded {
    RunConfig config;
    std::optional<Dataset> dataset;
    std::optional<ScoreTable> scores;
    std::optional<ContrastSets> contrasts;

    RewardInputs inputs() const {
        return {&config, dataset ? &*dataset : nullptr, scores ? &*scores : nullptr,
                contrasts ? &*contrasts : nullptr};
    }
};

// Loads every input a command needs, collecting problems from all files.
inline void load_inputs(Loaded& l, bool need_dataset, bool need_scores, bool need_contrasts) {
    std::vector<Diagnostic> diags;
    auto attempt = [&](auto&& fn) {
        try {
            fn();
        } catch (const IngestError& e) {
            diags.insert(diags.end(), e.diagnostics().begin(), e.diagnostics().end());
        } catch (const Error& e) {
            diags.push_back({e.code(), "", 0, message_of(e)});
        }
    };
    if (need_dataset) attempt([&] { l.dataset = load_dataset(l.config); });
    if (need_scores) attempt([&] { l.scores = load_scores(require_path(l.config.scores, "scores")); });
    if (need_contrasts) attempt([&] { l.contrasts = load_contrast_sets(require_path(l.config.contrasts, "contrasts")); });
    if (!diags.empty()) throw IngestError(std::move(diags));
}

inline json cell_json(const CalibrationCell& cell) { return {{"prompt_id", cell.prompt_id}, {"image_id", cell.image_id}}; }

} // namespace detail

// ---------------------------------------------------------------------------
// Commands

struct CommonOptions {
    std::string config;
    std::string set;
    std::string mode = "ensemble";
    bool strict_benchmark = false;
    std::uint64_t seed = 0;
    bool seed_given = false;
    std::string out = ".";
};

struct CommandOptions {
    CommonOptions common;
    // synth-prompts
    std::string method = "rule";
    bool requests_only = false;
    std::vector<std::string> categories;
    // evaluate
    bool ablation = false;
    unsigned threads = 0;
    // best-of-n / select-checkpoint
    std::size_t top = 1;
    bool per_prompt = false;
    // simulate-overopt
    std::string sim_method;
    std::size_t sweep = 0;
    bool true_proxy = false;
    // heatmap
    std::string axis;
};

namespace detail {

inline RunConfig resolve_config(const CommandOptions& o, bool required = true) {
    RunConfig cfg;
    if (!o.common.config.empty())
        cfg = load_run_config(o.common.config);
    else if (required)
        fail(ErrorCode::ConfigError, "--config is required for this command");
    if (o.common.strict_benchmark) cfg.strict_benchmark = true;
    if (o.common.seed_given) cfg.seed = o.common.seed;
    if (o.threads > 0) cfg.threads = o.threads;
    return cfg;
}

inline std::optional<PromptSet> resolve_set(const CommandOptions& o) {
    if (o.common.set.empty()) return std::nullopt;
    auto s = parse_prompt_set(o.common.set);
    if (!s) fail(ErrorCode::ConfigError, "unknown set '" + o.common.set + "'");
    return s;
}

inline RewardMode resolve_mode(const CommandOptions& o) {
    auto m = parse_reward_mode(o.common.mode);
    if (!m) fail(ErrorCode::ConfigError, "unknown mode '" + o.common.mode + "'");
    return *m;
}

inline bool needs_contrasts(RewardMode m) { return m == RewardMode::Llm || m == RewardMode::Ensemble; }

inline std::string jsonl(const std::vector<json>& rows) {
    std::string out;
    for (const auto& r : rows) out += r.dump() + "\n";
    return out;
}

} // namespace detail

inline int cmd_synth_prompts(const CommandOptions& o, std::ostream& out) {
    detail::Loaded l{detail::resolve_config(o)};
    detail::load_inputs(l, true, false, false);
    const Dataset& ds = *l.dataset;
    const auto only = detail::resolve_set(o);
    const fs::path dir = o.common.out;

    std::vector<json> sets, prompts, requests;
    std::size_t skipped = 0;
    auto selected = [&](const PromptRecord& p) { return !only || p.set == *only; };

    if (o.method == "random") {
        auto all = detail::random_contrast_sets(ds, l.config.random_m, l.config.seed);
        for (const auto& [pid, cs] : all)
            if (selected(ds.prompts.at(pid))) sets.push_back(contrast_set_to_json(cs));
    } else if (o.method == "rule") {
        for (const auto& [pid, p] : ds.prompts) {
            if (!selected(p)) continue;
            if (p.set == PromptSet::Comprehensive) {
                ++skipped;
                continue;
            }
            auto synth = synth_rule_based(p);
            reuse_existing_ids(synth, ds);
            sets.push_back(contrast_set_to_json(synth.set));
            for (const auto& r : synth.prompts) prompts.push_back(prompt_record_to_json(r));
        }
    } else if (o.method == "llm") {
        const FewShotStore store = l.config.few_shot ? load_few_shot_store(*l.config.few_shot) : default_few_shot_store();
        std::optional<std::vector<Category>> cats;
        if (!o.categories.empty()) {
            cats.emplace();
            for (const auto& name : o.categories) {
                auto c = parse_category(name);
                if (!c) fail(ErrorCode::UnknownCategory, "unknown category '" + name + "'");
                cats->push_back(*c);
            }
        }
        std::unique_ptr<ChatClient> client;
        if (!o.requests_only) {
            if (l.config.llm_responses)
                client = std::make_unique<ReplayChatClient>(ReplayChatClient::load(*l.config.llm_responses));
            else if (auto ep = llm_endpoint_from_env())
                client = std::make_unique<HttpChatClient>(*ep);
            else
                fail(ErrorCode::ConfigError, std::string("no LLM client: set 'llm_responses' or ") + kLlmEndpointEnv);
        }
        std::vector<Diagnostic> problems;
        for (const auto& [pid, p] : ds.prompts) {
            if (!selected(p)) continue;
            try {
                if (o.requests_only) {
                    auto c = cats ? *cats : category_allocation(p.text);
                    auto req = build_llm_request(p.text, std::span<const Category>(c), store, l.config.llm);
                    json row = req.to_chat_json();
                    row["prompt_id"] = pid;
                    requests.push_back(std::move(row));
                    continue;
                }
                auto synth = synth_llm_contrasts(p, store, *client, cats, l.config.max_contrasts, l.config.llm);
                reuse_existing_ids(synth, ds);
                sets.push_back(contrast_set_to_json(synth.set));
                for (const auto& r : synth.prompts) prompts.push_back(prompt_record_to_json(r));
            } catch (const Error& e) {
                problems.push_back({e.code(), "", 0, "prompt '" + pid + "': " + detail::message_of(e)});
            }
        }
        if (!problems.empty()) throw IngestError(std::move(problems));
    } else {
        fail(ErrorCode::ConfigError, "unknown method '" + o.method + "' (rule, random, llm)");
    }

    ReportBundle bundle;
    if (o.requests_only) {
        bundle.add(dir / "llm_requests.jsonl", detail::jsonl(requests));
    } else {
        bundle.add(dir / "contrasts.jsonl", detail::jsonl(sets));
        if (o.method != "random") bundle.add(dir / "contrast_prompts.jsonl", detail::jsonl(prompts));
    }
    bundle.commit();
    if (o.requests_only)
        out << "wrote " << requests.size() << " requests";
    else
        out << "wrote " << sets.size() << " contrast sets, " << prompts.size() << " new prompts";
    if (skipped) out << "; skipped " << skipped << " comprehensive prompts (use --method llm)";
    out << "\n";
    return 0;
}

inline int cmd_calibrate(const CommandOptions& o, std::ostream& out) {
    const auto mode = detail::resolve_mode(o);
    detail::Loaded l{detail::resolve_config(o)};
    detail::load_inputs(l, true, true, detail::needs_contrasts(mode));
    const auto cells = detail::cells_of(*l.dataset, detail::resolve_set(o));

    std::vector<json> rows;
    if (mode == RewardMode::Raw) {
        auto reward = build_reward(l.inputs(), mode, cells);
        for (const auto& c : cells) {
            json row = detail::cell_json(c);
            row["reward"] = reward.at({c.prompt_id, c.image_id});
            rows.push_back(std::move(row));
        }
    } else {
        CalibratedMatrix m;
        if (mode == RewardMode::Ensemble) {
            m = calibrate_matrix(*l.scores, *l.contrasts, l.config.calibration, cells);
        } else {
            auto sets = mode == RewardMode::Rand
                            ? detail::random_contrast_sets(*l.dataset, l.config.random_m, l.config.seed)
                            : *l.contrasts;
            m = calibrate_matrix(*l.scores, sets, detail::single_model_config(l.config), cells);
        }
        for (const auto& c : cells) {
            json per = json::object();
            for (const auto& model : m.models) per[model] = m.per_model.at(model).at({c.prompt_id, c.image_id});
            json row = detail::cell_json(c);
            row["calibrated"] = per;
            row["reward"] = m.ensemble.at({c.prompt_id, c.image_id});
            rows.push_back(std::move(row));
        }
    }
    std::sort(rows.begin(), rows.end(), [](const json& a, const json& b) {
        return std::tie(a["prompt_id"].get_ref<const std::string&>(), a["image_id"].get_ref<const std::string&>()) <
               std::tie(b["prompt_id"].get_ref<const std::string&>(), b["image_id"].get_ref<const std::string&>());
    });
    write_file_atomic(fs::path(o.common.out) / "calibrated.jsonl", detail::jsonl(rows));
    out << "calibrated " << rows.size() << " images (" << to_string(mode) << ")\n";
    return 0;
}

inline int cmd_evaluate(const CommandOptions& o, std::ostream& out) {
    const auto mode = detail::resolve_mode(o);
    detail::Loaded l{detail::resolve_config(o)};
    const bool contrasts = o.ablation || detail::needs_contrasts(mode);
    detail::load_inputs(l, true, true, contrasts);
    const auto only = detail::resolve_set(o);
    const auto cells = detail::cells_of(*l.dataset, only);

    EvalOptions eo;
    eo.k_values = l.config.k_values;
    eo.unanimity = l.config.unanimity;
    eo.only_set = only;
    eo.threads = l.config.threads;
    const fs::path dir = o.common.out;

    ReportBundle bundle;
    if (o.ablation) {
        std::vector<std::pair<std::string, Evaluation>> runs;
        for (auto m : kAllRewardModes)
            runs.emplace_back(std::string(ablation_label(m)), evaluate(*l.dataset, build_reward(l.inputs(), m, cells), eo));
        bundle.add(dir / "ablation.csv", ablation_csv(runs, l.config.k_values));
        bundle.commit();
        out << "wrote ablation over " << runs.size() << " modes\n";
        return 0;
    }
    auto ev = evaluate(*l.dataset, build_reward(l.inputs(), mode, cells), eo);
    bundle.add(dir / "summary.csv", summary_csv(ev, l.config.k_values));
    if (l.config.per_prompt_output) bundle.add(dir / "per_prompt.csv", per_prompt_csv(ev, l.config.k_values));
    bundle.commit();
    out << "evaluated " << ev.prompts.size() << " prompts, excluded " << ev.excluded.size() << " ("
        << to_string(mode) << ")\n";
    return 0;
}

inline int cmd_best_of_n(const CommandOptions& o, std::ostream& out) {
    const auto mode = detail::resolve_mode(o);
    detail::Loaded l{detail::resolve_config(o)};
    const bool with_dataset = l.config.has_dataset() || mode == RewardMode::Rand;
    detail::load_inputs(l, with_dataset, true, detail::needs_contrasts(mode));
    const auto only = detail::resolve_set(o);

    // Candidates per prompt: the dataset's images, or every image the
    // scores file pairs with that prompt.
    std::map<std::string, std::vector<std::string>> candidates;
    std::vector<CalibrationCell> cells;
    if (l.dataset) {
        cells = detail::cells_of(*l.dataset, only);
    } else {
        if (only) fail(ErrorCode::ConfigError, "--set needs the prompts/images/labels files");
        if (mode != RewardMode::Raw) fail(ErrorCode::ConfigError, "calibrated modes need the prompts/images/labels files");
        const auto model = l.config.single_model();
        std::set<std::pair<std::string, std::string>> seen;
        for (const auto& r : l.scores->records())
            if (r.model == model && seen.insert({r.prompt_id, r.image_id}).second)
                cells.push_back({r.prompt_id, r.image_id, std::nullopt});
    }
    for (const auto& c : cells) candidates[c.prompt_id].push_back(c.image_id);
    const auto reward = build_reward(l.inputs(), mode, cells);

    std::string csv = csv_row({"prompt_id", "rank", "image_id", "reward"});
    for (const auto& [pid, ids] : candidates) {
        std::vector<double> scores;
        for (const auto& iid : ids) scores.push_back(reward.at({pid, iid}));
        const std::size_t k = std::min(o.top, ids.size());
        auto best = top_k(scores, k);
        for (std::size_t r = 0; r < best.size(); ++r)
            csv += csv_row({pid, std::to_string(r + 1), ids[best[r]], format_number(scores[best[r]])});
    }
    write_file_atomic(fs::path(o.common.out) / "best_of_n.csv", csv);
    out << "selected top " << o.top << " for " << candidates.size() << " prompts\n";
    return 0;
}

inline int cmd_select_checkpoint(const CommandOptions& o, std::ostream& out) {
    const auto mode = detail::resolve_mode(o);
    detail::Loaded l{detail::resolve_config(o)};
    detail::load_inputs(l, l.config.has_dataset() || mode == RewardMode::Rand, true, detail::needs_contrasts(mode));

    // Manifest lines: {"image_id", "prompt_id", "checkpoint": int|null, "seed": int|null}.
    const auto& manifest = detail::require_path(l.config.checkpoints, "checkpoints");
    struct Entry {
        std::string image_id, prompt_id;
        std::optional<long long> checkpoint, seed;
    };
    std::vector<Entry> entries;
    std::vector<Diagnostic> diags;
    for_each_jsonl(manifest, diags, [&](std::size_t line, const json& rec) {
        Entry e;
        if (!read_string(rec, "image_id", e.image_id) || !read_string(rec, "prompt_id", e.prompt_id)) {
            diags.push_back({ErrorCode::MalformedRecord, manifest.string(), line, "needs 'image_id' and 'prompt_id'"});
            return;
        }
        for (auto [key, slot] : {std::pair{"checkpoint", &e.checkpoint}, std::pair{"seed", &e.seed}}) {
            auto it = rec.find(key);
            if (it == rec.end() || it->is_null()) continue;
            if (!it->is_number_integer()) {
                diags.push_back({ErrorCode::MalformedRecord, manifest.string(), line,
                                 std::string("'") + key + "' must be an integer or null"});
                return;
            }
            *slot = it->get<long long>();
        }
        entries.push_back(std::move(e));
    });
    if (!diags.empty()) throw IngestError(std::move(diags));

    std::vector<CalibrationCell> cells;
    for (const auto& e : entries) {
        std::optional<PromptSet> set;
        if (l.dataset)
            if (auto it = l.dataset->prompts.find(e.prompt_id); it != l.dataset->prompts.end()) set = it->second.set;
        cells.push_back({e.prompt_id, e.image_id, set});
    }
    const auto reward = build_reward(l.inputs(), mode, cells);
    std::vector<CheckpointImage> images;
    for (const auto& e : entries)
        images.push_back({e.prompt_id, e.checkpoint, e.seed, reward.at({e.prompt_id, e.image_id})});
    auto stats = count_wins(images, o.per_prompt ? WinPopulation::PerPrompt : WinPopulation::Pooled);
    const auto chosen = select_checkpoint(stats);

    std::string csv = csv_row({"checkpoint", "win_count", "selected"});
    for (const auto& s : stats)
        csv += csv_row({std::to_string(s.checkpoint_index), std::to_string(s.win_count),
                        s.checkpoint_index == chosen ? "1" : "0"});
    write_file_atomic(fs::path(o.common.out) / "checkpoints.csv", csv);
    out << "selected checkpoint " << chosen << "\n";
    return 0;
}

inline int cmd_tune(const CommandOptions& o, std::ostream& out) {
    detail::Loaded l{detail::resolve_config(o)};
    detail::load_inputs(l, true, true, true);
    const auto ds = detail::subset(*l.dataset, detail::resolve_set(o));
    const auto& cfg = l.config;
    auto result = tune_grid(ds, *l.scores, *l.contrasts, cfg.calibration, cfg.tune_taus, cfg.tune_lambdas,
                            cfg.k_values, cfg.unanimity);

    std::string csv = csv_row({"tau", "lambda", "objective"});
    std::size_t i = 0;
    for (double t : cfg.tune_taus)
        for (double lam : cfg.tune_lambdas)
            csv += csv_row({format_number(t), format_number(lam), format_number(result.objectives[i++])});
    CalibConfig tuned = cfg.calibration;
    tuned.tau = result.tau;
    tuned.lambda = result.lambda;
    for (auto& [set, ov] : tuned.per_set_overrides) {
        ov.tau.reset();
        ov.lambda.reset();
    }
    ReportBundle bundle;
    bundle.add(fs::path(o.common.out) / "tune.csv", csv);
    bundle.add(fs::path(o.common.out) / "tuned_calibration.json", calib_config_to_json(tuned).dump(2) + "\n");
    bundle.commit();
    out << "tau=" << format_number(result.tau) << " lambda=" << format_number(result.lambda)
        << " objective=" << format_number(result.objective) << "\n";
    return 0;
}

inline int cmd_simulate_overopt(const CommandOptions& o, std::ostream& out) {
    RunConfig cfg = detail::resolve_config(o, /*required=*/false);
    SimulationConfig sim = cfg.simulation;
    if (!o.sim_method.empty()) sim.method = o.sim_method;
    if (sim.method != "rwr" && sim.method != "pg") fail(ErrorCode::ConfigError, "--method must be 'rwr' or 'pg'");
    auto& sw = sim.sweep;
    if (o.true_proxy) sw.misalignment = 1.0;
    const std::uint64_t seed = o.common.seed_given ? o.common.seed : sw.first_seed;
    const fs::path dir = o.common.out;

    if (o.sweep > 0) {
        if (sim.method != "rwr") fail(ErrorCode::ConfigError, "--sweep runs the rwr method only");
        sw.seeds = o.sweep;
        sw.first_seed = seed;
        auto rows = overopt_sweep(sw);
        std::string csv = csv_row({"seed", "achieved_spearman", "peak_step", "true_drop", "declined"});
        for (const auto& r : rows)
            csv += csv_row({std::to_string(r.seed), format_number(r.achieved_spearman), std::to_string(r.report.peak_step),
                            format_number(r.report.true_drop), r.report.declined ? "1" : "0"});
        write_file_atomic(dir / "sweep.csv", csv);
        out << "declined in " << format_number(100.0 * decline_rate(rows)) << "% of " << rows.size() << " seeds\n";
        return 0;
    }

    auto world = make_toy_world(sw.universe_size, sw.misalignment, seed, sw.world);
    Trajectory traj;
    if (sim.method == "rwr") {
        RwrOptions r = sw.rwr;
        r.seed = 1000 + seed;
        traj = run_rwr(world, r);
    } else {
        PgOptions p = sim.pg;
        p.seed = 1000 + seed;
        traj = run_pg(world, p);
    }
    write_file_atomic(dir / "trajectory.csv", trajectory_csv(traj));
    out << "spearman(proxy, true)=" << format_number(world.achieved_spearman);
    if (traj.points.size() > sw.window) {
        auto rep = detect_overopt(traj, sw.window, sw.margin);
        out << " peak_step=" << rep.peak_step << " true_drop=" << format_number(rep.true_drop)
            << " declined=" << (rep.declined ? "true" : "false");
    }
    out << "\n";
    return 0;
}

inline int cmd_heatmap(const CommandOptions& o, std::ostream& out) {
    auto axis = parse_heatmap_axis(o.axis);
    if (!axis) fail(ErrorCode::ConfigError, "--axis must be 'composition' or 'counting'");
    const auto mode = detail::resolve_mode(o);
    detail::Loaded l{detail::resolve_config(o)};
    detail::load_inputs(l, true, true, detail::needs_contrasts(mode));
    const PromptSet set = *axis == HeatmapAxis::CompositionPairs ? PromptSet::Composition : PromptSet::Counting;
    const auto cells = detail::cells_of(*l.dataset, set);

    EvalOptions eo;
    eo.k_values = l.config.k_values;
    eo.unanimity = l.config.unanimity;
    eo.only_set = set;
    eo.threads = l.config.threads;
    auto ev = evaluate(*l.dataset, build_reward(l.inputs(), mode, cells), eo);
    const auto name = *axis == HeatmapAxis::CompositionPairs ? "heatmap_composition.csv" : "heatmap_counting.csv";
    write_file_atomic(fs::path(o.common.out) / name, heatmap_csv(*l.dataset, ev, *axis));
    out << "wrote " << name << "\n";
    return 0;
}

// ---------------------------------------------------------------------------
// Entry point

namespace detail {

inline void report_error(std::ostream& err, const std::exception& e) {
    if (const auto* ing = dynamic_cast<const IngestError*>(&e)) {
        for (const auto& d : ing->diagnostics()) err << "error: " << d.to_string() << "\n";
    } else if (dynamic_cast<const Error*>(&e)) {
        err << "error: " << e.what() << "\n";
    } else if (dynamic_cast<const json::exception*>(&e)) {
        err << "error: " << to_string(ErrorCode::ConfigError) << ": " << e.what() << "\n";
    } else {
        err << "error: " << e.what() << "\n";
    }
}

} // namespace detail

inline int run_cli(int argc, const char* const* argv, std::ostream& out = std::cout, std::ostream& err = std::cerr) {
    CLI::App app{"Calibrated reward evaluation toolkit", "rewardcal"};
    app.require_subcommand(1, 1);
    CommandOptions o;

    auto common = [&](CLI::App* sub, bool with_mode) {
        sub->add_option("--config", o.common.config, "run configuration (JSON)");
        sub->add_option("--set", o.common.set, "restrict to one prompt set")
            ->check(CLI::IsMember({"comprehensive", "counting", "composition"}));
        if (with_mode)
            sub->add_option("--mode", o.common.mode, "reward mode")
                ->capture_default_str()
                ->check(CLI::IsMember({"raw", "rand", "llm", "ensemble"}));
        sub->add_flag("--strict-benchmark", o.common.strict_benchmark, "require 50 images per prompt");
        sub->add_option("--seed", o.common.seed, "random seed")->each([&](const std::string&) { o.common.seed_given = true; });
        sub->add_option("--out", o.common.out, "output directory")->capture_default_str();
    };

    auto* synth = app.add_subcommand("synth-prompts", "build contrast prompt sets");
    common(synth, false);
    synth->add_option("--method", o.method, "rule | random | llm")->capture_default_str()->check(CLI::IsMember({"rule", "random", "llm"}));
    synth->add_flag("--requests-only", o.requests_only, "write LLM requests instead of calling the model");
    synth->add_option("--categories", o.categories, "few-shot categories (default: keyword allocation)")->delimiter(',');

    auto* calibrate = app.add_subcommand("calibrate", "write calibrated rewards");
    common(calibrate, true);

    auto* evaluate_cmd = app.add_subcommand("evaluate", "alignment metrics per prompt and per set");
    common(evaluate_cmd, true);
    evaluate_cmd->add_flag("--ablation", o.ablation, "one summary block per reward mode");
    evaluate_cmd->add_option("--threads", o.threads, "worker threads");

    auto* bon = app.add_subcommand("best-of-n", "highest-reward images per prompt");
    common(bon, true);
    bon->add_option("--top", o.top, "images kept per prompt")->capture_default_str()->check(CLI::PositiveNumber);

    auto* ckpt = app.add_subcommand("select-checkpoint", "earliest checkpoint with the most wins");
    common(ckpt, true);
    ckpt->add_flag("--per-prompt", o.per_prompt, "compare against per-prompt baseline medians");

    auto* tune = app.add_subcommand("tune", "grid-search tau and lambda");
    common(tune, false);

    auto* sim = app.add_subcommand("simulate-overopt", "toy reward-overoptimization runs");
    common(sim, false);
    sim->add_option("--method", o.sim_method, "rwr | pg")->check(CLI::IsMember({"rwr", "pg"}));
    sim->add_option("--sweep", o.sweep, "number of seeds to sweep (rwr)");
    sim->add_flag("--true-proxy", o.true_proxy, "optimize the true reward itself");

    auto* heat = app.add_subcommand("heatmap", "per-prompt AUROC grid");
    common(heat, true);
    heat->add_option("--axis", o.axis, "composition | counting")->required()->check(CLI::IsMember({"composition", "counting"}));

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e, out, err);
        return code == 0 ? 0 : 1;
    }

    try {
        if (synth->parsed()) return cmd_synth_prompts(o, out);
        if (calibrate->parsed()) return cmd_calibrate(o, out);
        if (evaluate_cmd->parsed()) return cmd_evaluate(o, out);
        if (bon->parsed()) return cmd_best_of_n(o, out);
        if (ckpt->parsed()) return cmd_select_checkpoint(o, out);
        if (tune->parsed()) return cmd_tune(o, out);
        if (sim->parsed()) return cmd_simulate_overopt(o, out);
        if (heat->parsed()) return cmd_heatmap(o, out);
    } catch (const std::exception& e) {
        detail::report_error(err, e);
        return 1;
    }
    return 1;
}

} // namespace rewardcal
