// Copyright (C) 2026 The rewardcal Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

// Contrastive prompt synthesis: template rules for counting and composition
// prompts, a uniformly random baseline, and an LLM route (request builder,
// response parser, and an abstract chat-completion client).

#include <algorithm>
#include <array>
#include <cctype>
#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <optional>
#include <random>
#include <regex>
#include <set>
#include <span>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "rewardcal/calib.hpp"
#include "rewardcal/datamodel.hpp"
#include "rewardcal/error.hpp"
#include "rewardcal/fewshot.hpp"
#include "rewardcal/jsonl.hpp"

namespace rewardcal {

// ---------------------------------------------------------------------------
// English helpers for the benchmark object classes

/// The 25 object classes of the synthetic prompt sets, alphabetical.
inline const std::vector<std::string>& benchmark_object_classes() {
    static const std::vector<std::string> classes = {
        "airplane", "apple", "automobile", "bird",  "book",     "cake",     "carrot",     "cat",     "chair",
        "cup",      "deer",  "dog",        "fork",  "frog",     "horse",    "laptop",     "microwave", "orange",
        "ship",     "suitcase", "teddy bear", "toaster", "truck", "umbrella", "vase"};
    return classes;
}

inline std::string pluralize(std::string_view noun) {
    static const std::map<std::string, std::string, std::less<>> irregular = {
        {"deer", "deer"},   {"sheep", "sheep"},   {"fish", "fish"},     {"moose", "moose"},
        {"mouse", "mice"},  {"person", "people"}, {"child", "children"}, {"knife", "knives"},
        {"bus", "buses"},   {"glass", "glasses"}, {"box", "boxes"},     {"bench", "benches"},
        {"sandwich", "sandwiches"}, {"giraffe", "giraffes"}};
    if (auto it = irregular.find(noun); it != irregular.end()) return it->second;
    // Multi-word classes pluralize their head noun ("teddy bear" -> "teddy bears").
    if (auto sp = noun.rfind(' '); sp != std::string_view::npos)
        return std::string(noun.substr(0, sp + 1)) + pluralize(noun.substr(sp + 1));
    return std::string(noun) + "s";
}

inline std::string_view indefinite_article(std::string_view word) {
    if (word.empty()) return "a";
    switch (std::tolower(static_cast<unsigned char>(word.front()))) {
    case 'a': case 'e': case 'i': case 'o': case 'u': return "an";
    default: return "a";
    }
}

inline std::string with_article(std::string_view phrase) {
    return std::string(indefinite_article(phrase)) + " " + std::string(phrase);
}

inline std::string_view count_word(int n) {
    static constexpr std::array<std::string_view, 7> words = {"zero", "one", "two", "three", "four", "five", "six"};
    if (n < 1 || n > 6) fail(ErrorCode::MalformedRecord, "count must be in [1,6]");
    return words[static_cast<std::size_t>(n)];
}

inline constexpr std::string_view kRealisticPhotoPrefix = "a realistic photo of ";

/// "a realistic photo of three dogs", "a realistic photo of one dog".
inline std::string render_counting_prompt(int count, std::string_view object_class) {
    std::string noun = count == 1 ? std::string(object_class) : pluralize(object_class);
    return std::string(kRealisticPhotoPrefix) + std::string(count_word(count)) + " " + noun;
}

/// "a realistic photo of a bird and an umbrella".
inline std::string render_composition_prompt(std::string_view a, std::string_view b) {
    return std::string(kRealisticPhotoPrefix) + with_article(a) + " and " + with_article(b);
}

// ---------------------------------------------------------------------------
// Rule-based synthesis

/// A contrast set together with the prompt records it references.
struct SynthesizedContrasts {
    ContrastSet set;
    std::vector<PromptRecord> prompts;
};

namespace detail {

inline PromptRecord contrast_record(const PromptRecord& base, std::string id, std::string text) {
    PromptRecord p;
    p.id = std::move(id);
    p.text = std::move(text);
    p.set = base.set;
    p.subcategory = "contrast";
    return p;
}

inline SynthesizedContrasts bundle(const PromptRecord& base, std::vector<PromptRecord> prompts) {
    SynthesizedContrasts out;
    out.set.base_prompt_id = base.id;
    for (const auto& p : prompts) out.set.contrast_prompt_ids.push_back(p.id);
    out.prompts = std::move(prompts);
    return out;
}

} // namespace detail

/// The five other counts (1..6) of the same object class.
inline std::vector<PromptRecord> synth_counting_contrasts(const PromptRecord& prompt) {
    if (prompt.set != PromptSet::Counting)
        fail(ErrorCode::WrongSet, "prompt '" + prompt.id + "' is not in the counting set");
    if (prompt.object_classes.size() != 1 || !prompt.count)
        fail(ErrorCode::MalformedRecord, "counting prompt '" + prompt.id + "' needs one class and a count");
    const auto& cls = prompt.object_classes.front();
    std::vector<PromptRecord> out;
    for (int n = 1; n <= 6; ++n) {
        if (n == *prompt.count) continue;
        auto rec = detail::contrast_record(prompt, prompt.id + "~count" + std::to_string(n),
                                           render_counting_prompt(n, cls));
        rec.object_classes = {cls};
        rec.count = n;
        out.push_back(std::move(rec));
    }
    return out;
}

/// "a A", "a A and two Bs", "a A-like B", "a B-like A".
inline std::vector<PromptRecord> synth_composition_contrasts(const PromptRecord& prompt) {
    if (prompt.set != PromptSet::Composition)
        fail(ErrorCode::WrongSet, "prompt '" + prompt.id + "' is not in the composition set");
    if (prompt.object_classes.size() != 2)
        fail(ErrorCode::MalformedRecord, "composition prompt '" + prompt.id + "' needs two classes");
    const auto& a = prompt.object_classes[0];
    const auto& b = prompt.object_classes[1];
    const std::array<std::string, 4> texts = {
        with_article(a),
        with_article(a) + " and two " + pluralize(b),
        with_article(a + "-like " + b),
        with_article(b + "-like " + a),
    };
    std::vector<PromptRecord> out;
    for (std::size_t i = 0; i < texts.size(); ++i) {
        auto rec = detail::contrast_record(prompt, prompt.id + "~comp" + std::to_string(i + 1), texts[i]);
        rec.object_classes = i == 0 ? std::vector<std::string>{a} : std::vector<std::string>{a, b};
        out.push_back(std::move(rec));
    }
    return out;
}

inline SynthesizedContrasts synth_rule_based(const PromptRecord& prompt) {
    switch (prompt.set) {
    case PromptSet::Counting: return detail::bundle(prompt, synth_counting_contrasts(prompt));
    case PromptSet::Composition: return detail::bundle(prompt, synth_composition_contrasts(prompt));
    default: fail(ErrorCode::WrongSet, "no rule-based synthesis for set '" + std::string(to_string(prompt.set)) + "'");
    }
}

/// `m` distinct other prompts of `ds`, uniform without replacement, fixed by `seed`.
inline ContrastSet synth_random_contrasts(const Dataset& ds, const std::string& base, std::size_t m,
                                          std::uint64_t seed) {
    if (!ds.prompts.contains(base)) fail(ErrorCode::MissingReference, "unknown prompt '" + base + "'");
    std::vector<std::string> others;
    others.reserve(ds.prompts.size());
    for (const auto& [pid, p] : ds.prompts)
        if (pid != base) others.push_back(pid);
    if (m > others.size())
        fail(ErrorCode::InsufficientPrompts,
             "requested " + std::to_string(m) + " contrasts but only " + std::to_string(others.size()) + " other prompts");
    ContrastSet cs;
    cs.base_prompt_id = base;
    std::mt19937_64 rng(seed);
    std::sample(others.begin(), others.end(), std::back_inserter(cs.contrast_prompt_ids), m, rng);
    return cs;
}

/// Replaces synthesized prompt ids by the id of an existing prompt with the
/// same text, so cross scores are shared with benchmark prompts.
inline void reuse_existing_ids(SynthesizedContrasts& synth, const Dataset& ds) {
    std::map<std::string, std::string> by_text;
    for (const auto& [pid, p] : ds.prompts) by_text.emplace(p.text, pid);
    std::vector<PromptRecord> fresh;
    for (std::size_t i = 0; i < synth.prompts.size(); ++i) {
        if (auto it = by_text.find(synth.prompts[i].text); it != by_text.end()) {
            synth.set.contrast_prompt_ids[i] = it->second;
        } else {
            fresh.push_back(synth.prompts[i]);
        }
    }
    synth.prompts = std::move(fresh);
}

// ---------------------------------------------------------------------------
// LLM route

inline constexpr std::string_view kContrastPreamble =
    "Create captions that are different from the original input used for the text-to-image generation model, "
    "referencing the provided failure cases. The new captions should offer perspectives that are distinct from the "
    "original context of the images. Ensure that each contrasting caption provides a distinct perspective, while "
    "maintaining the integrity of the image's subject matters. Let's think step by step.";

inline constexpr std::string_view kDefaultLlmModel = "gpt-4-0613";

struct LlmParams {
    double temperature = 0.0;
    double frequency_penalty = 0.2;
    std::string model_name = std::string(kDefaultLlmModel);

    bool operator==(const LlmParams&) const = default;
};

struct SynthRequest {
    std::string system_text;
    std::string user_text;
    LlmParams params;

    bool operator==(const SynthRequest&) const = default;

    /// OpenAI-style chat-completion body.
    json to_chat_json() const {
        return json{{"model", params.model_name},
                    {"messages",
                     json::array({json{{"role", "system"}, {"content", system_text}},
                                  json{{"role", "user"}, {"content", user_text}}})},
                    {"temperature", params.temperature},
                    {"frequency_penalty", params.frequency_penalty}};
    }
};

/// The few-shot block for one category:
///
///     colors[
///     Original prompt:<prompt>
///     Contrasting captions:1.<caption>
///     2.<caption>
///     ]
inline std::string few_shot_block(Category category, std::span<const FewShotExample> examples) {
    std::string out(to_string(category));
    out += "[\n";
    for (const auto& ex : examples) {
        out += "Original prompt:" + ex.original_prompt + "\n";
        out += "Contrasting captions:";
        for (std::size_t i = 0; i < ex.proper_candidates.size(); ++i)
            out += std::to_string(i + 1) + "." + ex.proper_candidates[i] + "\n";
    }
    out += "]\n";
    return out;
}

inline SynthRequest build_llm_request(std::string_view prompt, std::span<const Category> categories,
                                      const FewShotStore& store, LlmParams params = {}) {
    if (categories.empty()) fail(ErrorCode::EmptyCategories, "at least one category is required");
    if (params.temperature < 0.0) fail(ErrorCode::ConfigError, "temperature must be >= 0");
    SynthRequest req;
    req.system_text = std::string(kContrastPreamble);
    std::set<Category> seen;
    for (Category c : categories) {
        if (!seen.insert(c).second) continue;
        auto it = store.find(c);
        if (it == store.end() || it->second.empty())
            fail(ErrorCode::UnknownCategory, "no few-shot examples for category '" + std::string(to_string(c)) + "'");
        req.system_text += few_shot_block(c, it->second);
    }
    req.user_text = std::string(prompt);
    req.params = std::move(params);
    return req;
}

inline SynthRequest build_llm_request(std::string_view prompt, std::span<const std::string> category_names,
                                      const FewShotStore& store, LlmParams params = {}) {
    std::vector<Category> cats;
    for (const auto& name : category_names) {
        auto c = parse_category(name);
        if (!c) fail(ErrorCode::UnknownCategory, "unknown category '" + name + "'");
        cats.push_back(*c);
    }
    return build_llm_request(prompt, std::span<const Category>(cats), store, std::move(params));
}

namespace detail {

inline std::string trim(std::string_view s) {
    const auto* ws = " \t\r\n";
    auto b = s.find_first_not_of(ws);
    if (b == std::string_view::npos) return {};
    auto e = s.find_last_not_of(ws);
    return std::string(s.substr(b, e - b + 1));
}

inline std::string strip_quotes(std::string s) {
    static const std::array<std::pair<std::string_view, std::string_view>, 3> pairs = {
        {{"\"", "\""}, {"'", "'"}, {"“", "”"}}};
    for (const auto& [open, close] : pairs) {
        if (s.size() >= open.size() + close.size() && s.starts_with(open) && s.ends_with(close)) {
            s = trim(s.substr(open.size(), s.size() - open.size() - close.size()));
            break;
        }
    }
    return s;
}

} // namespace detail

/// Captions from an LLM reply: a JSON-style list of strings, or a numbered
/// (or bulleted) list. Enumeration markers and enclosing quotes are removed;
/// empty lines, repeats and the base prompt itself are dropped.
inline std::vector<std::string> parse_llm_response(std::string_view text, std::string_view base_prompt = {}) {
    const std::string body = detail::trim(text);
    if (body.empty()) fail(ErrorCode::EmptyResponse, "empty LLM response");

    std::vector<std::string> raw;
    if (body.front() == '[') {
        json arr = json::parse(body, nullptr, false);
        if (!arr.is_discarded() && arr.is_array()) {
            for (const auto& v : arr)
                if (v.is_string()) raw.push_back(v.get<std::string>());
        } else {
            static const std::regex quoted("\"([^\"]*)\"");
            for (std::sregex_iterator it(body.begin(), body.end(), quoted), end; it != end; ++it)
                raw.push_back((*it)[1].str());
        }
    } else {
        static const std::regex numbered(R"(^\s*\d+\s*[.)]\s*(.*)$)");
        static const std::regex bulleted(R"(^\s*(?:[-*]|\xE2\x80\xA2)\s+(.*)$)");
        std::vector<std::string> marked, plain;
        std::istringstream lines(body);
        std::string line;
        while (std::getline(lines, line)) {
            std::string_view view(line);
            constexpr std::string_view header = "Contrasting captions:";
            if (auto pos = view.find(header); pos != std::string_view::npos) view = view.substr(pos + header.size());
            std::string l(view);
            std::smatch m;
            if (std::regex_match(l, m, numbered) || std::regex_match(l, m, bulleted)) {
                marked.push_back(m[1].str());
            } else {
                plain.push_back(l);
            }
        }
        raw = marked.empty() ? plain : marked;
    }

    std::vector<std::string> out;
    std::set<std::string> seen;
    const std::string base = detail::trim(base_prompt);
    for (auto& r : raw) {
        std::string c = detail::strip_quotes(detail::trim(r));
        if (c.empty() || c == base) continue;
        if (seen.insert(c).second) out.push_back(std::move(c));
    }
    if (out.empty()) fail(ErrorCode::EmptyResponse, "no captions found in LLM response");
    return out;
}

/// Keyword rules that assign few-shot categories to a free-form prompt.
/// These are heuristics; callers can always pass categories explicitly.
inline std::vector<Category> category_allocation(std::string_view prompt) {
    std::string lower(prompt);
    std::transform(lower.begin(), lower.end(), lower.begin(),
                   [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
    std::vector<std::string> words;
    {
        std::string w;
        for (char c : lower) {
            if (std::isalnum(static_cast<unsigned char>(c)) || c == '-') {
                w.push_back(c);
            } else if (!w.empty()) {
                words.push_back(w);
                w.clear();
            }
        }
        if (!w.empty()) words.push_back(w);
    }
    auto has_word = [&](std::initializer_list<std::string_view> list) {
        return std::any_of(words.begin(), words.end(), [&](const std::string& w) {
            return std::find(list.begin(), list.end(), w) != list.end();
        });
    };
    auto has_phrase = [&](std::initializer_list<std::string_view> list) {
        return std::any_of(list.begin(), list.end(), [&](std::string_view p) {
            return lower.find(p) != std::string::npos;
        });
    };

    std::vector<Category> cats;
    if (prompt.find('\'') != std::string_view::npos || prompt.find('"') != std::string_view::npos ||
        has_word({"says", "saying", "written", "text", "sign", "word", "words", "letters", "reads"}))
        cats.push_back(Category::Text);
    if (has_word({"style", "painting", "art", "sketch", "poster", "cartoon", "drawing", "illustration", "statue",
                  "watercolor", "pencil", "anime", "photorealistic", "oil", "pixel", "render"}))
        cats.push_back(Category::Style);
    const bool numeric = std::any_of(words.begin(), words.end(), [](const std::string& w) {
        return !w.empty() && std::all_of(w.begin(), w.end(), [](unsigned char c) { return std::isdigit(c); });
    });
    const bool counted = numeric || has_word({"one", "two", "three", "four", "five", "six", "seven", "eight", "nine",
                                              "ten", "pair", "several", "couple", "dozen", "single"});
    if (has_phrase({" made of ", " made out of "}) || has_word({"creative", "imaginary", "fantasy", "surreal"}))
        cats.push_back(Category::Creative);
    if (has_word({"red", "orange", "yellow", "green", "blue", "purple", "violet", "pink", "brown", "black", "white",
                  "gray", "grey", "golden", "silver", "colored", "coloured"}))
        cats.push_back(Category::Colors);
    if (has_word({"left", "right", "top", "bottom", "above", "below", "under", "underneath", "beneath", "behind",
                  "beside", "between", "next", "front", "inside", "atop"}))
        cats.push_back(Category::Spatial);
    if (has_word({"forest", "beach", "city", "street", "park", "garden", "desert", "mountain", "mountains", "ocean",
                  "sea", "river", "lake", "sky", "space", "kitchen", "room", "field", "cave", "jungle", "village",
                  "office", "snow"}))
        cats.push_back(Category::Location);
    if (has_word({"and", "with"})) cats.push_back(Category::Composition);
    // Short single-object prompts ("A black colored car") are prone to wrong
    // quantities, so counting examples are added for them too.
    if (counted || (words.size() <= 5 && (lower.starts_with("a ") || lower.starts_with("an "))))
        cats.push_back(Category::Counting);
    if (cats.empty()) cats.push_back(Category::Composition);
    return cats;
}

/// Chat-completion backend. Implementations must be safe to call from
/// several threads when used for concurrent synthesis.
class ChatClient {
public:
    virtual ~ChatClient() = default;
    virtual std::string complete(const SynthRequest& request) = 0;
};

/// Deterministic client that answers from recorded (prompt, response) pairs.
class ReplayChatClient : public ChatClient {
public:
    ReplayChatClient() = default;
    explicit ReplayChatClient(std::map<std::string, std::string> responses) : responses_(std::move(responses)) {}

    void add(std::string prompt, std::string response) { responses_[std::move(prompt)] = std::move(response); }

    std::string complete(const SynthRequest& request) override {
        auto it = responses_.find(request.user_text);
        if (it == responses_.end())
            fail(ErrorCode::LlmClientError, "no recorded response for prompt '" + request.user_text + "'");
        return it->second;
    }

    /// One {"prompt": str, "response": str} object per line.
    static ReplayChatClient load(const std::filesystem::path& path) {
        ReplayChatClient client;
        std::vector<Diagnostic> diags;
        for_each_jsonl(path, diags, [&](std::size_t line, const json& rec) {
            std::string p, r;
            if (!read_string(rec, "prompt", p) || !read_string(rec, "response", r)) {
                diags.push_back({ErrorCode::MalformedRecord, path.string(), line, "needs 'prompt' and 'response'"});
                return;
            }
            client.add(std::move(p), std::move(r));
        });
        if (!diags.empty()) throw IngestError(std::move(diags));
        return client;
    }

private:
    std::map<std::string, std::string> responses_;
};

/// Asks the LLM for contrastive captions of `prompt` and packages them as a
/// contrast set. `max_contrasts` caps how many parsed captions are kept.
inline SynthesizedContrasts synth_llm_contrasts(const PromptRecord& prompt, const FewShotStore& store,
                                                ChatClient& client, std::optional<std::vector<Category>> categories = {},
                                                std::optional<std::size_t> max_contrasts = {},
                                                LlmParams params = {}) {
    auto cats = categories ? *categories : category_allocation(prompt.text);
    auto request = build_llm_request(prompt.text, std::span<const Category>(cats), store, std::move(params));
    auto captions = parse_llm_response(client.complete(request), prompt.text);
    if (max_contrasts && captions.size() > *max_contrasts) captions.resize(*max_contrasts);
    std::vector<PromptRecord> prompts;
    for (std::size_t i = 0; i < captions.size(); ++i)
        prompts.push_back(detail::contrast_record(prompt, prompt.id + "~llm" + std::to_string(i + 1), captions[i]));
    return detail::bundle(prompt, std::move(prompts));
}

inline json prompt_record_to_json(const PromptRecord& p) {
    json j{{"id", p.id}, {"text", p.text}, {"set", to_string(p.set)}, {"object_classes", p.object_classes}};
    j["subcategory"] = p.subcategory ? json(*p.subcategory) : json(nullptr);
    j["count"] = p.count ? json(*p.count) : json(nullptr);
    return j;
}

} // namespace rewardcal
