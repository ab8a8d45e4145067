// Copyright (C) 2026 The rewardcal Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

// Few-shot failure-case examples used to prompt an LLM for contrastive
// captions, one list per prompt category.

#include <array>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "rewardcal/error.hpp"
#include "rewardcal/jsonl.hpp"

namespace rewardcal {

enum class Category { Text, Style, Composition, Counting, Creative, Location, Colors, Spatial };

inline constexpr std::array<Category, 8> kAllCategories = {
    Category::Text,     Category::Style,    Category::Composition, Category::Counting,
    Category::Creative, Category::Location, Category::Colors,      Category::Spatial};

constexpr std::string_view to_string(Category c) {
    switch (c) {
    case Category::Text: return "text";
    case Category::Style: return "style";
    case Category::Composition: return "composition";
    case Category::Counting: return "counting";
    case Category::Creative: return "creative";
    case Category::Location: return "location";
    case Category::Colors: return "colors";
    case Category::Spatial: return "spatial";
    }
    return "";
}

inline std::optional<Category> parse_category(std::string_view text) {
    for (auto c : kAllCategories)
        if (to_string(c) == text) return c;
    return std::nullopt;
}

struct FewShotExample {
    std::string original_prompt;
    std::vector<std::string> proper_candidates;

    bool operator==(const FewShotExample&) const = default;
};

using FewShotStore = std::map<Category, std::vector<FewShotExample>>;

/// The eight shipped categories with one worked example each.
inline FewShotStore default_few_shot_store() {
    FewShotStore s;
    s[Category::Text] = {{"A sign that says 'Diffusion'.",
                          {"A sign misspelled as 'Difision'.", "A sign containing a bizarre accent 'Difśion'."}}};
    s[Category::Style] = {{"Greek statue of a man tripping over a cat.",
                           {"Greek statue of a man", "Greek statue of two men",
                            "Greek statue of two men tripping over a cat.",
                            "Greek statue of a man tripping over a dog.",
                            "Greek statue of two men tripping over a dog.",
                            "Greek statue of a man tripping over a ball."}}};
    s[Category::Composition] = {{"A red car and a white sheep.",
                                 {"A red car and two white sheep.", "A red car and a herd of sheep.",
                                  "A red car and a dominant white sheep among the gray ones.",
                                  "A red car with two real sheep on the side."}}};
    s[Category::Counting] = {{"Four cars on the street.",
                              {"Two cars on the street.", "Three cars on the street.", "Five cars on the street.",
                               "Six cars on the street."}}};
    s[Category::Creative] = {{"A heart made of chocolate",
                              {"a star made of caramel",
                               "a flower made of marshmallows,",
                               "a diamond made of gummy bears",
                               "a moon made of licorice",
                               "a sun made of jelly beans",
                               "a butterfly made of lollipops",
                               "a crown made of cotton candy",
                               "a rainbow made of skittles",
                               "a cloud made of cotton candy",
                               "a tree made of chocolate-covered pretzels",
                               "a snowflake made of peppermint candies",
                               "a fish made of sour gummies",
                               "a bird made of chocolate-covered almonds",
                               "a car made of chocolate bars",
                               "a house made of chocolate cookies",
                               "a boat made of chocolate-covered strawberries",
                               "an airplane made of chocolate truffles",
                               "a guitar made of chocolate wafer sticks",
                               "a camera made of chocolate coins",
                               "a dinosaur made of chocolate eggs"}}};
    s[Category::Location] = {{"A glowing mushroom in the forest",
                              {"a sparkling flower in the garden",
                               "a luminous firefly in the night sky",
                               "a shimmering starfish in the ocean",
                               "a radiant sunflower in the field",
                               "a glowing jellyfish in the deep sea",
                               "a gleaming diamond in the jewelry store",
                               "a luminescent moon in the night sky",
                               "a glowing firefly in the meadow",
                               "a sparkling gemstone in the cave",
                               "a luminous butterfly in the garden",
                               "a shimmering seashell on the beach",
                               "a radiant rainbow in the sky",
                               "a glowing lantern in the dark",
                               "a luminescent lightning bug in the field",
                               "a sparkling crystal in the cave",
                               "a shimmering waterfall in the forest",
                               "a radiant star in the night sky",
                               "a glowing firefly in the park",
                               "a luminous pearl in the oyster",
                               "a sparkling diamond in the jewelry box"}}};
    s[Category::Colors] = {{"A blue bird and a brown bear.",
                            {"A pair of bears, one blue and the other brown.",
                             "A blue bear and a brown bear, no bird in sight.", "Two bears, both brown, no blue bird.",
                             "Two bears, one brown and the other unexpectedly blue."}}};
    s[Category::Spatial] = {{"An umbrella on top of a spoon.",
                             {"A spoon.", "An umbrella.", "An umbrella on the right of a spoon.",
                              "An umbrella on the left of a spoon.", "An umbrella at the bottom of a spoon.",
                              "Two umbrellas on top of a spoon."}}};
    return s;
}

/// {"<category>": [{"original_prompt": str, "proper_candidates": [str]}], ...}
inline json few_shot_store_to_json(const FewShotStore& store) {
    json j = json::object();
    for (const auto& [cat, examples] : store) {
        json arr = json::array();
        for (const auto& ex : examples)
            arr.push_back({{"original_prompt", ex.original_prompt}, {"proper_candidates", ex.proper_candidates}});
        j[std::string(to_string(cat))] = arr;
    }
    return j;
}

inline FewShotStore few_shot_store_from_json(const json& j) {
    if (!j.is_object()) fail(ErrorCode::ConfigError, "few-shot store must be a JSON object");
    FewShotStore store;
    for (const auto& [name, arr] : j.items()) {
        auto cat = parse_category(name);
        if (!cat) fail(ErrorCode::UnknownCategory, "unknown category '" + name + "'");
        if (!arr.is_array() || arr.empty())
            fail(ErrorCode::ConfigError, "category '" + name + "' needs a non-empty example list");
        auto& examples = store[*cat];
        for (const auto& ex : arr) {
            FewShotExample e;
            if (!ex.is_object() || !read_string(ex, "original_prompt", e.original_prompt))
                fail(ErrorCode::ConfigError, "example in '" + name + "' needs 'original_prompt'");
            auto it = ex.find("proper_candidates");
            if (it == ex.end() || !it->is_array())
                fail(ErrorCode::ConfigError, "example in '" + name + "' needs 'proper_candidates'");
            for (const auto& c : *it) {
                if (!c.is_string()) fail(ErrorCode::ConfigError, "captions must be strings");
                e.proper_candidates.push_back(c.get<std::string>());
            }
            examples.push_back(std::move(e));
        }
    }
    return store;
}

inline FewShotStore load_few_shot_store(const std::filesystem::path& path) {
    auto in = open_input(path);
    json j = json::parse(in, nullptr, false);
    if (j.is_discarded()) fail(ErrorCode::ConfigError, "'" + path.string() + "' is not valid JSON");
    return few_shot_store_from_json(j);
}

} // namespace rewardcal
