// Copyright (C) 2026 The rewardcal Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

// Live chat-completion client over HTTP(S). Opt-in: nothing in the library
// talks to the network unless one of these is constructed. HTTPS needs
// CPPHTTPLIB_OPENSSL_SUPPORT and OpenSSL at link time.

#include <cstdlib>
#include <optional>
#include <string>
#include <string_view>

#include <httplib.h>

#include "rewardcal/error.hpp"
#include "rewardcal/jsonl.hpp"
#include "rewardcal/promptsynth.hpp"

namespace rewardcal {

struct LlmEndpoint {
    std::string url;     // e.g. https://api.example.com/v1/chat/completions
    std::string api_key; // sent as a bearer token when non-empty
    std::string model;   // overrides the request's model name when non-empty
    int timeout_seconds = 120;
};

inline constexpr const char* kLlmEndpointEnv = "REWARDCAL_LLM_ENDPOINT";
inline constexpr const char* kLlmApiKeyEnv = "REWARDCAL_LLM_API_KEY";
inline constexpr const char* kLlmModelEnv = "REWARDCAL_LLM_MODEL";

/// Reads the endpoint from the environment; empty when no URL is set.
inline std::optional<LlmEndpoint> llm_endpoint_from_env() {
    auto get = [](const char* name) {
        const char* v = std::getenv(name);
        return v ? std::string(v) : std::string();
    };
    LlmEndpoint e{get(kLlmEndpointEnv), get(kLlmApiKeyEnv), get(kLlmModelEnv)};
    if (e.url.empty()) return std::nullopt;
    return e;
}

class HttpChatClient : public ChatClient {
public:
    explicit HttpChatClient(LlmEndpoint endpoint) : endpoint_(std::move(endpoint)) {
        const auto scheme_end = endpoint_.url.find("://");
        if (scheme_end == std::string::npos) fail(ErrorCode::ConfigError, "LLM endpoint needs a scheme: " + endpoint_.url);
        const auto path_start = endpoint_.url.find('/', scheme_end + 3);
        origin_ = endpoint_.url.substr(0, path_start);
        path_ = path_start == std::string::npos ? "/" : endpoint_.url.substr(path_start);
    }

    std::string complete(const SynthRequest& request) override {
        json body = request.to_chat_json();
        if (!endpoint_.model.empty()) body["model"] = endpoint_.model;

        httplib::Client client(origin_);
        client.set_read_timeout(endpoint_.timeout_seconds, 0);
        client.set_write_timeout(endpoint_.timeout_seconds, 0);
        httplib::Headers headers;
        if (!endpoint_.api_key.empty()) headers.emplace("Authorization", "Bearer " + endpoint_.api_key);
        auto res = client.Post(path_, headers, body.dump(), "application/json");
        if (!res) fail(ErrorCode::LlmClientError, "request to " + endpoint_.url + " failed: " + httplib::to_string(res.error()));
        if (res->status != 200)
            fail(ErrorCode::LlmClientError, "HTTP " + std::to_string(res->status) + " from " + endpoint_.url);

        json reply = json::parse(res->body, nullptr, false);
        if (reply.is_discarded()) fail(ErrorCode::LlmClientError, "response is not JSON");
        try {
            return reply.at("choices").at(0).at("message").at("content").get<std::string>();
        } catch (const json::exception&) {
            fail(ErrorCode::LlmClientError, "response has no choices[0].message.content");
        }
    }

private:
    LlmEndpoint endpoint_;
    std::string origin_;
    std::string path_;
};

} // namespace rewardcal
